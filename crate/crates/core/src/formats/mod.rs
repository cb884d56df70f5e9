//! On-disk encodings.
//!
//! | artifact            | encoding                                               |
//! |---------------------|--------------------------------------------------------|
//! | reference pulses    | `TGIR` little-endian binary                            |
//! | measurement cube    | `TGIM` little-endian binary + JSON provenance trailer  |
//! | scene               | 16-bit PGM height and reflectivity + `key = value` sidecar |
//! | depth estimate      | 16-bit PGM `t_hat`, CSV range and peak, PBM mask, JSON |
//!
//! Byte-level functions take a `name` used only to label errors; the
//! path-based helpers pass the file path.

mod binary;
mod netpbm;
mod text;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use binary::{
    decode_cube, decode_reference, encode_cube, encode_reference, CUBE_MAGIC, FORMAT_VERSION,
    REFERENCE_MAGIC,
};
pub use netpbm::{decode_pbm, decode_pgm16, encode_pbm, encode_pgm16};
pub use text::{decode_csv_grid, decode_key_values, encode_csv_grid, encode_key_values};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::reconstruct::DepthEstimate;
use crate::scene::{MeasurementCube, Scene};
use crate::signal::ReferenceSet;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

pub fn write_reference(path: &Path, reference: &ReferenceSet) -> Result<()> {
    write_file(path, &encode_reference(reference))
}

pub fn read_reference(path: &Path) -> Result<ReferenceSet> {
    decode_reference(&read_file(path)?, &label(path))
}

pub fn write_cube(path: &Path, cube: &MeasurementCube) -> Result<()> {
    write_file(path, &encode_cube(cube)?)
}

pub fn read_cube(path: &Path) -> Result<MeasurementCube> {
    decode_cube(&read_file(path)?, &label(path))
}

/// File names of a scene written under a common stem.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePaths {
    pub height_map: PathBuf,
    pub reflectivity: PathBuf,
    pub sidecar: PathBuf,
}

impl ScenePaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            height_map: dir.join(format!("{stem}_height.pgm")),
            reflectivity: dir.join(format!("{stem}_reflectivity.pgm")),
            sidecar: dir.join(format!("{stem}.scene")),
        }
    }

    pub fn all(&self) -> [&Path; 3] {
        [&self.height_map, &self.reflectivity, &self.sidecar]
    }
}

/// Reflectivity is quantized to `round(r * 65535)`, so values that are not
/// multiples of 1/65535 do not round-trip exactly.
pub fn write_scene(paths: &ScenePaths, scene: &Scene) -> Result<()> {
    let heights = scene.height_map().as_slice();
    if let Some(h) = heights.iter().find(|h| **h > u16::MAX as u32) {
        return Err(Error::InvalidInput(format!(
            "height {h} does not fit a 16-bit PGM"
        )));
    }
    let hm = scene.height_map().map(|h| *h as u16);
    let refl = scene
        .reflectivity()
        .map(|r| (r * u16::MAX as f64).round() as u16);
    write_file(&paths.height_map, &encode_pgm16(&hm))?;
    write_file(&paths.reflectivity, &encode_pgm16(&refl))?;
    let sidecar = encode_key_values(&[
        ("name", scene.name().to_string()),
        ("width", scene.width().to_string()),
        ("height", scene.height().to_string()),
        ("t_min", scene.t_min().to_string()),
        ("shutter_len", scene.shutter_len().to_string()),
        ("tick_seconds", scene.tick_seconds().to_string()),
    ]);
    write_file(&paths.sidecar, sidecar.as_bytes())
}

pub fn read_scene(paths: &ScenePaths) -> Result<Scene> {
    let side_label = label(&paths.sidecar);
    let sidecar = String::from_utf8(read_file(&paths.sidecar)?)
        .map_err(|_| Error::format(&side_label, 0, "sidecar is not UTF-8"))?;
    let kv = decode_key_values(&sidecar, &side_label)?;
    let get = |key: &str| -> Result<&str> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format(&side_label, 0, format!("missing key `{key}`")))
    };
    let parse_u32 = |key: &str| -> Result<u32> {
        get(key)?
            .parse()
            .map_err(|_| Error::format(&side_label, 0, format!("bad value for `{key}`")))
    };
    let t_min = parse_u32("t_min")?;
    let shutter = parse_u32("shutter_len")?;
    let tick: f64 = get("tick_seconds")?
        .parse()
        .map_err(|_| Error::format(&side_label, 0, "bad value for `tick_seconds`"))?;
    let name = get("name").unwrap_or("scene").to_string();

    let hm = decode_pgm16(&read_file(&paths.height_map)?, &label(&paths.height_map))?;
    let refl = decode_pgm16(
        &read_file(&paths.reflectivity)?,
        &label(&paths.reflectivity),
    )?;
    let (w, h) = (parse_u32("width")? as usize, parse_u32("height")? as usize);
    if hm.width() != w || hm.height() != h {
        return Err(Error::format(
            label(&paths.height_map),
            0,
            format!(
                "image is {}x{}, sidecar says {w}x{h}",
                hm.width(),
                hm.height()
            ),
        ));
    }
    let scene = Scene::new(
        name,
        hm.map(|v| *v as u32),
        refl.map(|v| *v as f64 / u16::MAX as f64),
        t_min,
        shutter,
    )?;
    scene.with_tick_seconds(tick)
}

/// Run metadata stored next to a depth estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub width: usize,
    pub height: usize,
    pub tick_seconds: f64,
    pub seed: Option<u64>,
    pub num_pulses: usize,
    pub pulse_len: usize,
    pub dsnr_db: Option<f64>,
    pub rmse_ticks: Option<f64>,
    pub estimated_pixels: usize,
    pub masked_pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthPaths {
    pub t_hat: PathBuf,
    pub range: PathBuf,
    pub peak_corr: PathBuf,
    pub mask: PathBuf,
    pub summary: PathBuf,
}

impl DepthPaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            t_hat: dir.join(format!("{stem}_t_hat.pgm")),
            range: dir.join(format!("{stem}_range.csv")),
            peak_corr: dir.join(format!("{stem}_peak_corr.csv")),
            mask: dir.join(format!("{stem}_mask.pbm")),
            summary: dir.join(format!("{stem}_summary.json")),
        }
    }

    pub fn all(&self) -> [&Path; 5] {
        [
            &self.t_hat,
            &self.range,
            &self.peak_corr,
            &self.mask,
            &self.summary,
        ]
    }
}

/// `t_hat` is stored with 0 for "no estimate".
pub fn write_depth(
    paths: &DepthPaths,
    estimate: &DepthEstimate,
    summary: &DepthSummary,
) -> Result<()> {
    if let Some(t) = estimate
        .t_hat
        .iter()
        .flatten()
        .find(|t| **t > u16::MAX as u32)
    {
        return Err(Error::InvalidInput(format!(
            "t_hat {t} does not fit a 16-bit PGM"
        )));
    }
    let t_hat = estimate.t_hat.map(|t| t.unwrap_or(0) as u16);
    write_file(&paths.t_hat, &encode_pgm16(&t_hat))?;
    write_file(&paths.range, encode_csv_grid(&estimate.range_m).as_bytes())?;
    write_file(
        &paths.peak_corr,
        encode_csv_grid(&estimate.peak_corr).as_bytes(),
    )?;
    write_file(&paths.mask, &encode_pbm(&estimate.mask))?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(&paths.summary, json.as_bytes())
}

pub fn read_depth(paths: &DepthPaths) -> Result<(DepthEstimate, DepthSummary)> {
    let summary_label = label(&paths.summary);
    let summary: DepthSummary = serde_json::from_slice(&read_file(&paths.summary)?)
        .map_err(|e| Error::format(&summary_label, e.column() as u64, e.to_string()))?;
    let t_hat = decode_pgm16(&read_file(&paths.t_hat)?, &label(&paths.t_hat))?;
    let range_text = String::from_utf8(read_file(&paths.range)?)
        .map_err(|_| Error::format(label(&paths.range), 0, "not UTF-8"))?;
    let peak_text = String::from_utf8(read_file(&paths.peak_corr)?)
        .map_err(|_| Error::format(label(&paths.peak_corr), 0, "not UTF-8"))?;
    let range_m = decode_csv_grid(&range_text, &label(&paths.range))?;
    let peak_corr = decode_csv_grid(&peak_text, &label(&paths.peak_corr))?;
    let mask = decode_pbm(&read_file(&paths.mask)?, &label(&paths.mask))?;
    let shapes_agree = t_hat.same_shape(&mask)
        && range_m.same_shape(&mask)
        && peak_corr.same_shape(&mask)
        && mask.width() == summary.width
        && mask.height() == summary.height;
    if !shapes_agree {
        return Err(Error::DimensionMismatch(format!(
            "depth files under {} disagree on image size",
            summary_label
        )));
    }
    let t_hat: Grid<Option<u32>> = t_hat.map(|t| (*t > 0).then_some(*t as u32));
    Ok((
        DepthEstimate {
            t_hat,
            range_m,
            peak_corr,
            mask,
            tick_seconds: summary.tick_seconds,
        },
        summary,
    ))
}
