//! Depth recovery by normalized correlation against the integral table.
//!
//! For a pixel series `y` (one energy per frame) and every window `t'`, the
//! profile value is the Pearson correlation over frames between `y` and the
//! column `I_int(t')`. The estimated integration time is the window with the
//! largest correlation; range follows from `R = c T / 2`.
//!
//! The kernel evaluates a whole tile of pixels at once as a
//! `(tile × K) · (K × P)` product of centered pixel series against the raw
//! integral table, then applies the column means and norms held by the
//! [`IntegralTable`]. Tiles have a fixed size, so the result for a pixel never
//! depends on how many workers ran or which tile it landed in.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scene::MeasurementCube;
use crate::signal::IntegralTable;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Pixels per kernel tile.
pub const PIXEL_TILE: usize = 64;

/// Correlation against every window `t' = 1..=P`. Undefined entries (a
/// zero-variance series or column) are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationProfile {
    pixel: Option<(usize, usize)>,
    values: Vec<f64>,
}

impl CorrelationProfile {
    /// `(x, y)` of the pixel this profile came from, when known.
    pub fn pixel(&self) -> Option<(usize, usize)> {
        self.pixel
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Correlation at window `t` (1-based), `None` if undefined.
    pub fn value(&self, t: usize) -> Option<f64> {
        let v = self.values[t - 1];
        (!v.is_nan()).then_some(v)
    }

    /// Raw values indexed from `t' = 1`; NaN marks undefined entries.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            pixel: None,
            values,
        }
    }

    pub fn is_all_undefined(&self) -> bool {
        self.values.iter().all(|v| v.is_nan())
    }
}

/// Centers `y` into `out`. Returns `(sum of centered values, centered norm)`;
/// both are exactly zero for a constant series.
fn center_series(y: &[f64], out: &mut [f64]) -> (f64, f64) {
    let first = y[0];
    if y.iter().all(|v| *v == first) {
        out.fill(0.0);
        return (0.0, 0.0);
    }
    let k = y.len() as f64;
    let mut mean = y.iter().sum::<f64>() / k;
    mean += y.iter().map(|v| v - mean).sum::<f64>() / k;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for (o, v) in out.iter_mut().zip(y) {
        let d = v - mean;
        *o = d;
        sum += d;
        sq += d * d;
    }
    (sum, sq.sqrt())
}

/// Centered pixel series for one tile, packed row-major `rows × K`.
struct PackedTile {
    k: usize,
    rows: usize,
    centered: Vec<f64>,
    sums: Vec<f64>,
    norms: Vec<f64>,
}

impl PackedTile {
    fn new(k: usize, rows: usize) -> Self {
        Self {
            k,
            rows,
            centered: vec![0.0; rows * k],
            sums: vec![0.0; rows],
            norms: vec![0.0; rows],
        }
    }

    /// `raw` holds the uncentered series, row-major `rows × K`.
    fn from_raw(k: usize, rows: usize, raw: &[f64]) -> Self {
        let mut tile = Self::new(k, rows);
        for r in 0..rows {
            let (s, n) = center_series(
                &raw[r * k..(r + 1) * k],
                &mut tile.centered[r * k..(r + 1) * k],
            );
            tile.sums[r] = s;
            tile.norms[r] = n;
        }
        tile
    }
}

/// Writes correlation profiles for every row of `tile` into `out`
/// (`rows × P`, row-major).
fn correlate_tile(tile: &PackedTile, table: &IntegralTable, out: &mut [f64]) {
    let k = tile.k;
    let p = table.pulse_len();
    let m = tile.rows;
    debug_assert_eq!(k, table.num_pulses());
    debug_assert_eq!(out.len(), m * p);

    // out = centered (m × K) · integrals (K × P)
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            p,
            1.0,
            tile.centered.as_ptr(),
            k as isize,
            1,
            table.integrals().as_ptr(),
            p as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            p as isize,
            1,
        );
    }

    let means = table.column_means();
    let col_norms = table.column_center_norms();
    for r in 0..m {
        let row = &mut out[r * p..(r + 1) * p];
        let (sum, norm) = (tile.sums[r], tile.norms[r]);
        for t in 0..p {
            let denom = norm * col_norms[t];
            row[t] = if denom > 0.0 {
                // Σ Δy (I - Ī) = Σ Δy I - Ī Σ Δy
                let c = (row[t] - sum * means[t]) / denom;
                debug_assert!(c.abs() <= 1.0 + 1e-9, "correlation {c} out of range");
                c.clamp(-1.0, 1.0)
            } else {
                f64::NAN
            };
        }
    }
}

fn check_series(len: usize, table: &IntegralTable) -> Result<()> {
    if len < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            actual: len,
        });
    }
    if len != table.num_pulses() {
        return Err(Error::DimensionMismatch(format!(
            "series has {len} samples, table has K={}",
            table.num_pulses()
        )));
    }
    Ok(())
}

/// Correlation profile of one pixel series against every window.
pub fn correlation_profile(y: &[f64], table: &IntegralTable) -> Result<CorrelationProfile> {
    check_series(y.len(), table)?;
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("series contains {v}")));
    }
    let tile = PackedTile::from_raw(y.len(), 1, y);
    let mut values = vec![0.0; table.pulse_len()];
    correlate_tile(&tile, table, &mut values);
    Ok(CorrelationProfile {
        pixel: None,
        values,
    })
}

/// Smallest window attaining the largest defined correlation, and that value.
pub fn estimate_integration_time(profile: &CorrelationProfile) -> Result<(u32, f64)> {
    argmax_defined(profile.values()).ok_or(Error::NoEstimate)
}

fn argmax_defined(values: &[f64]) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i as u32 + 1, v));
        }
    }
    best
}

/// Per-pixel depth recovered from a measurement cube.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthEstimate {
    /// Estimated integration time in ticks; `None` off the mask or where no
    /// correlation was defined.
    pub t_hat: Grid<Option<u32>>,
    /// `c · tick_seconds · t_hat / 2`, meters.
    pub range_m: Grid<Option<f64>>,
    pub peak_corr: Grid<Option<f64>>,
    pub mask: Grid<bool>,
    pub tick_seconds: f64,
}

impl DepthEstimate {
    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn estimated_pixels(&self) -> usize {
        self.t_hat.iter().flatten().count()
    }

    /// Masked-in pixels for which every correlation was undefined.
    pub fn failed_pixels(&self) -> Vec<usize> {
        self.mask
            .iter()
            .zip(self.t_hat.iter())
            .enumerate()
            .filter(|(_, (m, t))| **m && t.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_cube(cube: &MeasurementCube, table: &IntegralTable) -> Result<()> {
    if cube.num_frames() != table.num_pulses() {
        return Err(Error::DimensionMismatch(format!(
            "cube has K={} frames, table has K={}",
            cube.num_frames(),
            table.num_pulses()
        )));
    }
    check_series(cube.num_frames(), table)
}

fn gather_tile(cube: &MeasurementCube, pixels: &[usize]) -> PackedTile {
    let k = cube.num_frames();
    let rows = pixels.len();
    let mut raw = vec![0.0; rows * k];
    for i in 0..k {
        let frame = cube.frame(i);
        for (r, &idx) in pixels.iter().enumerate() {
            raw[r * k + i] = frame[idx];
        }
    }
    PackedTile::from_raw(k, rows, &raw)
}

/// Profiles for selected pixels (row-major indices) of a cube, computed with
/// the tiled kernel.
pub fn correlation_profiles(
    cube: &MeasurementCube,
    table: &IntegralTable,
    pixels: &[usize],
) -> Result<Vec<CorrelationProfile>> {
    check_cube(cube, table)?;
    let n = cube.pixels_per_frame();
    if let Some(bad) = pixels.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidInput(format!(
            "pixel index {bad} out of range"
        )));
    }
    let p = table.pulse_len();
    let w = cube.width();
    let tiles: Vec<Vec<CorrelationProfile>> = pixels
        .par_chunks(PIXEL_TILE)
        .map(|chunk| {
            let tile = gather_tile(cube, chunk);
            let mut out = vec![0.0; chunk.len() * p];
            correlate_tile(&tile, table, &mut out);
            chunk
                .iter()
                .zip(out.chunks_exact(p))
                .map(|(&idx, values)| CorrelationProfile {
                    pixel: Some((idx % w, idx / w)),
                    values: values.to_vec(),
                })
                .collect()
        })
        .collect();
    Ok(tiles.into_iter().flatten().collect())
}

/// Runs the correlation estimator on every masked-in pixel.
pub fn reconstruct_depth_map(
    cube: &MeasurementCube,
    table: &IntegralTable,
    mask: &Grid<bool>,
) -> Result<DepthEstimate> {
    if mask.width() != cube.width() || mask.height() != cube.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, cube frames are {}x{}",
            mask.width(),
            mask.height(),
            cube.width(),
            cube.height()
        )));
    }
    check_cube(cube, table)?;

    let pixels: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let p = table.pulse_len();
    let estimates: Vec<Option<(u32, f64)>> = pixels
        .par_chunks(PIXEL_TILE)
        .map(|chunk| {
            let tile = gather_tile(cube, chunk);
            let mut out = vec![0.0; chunk.len() * p];
            correlate_tile(&tile, table, &mut out);
            out.chunks_exact(p).map(argmax_defined).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let (w, h) = (cube.width(), cube.height());
    let tick = table.tick_seconds();
    let mut t_hat = Grid::filled(w, h, None);
    let mut range_m = Grid::filled(w, h, None);
    let mut peak_corr = Grid::filled(w, h, None);
    for (&idx, est) in pixels.iter().zip(estimates) {
        if let Some((t, c)) = est {
            t_hat[idx] = Some(t);
            range_m[idx] = Some(range_from_ticks(t as f64, tick));
            peak_corr[idx] = Some(c);
        }
    }
    Ok(DepthEstimate {
        t_hat,
        range_m,
        peak_corr,
        mask: mask.clone(),
        tick_seconds: tick,
    })
}

/// Threshold rule for the single-shot support mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    /// A pixel is kept when its value exceeds `fraction · max(image)`.
    pub fraction: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self { fraction: 0.3 }
    }
}

/// Object support from a single-shot 2D image.
pub fn mask_from_2d(image: &Grid<f64>, policy: &MaskPolicy) -> Result<Grid<bool>> {
    if !(policy.fraction.is_finite() && (0.0..=1.0).contains(&policy.fraction)) {
        return Err(Error::InvalidInput(format!(
            "mask fraction {} outside [0, 1]",
            policy.fraction
        )));
    }
    if let Some(v) = image.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("image contains {v}")));
    }
    let max = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Ok(image.map(|_| false));
    }
    let threshold = policy.fraction * max;
    Ok(image.map(|v| *v > threshold))
}

fn range_from_ticks(t: f64, tick_seconds: f64) -> f64 {
    SPEED_OF_LIGHT * tick_seconds * t / 2.0
}

/// Round-trip range in meters for an integration time in ticks.
pub fn time_to_range(t_hat: f64, tick_seconds: f64) -> Result<f64> {
    if !(t_hat.is_finite() && t_hat >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "integration time must be nonnegative (got {t_hat})"
        )));
    }
    if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tick_seconds must be positive (got {tick_seconds})"
        )));
    }
    Ok(range_from_ticks(t_hat, tick_seconds))
}
