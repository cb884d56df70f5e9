//! Synthetic 3D scenes and the shutter-gated forward model.
//!
//! A pixel at relative height `h` integrates its reflected pulse for
//! `T = T_min + h` ticks before the shutter closes, so frame `i` records
//! `Y_i(x, y) = r(x, y) * I_int^i(T(x, y)) + n_i(x, y)`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{stream_rng, Domain};
use crate::signal::IntegralTable;

/// Peak heights of the four phantom shapes, in ticks.
pub const PHANTOM_HEIGHTS: [u32; 4] = [200, 400, 600, 800];

/// Integration time of the lowest surface point used by default.
pub const DEFAULT_T_MIN: u32 = 100;

/// Relative height and reflectivity per pixel plus the shutter timing.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    name: String,
    height_map: Grid<u32>,
    reflectivity: Grid<f64>,
    t_min: u32,
    shutter_len: u32,
    tick_seconds: f64,
}

impl Scene {
    pub fn new(
        name: impl Into<String>,
        height_map: Grid<u32>,
        reflectivity: Grid<f64>,
        t_min: u32,
        shutter_len: u32,
    ) -> Result<Self> {
        if !height_map.same_shape(&reflectivity) {
            return Err(Error::DimensionMismatch(format!(
                "height map is {}x{}, reflectivity is {}x{}",
                height_map.width(),
                height_map.height(),
                reflectivity.width(),
                reflectivity.height()
            )));
        }
        if height_map.is_empty() {
            return Err(Error::InvalidDimension("scene has no pixels".into()));
        }
        if let Some(r) = reflectivity
            .iter()
            .find(|r| !(r.is_finite() && (0.0..=1.0).contains(*r)))
        {
            return Err(Error::InvalidInput(format!(
                "reflectivity {r} outside [0, 1]"
            )));
        }
        if t_min == 0 {
            return Err(Error::TimingViolation(
                "T_min must be at least one tick".into(),
            ));
        }
        let max_h = height_map.iter().copied().max().unwrap_or(0);
        check_timing(t_min, max_h, shutter_len)?;
        Ok(Self {
            name: name.into(),
            height_map,
            reflectivity,
            t_min,
            shutter_len,
            tick_seconds: 1.0,
        })
    }

    pub fn with_tick_seconds(mut self, tick_seconds: f64) -> Result<Self> {
        if !(tick_seconds.is_finite() && tick_seconds > 0.0) {
            return Err(Error::InvalidInput(format!(
                "tick_seconds must be positive (got {tick_seconds})"
            )));
        }
        self.tick_seconds = tick_seconds;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.height_map.width()
    }

    pub fn height(&self) -> usize {
        self.height_map.height()
    }

    pub fn height_map(&self) -> &Grid<u32> {
        &self.height_map
    }

    pub fn reflectivity(&self) -> &Grid<f64> {
        &self.reflectivity
    }

    pub fn t_min(&self) -> u32 {
        self.t_min
    }

    pub fn shutter_len(&self) -> u32 {
        self.shutter_len
    }

    pub fn tick_seconds(&self) -> f64 {
        self.tick_seconds
    }

    pub fn max_height(&self) -> u32 {
        self.height_map.iter().copied().max().unwrap_or(0)
    }

    /// Pixels with nonzero reflectivity.
    pub fn support(&self) -> Grid<bool> {
        self.reflectivity.map(|r| *r > 0.0)
    }

    /// Checks that the shutter fits inside pulses of `pulse_len` ticks.
    pub fn check_pulse_len(&self, pulse_len: usize) -> Result<()> {
        if self.shutter_len as usize > pulse_len {
            return Err(Error::TimingViolation(format!(
                "shutter of {} ticks exceeds pulse length P={pulse_len}",
                self.shutter_len
            )));
        }
        Ok(())
    }
}

fn check_timing(t_min: u32, max_height: u32, shutter_len: u32) -> Result<()> {
    let latest = t_min as u64 + max_height as u64;
    if latest > shutter_len as u64 {
        return Err(Error::TimingViolation(format!(
            "T_min {t_min} + max height {max_height} = {latest} exceeds shutter {shutter_len}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Cone,
    LShape,
    Cuboid,
    Cylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Cone,
        ShapeKind::LShape,
        ShapeKind::Cuboid,
        ShapeKind::Cylinder,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ShapeKind::Cone => "cone",
            ShapeKind::LShape => "l_shape",
            ShapeKind::Cuboid => "cuboid",
            ShapeKind::Cylinder => "cylinder",
        }
    }
}

/// Surface profile of the phantom cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConeProfile {
    /// Flat top at the nominal height, like the other three shapes.
    #[default]
    Flat,
    /// Height falls linearly from the apex to zero at the rim.
    Sloped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    pub t_min: u32,
    pub shutter_len: u32,
    /// Multiplies the nominal 200/400/600/800 tick heights.
    pub height_scale: f64,
    pub cone: ConeProfile,
}

impl PhantomParams {
    pub fn new(width: usize, height: usize, t_min: u32, shutter_len: u32) -> Self {
        Self {
            width,
            height,
            t_min,
            shutter_len,
            height_scale: 1.0,
            cone: ConeProfile::Flat,
        }
    }
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self::new(120, 120, DEFAULT_T_MIN, 1200)
    }
}

/// Footprint of one phantom shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeRegion {
    pub kind: ShapeKind,
    pub nominal_height: u32,
    /// Row-major pixel indices.
    pub pixels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub scene: Scene,
    pub shapes: Vec<ShapeRegion>,
}

/// Four-shape phantom at the default proportions.
pub fn make_phantom_scene(
    width: usize,
    height: usize,
    t_min: u32,
    shutter_len: u32,
) -> Result<Phantom> {
    make_phantom_scene_with(&PhantomParams::new(width, height, t_min, shutter_len))
}

/// One shape per quadrant (cone, L, cuboid, cylinder in reading order), each
/// covering roughly 40% of its quadrant, reflectivity 1 on the shapes and 0
/// elsewhere.
pub fn make_phantom_scene_with(params: &PhantomParams) -> Result<Phantom> {
    let (w, h) = (params.width, params.height);
    if w < 16 || h < 16 {
        return Err(Error::InvalidDimension(format!(
            "phantom needs at least 16x16 pixels (got {w}x{h})"
        )));
    }
    if !(params.height_scale.is_finite() && params.height_scale > 0.0) {
        return Err(Error::InvalidInput(format!(
            "height scale must be positive (got {})",
            params.height_scale
        )));
    }
    let heights = PHANTOM_HEIGHTS.map(|v| (v as f64 * params.height_scale).round() as u32);
    check_timing(params.t_min, heights[3], params.shutter_len)?;

    let qw = (w / 2) as f64;
    let qh = (h / 2) as f64;
    let q = qw.min(qh);
    let quadrant_origin = [(0.0, 0.0), (qw, 0.0), (0.0, qh), (qw, qh)];
    let disc_radius = (0.4 * q * q / std::f64::consts::PI).sqrt();
    let square_side = 0.4f64.sqrt() * q;
    // L: arms of thickness 0.4 s inside an s x s box; area 0.64 s^2.
    let l_side = (0.4 / 0.64f64).sqrt() * q;
    let l_arm = 0.4 * l_side;

    let mut height_map = Grid::filled(w, h, 0u32);
    let mut reflectivity = Grid::filled(w, h, 0.0f64);
    let mut shapes: Vec<ShapeRegion> = ShapeKind::ALL
        .iter()
        .zip(heights)
        .map(|(&kind, nominal_height)| ShapeRegion {
            kind,
            nominal_height,
            pixels: Vec::new(),
        })
        .collect();

    for (s, shape) in shapes.iter_mut().enumerate() {
        let (ox, oy) = quadrant_origin[s];
        let cx = ox + qw / 2.0;
        let cy = oy + qh / 2.0;
        for y in 0..h {
            for x in 0..w {
                let px = x as f64 + 0.5 - cx;
                let py = y as f64 + 0.5 - cy;
                let surface = match shape.kind {
                    ShapeKind::Cone | ShapeKind::Cylinder => {
                        let d = (px * px + py * py).sqrt();
                        if d > disc_radius {
                            None
                        } else if shape.kind == ShapeKind::Cone
                            && params.cone == ConeProfile::Sloped
                        {
                            let frac = 1.0 - d / disc_radius;
                            Some((shape.nominal_height as f64 * frac).round() as u32)
                        } else {
                            Some(shape.nominal_height)
                        }
                    }
                    ShapeKind::Cuboid => (px.abs() <= square_side / 2.0
                        && py.abs() <= square_side / 2.0)
                        .then_some(shape.nominal_height),
                    ShapeKind::LShape => {
                        // Box corner at the top-left; vertical arm on the left,
                        // horizontal arm along the bottom.
                        let lx = px + l_side / 2.0;
                        let ly = py + l_side / 2.0;
                        let inside = (0.0..=l_side).contains(&lx) && (0.0..=l_side).contains(&ly);
                        (inside && (lx <= l_arm || ly >= l_side - l_arm))
                            .then_some(shape.nominal_height)
                    }
                };
                if let Some(v) = surface {
                    let idx = height_map.index_of(x, y);
                    height_map[idx] = v;
                    reflectivity[idx] = 1.0;
                    shape.pixels.push(idx);
                }
            }
        }
    }

    let scene = Scene::new(
        "phantom",
        height_map,
        reflectivity,
        params.t_min,
        params.shutter_len,
    )?;
    Ok(Phantom { scene, shapes })
}

/// `1 × n` ramp from height 0 to `max_height`. Every pixel gets a distinct
/// height when `max_height >= n - 1`; otherwise the ramp degrades to a
/// staircase with `max_height + 1` treads.
pub fn make_bar_scene_1d(n: usize, max_height: u32, t_min: u32, shutter_len: u32) -> Result<Scene> {
    let steps = n.min(max_height as usize + 1).max(1);
    make_staircase_scene_1d(n, steps, max_height, t_min, shutter_len)
}

/// `1 × n` staircase of `steps` equal-width treads spanning `0..=max_height`.
pub fn make_staircase_scene_1d(
    n: usize,
    steps: usize,
    max_height: u32,
    t_min: u32,
    shutter_len: u32,
) -> Result<Scene> {
    if n == 0 || steps == 0 || steps > n {
        return Err(Error::InvalidDimension(format!(
            "staircase needs 1 <= steps <= n (got n={n}, steps={steps})"
        )));
    }
    if steps > 1 && (max_height as usize) < steps - 1 {
        return Err(Error::InvalidInput(format!(
            "{steps} distinct steps cannot fit in heights 0..={max_height}"
        )));
    }
    check_timing(t_min, max_height, shutter_len)?;
    let heights: Vec<u32> = (0..n)
        .map(|j| {
            let step = j * steps / n;
            if steps == 1 {
                0
            } else {
                (step as f64 * max_height as f64 / (steps - 1) as f64).round() as u32
            }
        })
        .collect();
    let height_map = Grid::from_vec(n, 1, heights).expect("length matches");
    let reflectivity = Grid::filled(n, 1, 1.0);
    Scene::new("bar1d", height_map, reflectivity, t_min, shutter_len)
}

/// Ground-truth integration time per pixel; `None` where nothing reflects.
pub type IntegrationTimeMap = Grid<Option<u32>>;

pub fn integration_times(scene: &Scene) -> IntegrationTimeMap {
    let t_min = scene.t_min;
    Grid::from_fn(scene.width(), scene.height(), |x, y| {
        (*scene.reflectivity.get(x, y) > 0.0).then(|| t_min + scene.height_map.get(x, y))
    })
}

/// What the DSNR ratio divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsnrConvention {
    /// Mean signal over noise variance.
    #[default]
    Variance,
    /// Mean signal over noise standard deviation.
    Std,
}

/// Noise standard deviation for a DSNR (dB) measured against
/// `max_mean_energy`.
pub fn dsnr_to_sigma(
    dsnr_db: f64,
    max_mean_energy: f64,
    convention: DsnrConvention,
) -> Result<f64> {
    if !(max_mean_energy.is_finite() && max_mean_energy > 0.0) {
        return Err(Error::InvalidInput(format!(
            "max mean energy must be positive (got {max_mean_energy})"
        )));
    }
    if !dsnr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "DSNR {dsnr_db} dB is not finite"
        )));
    }
    let ratio = 10f64.powf(dsnr_db / 10.0);
    Ok(match convention {
        DsnrConvention::Variance => (max_mean_energy / ratio).sqrt(),
        DsnrConvention::Std => max_mean_energy / ratio,
    })
}

/// Mean over pulses of the energy collected by the slowest object pixel,
/// times the largest reflectivity.
pub fn max_mean_energy(scene: &Scene, table: &IntegralTable) -> Result<f64> {
    scene.check_pulse_len(table.pulse_len())?;
    let times = integration_times(scene);
    let t_max = times.iter().flatten().copied().max();
    let r_max = scene.reflectivity.iter().copied().fold(0.0, f64::max);
    match t_max {
        Some(t) => Ok(table.column_mean(t as usize) * r_max),
        None => Ok(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseLevel {
    Noiseless,
    Dsnr { db: f64, convention: DsnrConvention },
    Sigma { sigma: f64 },
}

/// Additive white Gaussian noise description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            level: NoiseLevel::Noiseless,
            seed: 0,
        }
    }

    pub fn dsnr(db: f64, seed: u64) -> Self {
        Self::dsnr_with(db, DsnrConvention::Variance, seed)
    }

    pub fn dsnr_with(db: f64, convention: DsnrConvention, seed: u64) -> Self {
        Self {
            level: NoiseLevel::Dsnr { db, convention },
            seed,
        }
    }

    pub fn sigma(sigma: f64, seed: u64) -> Self {
        Self {
            level: NoiseLevel::Sigma { sigma },
            seed,
        }
    }

    /// Resolves the noise standard deviation for a given reference energy.
    pub fn resolve_sigma(&self, max_mean_energy: f64) -> Result<f64> {
        match self.level {
            NoiseLevel::Noiseless => Ok(0.0),
            NoiseLevel::Sigma { sigma } if sigma.is_finite() && sigma >= 0.0 => Ok(sigma),
            NoiseLevel::Sigma { sigma } => Err(Error::InvalidInput(format!(
                "noise sigma must be nonnegative (got {sigma})"
            ))),
            NoiseLevel::Dsnr { db, convention } => dsnr_to_sigma(db, max_mean_energy, convention),
        }
    }
}

/// Where a cube came from, stored alongside it on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: String,
    pub reference_seed: Option<u64>,
    pub noise: NoiseSpec,
    pub noise_sigma: f64,
}

/// `K` received frames of `H × W` energies, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementCube {
    num_frames: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
    provenance: Provenance,
}

impl MeasurementCube {
    pub fn from_parts(
        num_frames: usize,
        width: usize,
        height: usize,
        data: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if num_frames == 0 || width == 0 || height == 0 {
            return Err(Error::InvalidDimension(format!(
                "cube dimensions K={num_frames}, {width}x{height} must be positive"
            )));
        }
        if data.len() != num_frames * width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for K={num_frames}, {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            num_frames,
            width,
            height,
            data,
            provenance,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels_per_frame(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let n = self.pixels_per_frame();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame_image(&self, i: usize) -> Grid<f64> {
        Grid::from_vec(self.width, self.height, self.frame(i).to_vec()).expect("frame size")
    }

    /// Energy of pixel `idx` (row-major) in every frame.
    pub fn pixel_series(&self, idx: usize) -> Vec<f64> {
        let n = self.pixels_per_frame();
        (0..self.num_frames)
            .map(|i| self.data[i * n + idx])
            .collect()
    }
}

struct ForwardModel {
    // (window length, reflectivity) per pixel; reflectivity 0 contributes nothing.
    pixels: Vec<(usize, f64)>,
    sigma: f64,
    seed: u64,
}

impl ForwardModel {
    fn new(scene: &Scene, table: &IntegralTable, noise: &NoiseSpec) -> Result<Self> {
        if table.num_pulses() == 0 {
            return Err(Error::InsufficientSamples {
                required: 1,
                actual: 0,
            });
        }
        scene.check_pulse_len(table.pulse_len())?;
        let energy = max_mean_energy(scene, table)?;
        let sigma = noise.resolve_sigma(energy)?;
        let t_min = scene.t_min as usize;
        let pixels = scene
            .height_map
            .iter()
            .zip(scene.reflectivity.iter())
            .map(|(h, r)| (t_min + *h as usize, *r))
            .collect();
        Ok(Self {
            pixels,
            sigma,
            seed: noise.seed,
        })
    }

    fn render_frame(&self, table: &IntegralTable, frame: usize, out: &mut [f64]) {
        let row = table.row(frame);
        for (o, &(t, r)) in out.iter_mut().zip(&self.pixels) {
            *o = if r > 0.0 { r * row[t - 1] } else { 0.0 };
        }
        if self.sigma > 0.0 {
            let mut rng = stream_rng(self.seed, Domain::Noise, frame as u64);
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *o += self.sigma * z;
            }
        }
    }
}

/// Renders all `K` frames. Frame `i` uses reference pulse `i` and its own
/// noise stream, so the cube is identical for any worker count.
pub fn simulate_capture(
    scene: &Scene,
    table: &IntegralTable,
    noise: &NoiseSpec,
) -> Result<MeasurementCube> {
    let model = ForwardModel::new(scene, table, noise)?;
    let n = scene.width() * scene.height();
    let k = table.num_pulses();
    let mut data = vec![0.0; k * n];
    data.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, frame)| model.render_frame(table, i, frame));
    MeasurementCube::from_parts(
        k,
        scene.width(),
        scene.height(),
        data,
        Provenance {
            scene_id: scene.name.clone(),
            reference_seed: None,
            noise: *noise,
            noise_sigma: model.sigma,
        },
    )
}

/// Same as [`simulate_capture`] but records the reference seed.
pub fn simulate_capture_seeded(
    scene: &Scene,
    table: &IntegralTable,
    noise: &NoiseSpec,
    reference_seed: Option<u64>,
) -> Result<MeasurementCube> {
    let mut cube = simulate_capture(scene, table, noise)?;
    cube.provenance.reference_seed = reference_seed;
    Ok(cube)
}

/// The single-shot projection image: the first frame of the capture.
pub fn simulate_single_shot_2d(
    scene: &Scene,
    table: &IntegralTable,
    noise: &NoiseSpec,
) -> Result<Grid<f64>> {
    let model = ForwardModel::new(scene, table, noise)?;
    let mut image = Grid::filled(scene.width(), scene.height(), 0.0);
    model.render_frame(table, 0, image.as_mut_slice());
    Ok(image)
}
