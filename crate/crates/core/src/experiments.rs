//! End-to-end simulation runs and parameter sweeps.
//!
//! Every run follows the same pipeline: generate reference pulses, integrate
//! them, render the capture and the single-shot image, derive the support
//! mask, reconstruct, and score against the scene's ground truth. Quality is
//! the RMSE of the recovered integration time in ticks over object pixels.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::reconstruct::{mask_from_2d, reconstruct_depth_map, DepthEstimate, MaskPolicy};
use crate::scene::{
    integration_times, make_bar_scene_1d, make_phantom_scene_with, simulate_capture_seeded,
    simulate_single_shot_2d, DsnrConvention, IntegrationTimeMap, NoiseSpec, Phantom, PhantomParams,
    Scene, ShapeKind, DEFAULT_T_MIN,
};
use crate::signal::{build_integral_table, generate_reference};

/// Root-mean-square error in ticks over pixels that are masked in and carry
/// ground truth.
pub fn rmse(
    estimated: &Grid<Option<u32>>,
    truth: &IntegrationTimeMap,
    mask: &Grid<bool>,
) -> Result<f64> {
    if !estimated.same_shape(truth) || !estimated.same_shape(mask) {
        return Err(Error::DimensionMismatch(
            "estimate, truth and mask must share dimensions".into(),
        ));
    }
    let mut count = 0usize;
    let mut sq = 0.0;
    for idx in 0..mask.len() {
        let Some(t) = truth[idx] else { continue };
        if !mask[idx] {
            continue;
        }
        let Some(e) = estimated[idx] else {
            return Err(Error::UndefinedMetric(format!(
                "pixel {idx} is masked in but has no estimate"
            )));
        };
        let d = e as f64 - t as f64;
        sq += d * d;
        count += 1;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(
            "mask selects no object pixel".into(),
        ));
    }
    Ok((sq / count as f64).sqrt())
}

/// Where the reconstruction mask comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSource {
    /// Threshold the simulated single-shot image.
    SingleShot(MaskPolicy),
    /// Use the scene's true support. For scenes with no background to filter.
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub num_pulses: usize,
    pub pulse_len: usize,
    pub tick_seconds: f64,
    pub reference_seed: u64,
    pub noise: NoiseSpec,
    pub mask: MaskSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub reference_s: f64,
    pub capture_s: f64,
    pub reconstruct_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub truth: IntegrationTimeMap,
    pub single_shot: Grid<f64>,
    pub estimate: DepthEstimate,
    pub rmse: f64,
    pub noise_sigma: f64,
    pub timings: StageTimings,
}

/// Simulates and reconstructs one scene. The cube is dropped before
/// returning; use the [`crate::scene`] functions directly to keep it.
pub fn run_pipeline(scene: &Scene, config: &PipelineConfig) -> Result<PipelineRun> {
    let start = Instant::now();
    let reference = generate_reference(
        config.num_pulses,
        config.pulse_len,
        config.reference_seed,
        config.tick_seconds,
    )?;
    let table = build_integral_table(&reference);
    drop(reference);
    let reference_s = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let cube = simulate_capture_seeded(scene, &table, &config.noise, Some(config.reference_seed))?;
    let single_shot = simulate_single_shot_2d(scene, &table, &config.noise)?;
    let noise_sigma = cube.provenance().noise_sigma;
    let capture_s = t.elapsed().as_secs_f64();

    let mask = match config.mask {
        MaskSource::SingleShot(policy) => mask_from_2d(&single_shot, &policy)?,
        MaskSource::Truth => scene.support(),
    };
    let t = Instant::now();
    let estimate = reconstruct_depth_map(&cube, &table, &mask)?;
    let reconstruct_s = t.elapsed().as_secs_f64();
    drop(cube);

    let truth = integration_times(scene);
    let rmse = rmse(&estimate.t_hat, &truth, &estimate.mask)?;
    Ok(PipelineRun {
        truth,
        single_shot,
        estimate,
        rmse,
        noise_sigma,
        timings: StageTimings {
            reference_s,
            capture_s,
            reconstruct_s,
            total_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Median of the values, averaging the middle pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomExperiment {
    pub phantom: PhantomParams,
    pub num_pulses: usize,
    pub pulse_len: usize,
    /// `None` renders a noise-free capture.
    pub dsnr_db: Option<f64>,
    pub convention: DsnrConvention,
    pub seed: u64,
    pub mask_policy: MaskPolicy,
    pub tick_seconds: f64,
}

impl Default for PhantomExperiment {
    fn default() -> Self {
        Self {
            phantom: PhantomParams::default(),
            num_pulses: 6000,
            pulse_len: 1200,
            dsnr_db: Some(15.0),
            convention: DsnrConvention::Variance,
            seed: 1,
            mask_policy: MaskPolicy::default(),
            tick_seconds: 1.0,
        }
    }
}

/// Reconstructed height statistics for one phantom shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSummary {
    pub kind: ShapeKind,
    pub nominal_height: u32,
    pub footprint_pixels: usize,
    pub estimated_pixels: usize,
    /// Median of `t_hat - T_min` over the shape's estimated pixels.
    pub median_height: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PhantomRun {
    pub phantom: Phantom,
    pub run: PipelineRun,
    pub shapes: Vec<ShapeSummary>,
    /// Background pixels that passed the mask and were estimated anyway.
    pub background_estimates: usize,
}

pub fn run_phantom_experiment(exp: &PhantomExperiment) -> Result<PhantomRun> {
    let phantom = make_phantom_scene_with(&exp.phantom)?;
    let scene = phantom.scene.clone().with_tick_seconds(exp.tick_seconds)?;
    let noise = match exp.dsnr_db {
        Some(db) => NoiseSpec::dsnr_with(db, exp.convention, exp.seed),
        None => NoiseSpec::noiseless(),
    };
    let config = PipelineConfig {
        num_pulses: exp.num_pulses,
        pulse_len: exp.pulse_len,
        tick_seconds: exp.tick_seconds,
        reference_seed: exp.seed,
        noise,
        mask: MaskSource::SingleShot(exp.mask_policy),
    };
    let run = run_pipeline(&scene, &config)?;

    let t_min = scene.t_min() as f64;
    let shapes = phantom
        .shapes
        .iter()
        .map(|shape| {
            let heights: Vec<f64> = shape
                .pixels
                .iter()
                .filter_map(|&i| run.estimate.t_hat[i])
                .map(|t| t as f64 - t_min)
                .collect();
            ShapeSummary {
                kind: shape.kind,
                nominal_height: shape.nominal_height,
                footprint_pixels: shape.pixels.len(),
                estimated_pixels: heights.len(),
                median_height: median(&heights),
            }
        })
        .collect();
    let background_estimates = run
        .truth
        .iter()
        .zip(run.estimate.t_hat.iter())
        .filter(|(truth, est)| truth.is_none() && est.is_some())
        .count();
    Ok(PhantomRun {
        phantom,
        run,
        shapes,
        background_estimates,
    })
}

/// Parameters of the default 1D test object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarParams {
    pub pixels: usize,
    pub max_height: u32,
    pub t_min: u32,
    pub shutter_len: u32,
}

impl Default for BarParams {
    fn default() -> Self {
        Self {
            pixels: 101,
            max_height: 800,
            t_min: DEFAULT_T_MIN,
            shutter_len: 1200,
        }
    }
}

impl BarParams {
    pub fn build(&self) -> Result<Scene> {
        make_bar_scene_1d(self.pixels, self.max_height, self.t_min, self.shutter_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    DsnrDb,
    NumMeasurements,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::DsnrDb => "dsnr_db",
            SweepVariable::NumMeasurements => "num_measurements",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    /// K when sweeping DSNR.
    pub num_pulses: usize,
    /// DSNR when sweeping K.
    pub dsnr_db: f64,
    pub convention: DsnrConvention,
    pub seeds: Vec<u64>,
    pub bar: BarParams,
    pub pulse_len: usize,
    pub tick_seconds: f64,
}

impl SweepSpec {
    /// DSNR 0..20 dB at K = 6000 over the 1D bar.
    pub fn dsnr_default() -> Self {
        Self {
            variable: SweepVariable::DsnrDb,
            grid: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            num_pulses: 6000,
            dsnr_db: 10.0,
            convention: DsnrConvention::Variance,
            seeds: (1..=5).collect(),
            bar: BarParams::default(),
            pulse_len: 1200,
            tick_seconds: 1.0,
        }
    }

    /// K from 200 to 32000 at 10 dB over the 1D bar.
    pub fn measurements_default() -> Self {
        Self {
            variable: SweepVariable::NumMeasurements,
            grid: vec![200.0, 600.0, 2000.0, 8000.0, 32000.0],
            ..Self::dsnr_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "sweep grid has non-finite values".into(),
            ));
        }
        if !self.grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "sweep grid must be strictly increasing".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("sweep needs at least one seed".into()));
        }
        if self.variable == SweepVariable::NumMeasurements
            && self.grid.iter().any(|v| *v < 2.0 || v.fract() != 0.0)
        {
            return Err(Error::InvalidInput(
                "measurement counts must be integers >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub rmse: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub runs: Vec<SeedRun>,
    pub median_rmse: f64,
    pub wallclock_s: f64,
}

impl SweepPoint {
    /// Max minus min RMSE across seeds.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self
            .runs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.rmse), hi.max(r.rmse))
            });
        hi - lo
    }
}

/// A grid step along which median RMSE went up.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendInversion {
    pub from: f64,
    pub to: f64,
    pub increase: f64,
    pub spread: f64,
}

impl TrendInversion {
    /// Inversions no larger than the cross-seed spread are noise, not a
    /// broken trend.
    pub fn within_spread(&self) -> bool {
        self.increase <= self.spread
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn medians(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.median_rmse).collect()
    }

    pub fn point(&self, value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value)
    }

    /// Steps where the median RMSE increased along the grid.
    pub fn inversions(&self) -> Vec<TrendInversion> {
        self.points
            .windows(2)
            .filter(|w| w[1].median_rmse > w[0].median_rmse)
            .map(|w| TrendInversion {
                from: w[0].value,
                to: w[1].value,
                increase: w[1].median_rmse - w[0].median_rmse,
                spread: w[0].spread().max(w[1].spread()),
            })
            .collect()
    }

    /// `variable,value,seed,rmse_ticks,wallclock_s`, one row per point and
    /// seed. With `include_timing = false` the wallclock column is left
    /// empty, which makes the output reproducible byte for byte.
    pub fn to_csv(&self, include_timing: bool) -> String {
        let mut out = String::from("variable,value,seed,rmse_ticks,wallclock_s\n");
        for p in &self.points {
            for r in &p.runs {
                let timing = if include_timing {
                    format!("{:.6}", r.wallclock_s)
                } else {
                    String::new()
                };
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.variable.name(),
                    p.value,
                    r.seed,
                    r.rmse,
                    timing
                ));
            }
        }
        out
    }
}

fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let scene = spec.bar.build()?.with_tick_seconds(spec.tick_seconds)?;
    let mut points = Vec::with_capacity(spec.grid.len());
    for &value in &spec.grid {
        let mut runs = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            let (k, db) = match spec.variable {
                SweepVariable::DsnrDb => (spec.num_pulses, value),
                SweepVariable::NumMeasurements => (value as usize, spec.dsnr_db),
            };
            let config = PipelineConfig {
                num_pulses: k,
                pulse_len: spec.pulse_len,
                tick_seconds: spec.tick_seconds,
                reference_seed: seed,
                noise: NoiseSpec::dsnr_with(db, spec.convention, seed),
                mask: MaskSource::Truth,
            };
            let run = run_pipeline(&scene, &config)?;
            runs.push(SeedRun {
                seed,
                rmse: run.rmse,
                wallclock_s: run.timings.total_s,
            });
        }
        let rmses: Vec<f64> = runs.iter().map(|r| r.rmse).collect();
        points.push(SweepPoint {
            value,
            median_rmse: median(&rmses).expect("at least one seed"),
            wallclock_s: runs.iter().map(|r| r.wallclock_s).sum(),
            runs,
        });
    }
    Ok(SweepResult {
        variable: spec.variable,
        points,
    })
}

/// RMSE against DSNR at fixed K.
pub fn sweep_dsnr(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.variable != SweepVariable::DsnrDb {
        return Err(Error::InvalidInput(
            "sweep_dsnr needs variable = dsnr_db".into(),
        ));
    }
    run_sweep(spec)
}

/// RMSE against the number of measurements at fixed DSNR.
pub fn sweep_measurements(spec: &SweepSpec) -> Result<SweepResult> {
    if spec.variable != SweepVariable::NumMeasurements {
        return Err(Error::InvalidInput(
            "sweep_measurements needs variable = num_measurements".into(),
        ));
    }
    run_sweep(spec)
}
