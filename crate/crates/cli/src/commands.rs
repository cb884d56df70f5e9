//! One function per subcommand. Each writes its artifacts and a manifest
//! under the output directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use tgi_core::experiments::{
    rmse, run_phantom_experiment, run_pipeline, sweep_dsnr, sweep_measurements, MaskSource,
    PhantomExperiment, PipelineConfig, PipelineRun, SweepResult,
};
use tgi_core::formats::{
    read_cube, read_reference, read_scene, write_cube, write_depth, write_reference, write_scene,
    DepthPaths, DepthSummary, ScenePaths,
};
use tgi_core::reconstruct::{mask_from_2d, reconstruct_depth_map, DepthEstimate, MaskPolicy};
use tgi_core::scene::{integration_times, simulate_capture_seeded, NoiseLevel, NoiseSpec, Scene};
use tgi_core::signal::{build_integral_table, generate_reference};

use crate::config::{CommandKind, MaskMode, RunConfig, SceneKind};
use crate::manifest::{emit_manifest, manifest_path, write_manifest, Seeds};
use crate::CliError;

pub const REFERENCE_FILE: &str = "reference.tgir";
pub const CUBE_FILE: &str = "cube.tgim";
pub const SCENE_STEM: &str = "scene";
pub const DEPTH_STEM: &str = "depth";

/// What a command did, for the terminal.
#[derive(Debug, Clone)]
pub struct Report {
    pub lines: Vec<String>,
    pub manifest_path: PathBuf,
}

/// Runs the configured command on a pool of `config.workers` threads.
pub fn execute(config: &RunConfig) -> Result<Report, CliError> {
    fs::create_dir_all(&config.out_dir).map_err(|e| tgi_core::Error::Io {
        path: config.out_dir.clone(),
        source: e,
    })?;
    tgi_core::with_workers(config.workers, || match config.command {
        CommandKind::Scene => scene(config),
        CommandKind::Simulate => simulate(config),
        CommandKind::Reconstruct => reconstruct(config),
        CommandKind::Run => run(config),
        CommandKind::SweepDsnr | CommandKind::SweepK => sweep(config),
    })?
}

fn noise_spec(config: &RunConfig) -> NoiseSpec {
    match config.dsnr_db {
        Some(db) => NoiseSpec::dsnr_with(db, config.convention, config.seed),
        None => NoiseSpec::noiseless(),
    }
}

fn single_seeds(config: &RunConfig) -> Seeds {
    Seeds {
        reference: vec![config.seed],
        noise: config.dsnr_db.map(|_| config.seed).into_iter().collect(),
    }
}

fn finish(
    config: &RunConfig,
    seeds: Seeds,
    metrics: Value,
    inputs: &[PathBuf],
    files: &[PathBuf],
    wallclock: Value,
    lines: Vec<String>,
) -> Result<Report, CliError> {
    let manifest = emit_manifest(config, seeds, metrics, inputs, files, wallclock)?;
    let path = manifest_path(config);
    write_manifest(&path, &manifest)?;
    Ok(Report {
        lines,
        manifest_path: path,
    })
}

fn write_scene_files(config: &RunConfig, scene: &Scene) -> Result<Vec<PathBuf>, CliError> {
    let paths = ScenePaths::new(&config.out_dir, SCENE_STEM);
    write_scene(&paths, scene)?;
    Ok(paths.all().iter().map(|p| p.to_path_buf()).collect())
}

fn scene(config: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let scene = config.build_scene()?;
    let files = write_scene_files(config, &scene)?;
    let object_pixels = scene.support().iter().filter(|s| **s).count();
    finish(
        config,
        Seeds {
            reference: vec![],
            noise: vec![],
        },
        json!({
            "width": scene.width(),
            "height": scene.height(),
            "max_height": scene.max_height(),
            "object_pixels": object_pixels,
        }),
        &[],
        &files,
        json!({ "total_s": start.elapsed().as_secs_f64() }),
        vec![format!(
            "scene {}x{}, {object_pixels} object pixels",
            scene.width(),
            scene.height()
        )],
    )
}

fn simulate(config: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let scene = config.build_scene()?;
    let mut files = write_scene_files(config, &scene)?;

    let reference = generate_reference(config.k, config.p, config.seed, config.tick_seconds)?;
    let reference_path = config.out_dir.join(REFERENCE_FILE);
    write_reference(&reference_path, &reference)?;
    let table = build_integral_table(&reference);
    drop(reference);
    let reference_s = start.elapsed().as_secs_f64();

    let t = Instant::now();
    let cube = simulate_capture_seeded(&scene, &table, &noise_spec(config), Some(config.seed))?;
    let capture_s = t.elapsed().as_secs_f64();
    let cube_path = config.out_dir.join(CUBE_FILE);
    write_cube(&cube_path, &cube)?;
    files.push(reference_path);
    files.push(cube_path);

    let sigma = cube.provenance().noise_sigma;
    finish(
        config,
        single_seeds(config),
        json!({ "noise_sigma": sigma }),
        &[],
        &files,
        json!({
            "reference_s": reference_s,
            "capture_s": capture_s,
            "total_s": start.elapsed().as_secs_f64(),
        }),
        vec![format!(
            "simulated {} frames of {}x{}, noise sigma {sigma}",
            cube.num_frames(),
            cube.width(),
            cube.height()
        )],
    )
}

fn masked_count(estimate: &DepthEstimate) -> usize {
    estimate.mask.iter().filter(|m| **m).count()
}

fn write_depth_files(
    config: &RunConfig,
    estimate: &DepthEstimate,
    summary: &DepthSummary,
) -> Result<Vec<PathBuf>, CliError> {
    let paths = DepthPaths::new(&config.out_dir, DEPTH_STEM);
    write_depth(&paths, estimate, summary)?;
    Ok(paths.all().iter().map(|p| p.to_path_buf()).collect())
}

fn reconstruct(config: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let input = config.input.as_deref().expect("validated");
    let reference_path = input.join(REFERENCE_FILE);
    let cube_path = input.join(CUBE_FILE);
    let scene_paths = ScenePaths::new(input, SCENE_STEM);
    let mut inputs = vec![reference_path.clone(), cube_path.clone()];

    let reference = read_reference(&reference_path)?;
    let table = build_integral_table(&reference);
    drop(reference);
    let cube = read_cube(&cube_path)?;
    let scene = if scene_paths.sidecar.exists() {
        inputs.extend(scene_paths.all().iter().map(|p| p.to_path_buf()));
        Some(read_scene(&scene_paths)?)
    } else {
        None
    };

    let mask = match (config.mask, &scene) {
        (MaskMode::SingleShot, _) => mask_from_2d(
            &cube.frame_image(0),
            &MaskPolicy {
                fraction: config.mask_fraction,
            },
        )?,
        (MaskMode::Truth, Some(scene)) => scene.support(),
        (MaskMode::Truth, None) => {
            return Err(CliError::Usage(format!(
                "--mask truth needs scene files in {}",
                input.display()
            )))
        }
    };
    let t = Instant::now();
    let estimate = reconstruct_depth_map(&cube, &table, &mask)?;
    let reconstruct_s = t.elapsed().as_secs_f64();
    let rmse_ticks = scene
        .as_ref()
        .and_then(|s| rmse(&estimate.t_hat, &integration_times(s), &estimate.mask).ok());

    let provenance = cube.provenance();
    let dsnr_db = match provenance.noise.level {
        NoiseLevel::Dsnr { db, .. } => Some(db),
        _ => None,
    };
    let summary = DepthSummary {
        width: estimate.width(),
        height: estimate.height(),
        tick_seconds: estimate.tick_seconds,
        seed: provenance.reference_seed,
        num_pulses: table.num_pulses(),
        pulse_len: table.pulse_len(),
        dsnr_db,
        rmse_ticks,
        estimated_pixels: estimate.estimated_pixels(),
        masked_pixels: masked_count(&estimate),
    };
    let files = write_depth_files(config, &estimate, &summary)?;
    let seeds = Seeds {
        reference: provenance.reference_seed.into_iter().collect(),
        noise: match provenance.noise.level {
            NoiseLevel::Noiseless => vec![],
            _ => vec![provenance.noise.seed],
        },
    };
    let lines = vec![depth_line(&summary)];
    finish(
        config,
        seeds,
        json!({ "summary": summary }),
        &inputs,
        &files,
        json!({
            "reconstruct_s": reconstruct_s,
            "total_s": start.elapsed().as_secs_f64(),
        }),
        lines,
    )
}

fn depth_line(summary: &DepthSummary) -> String {
    let rmse = summary
        .rmse_ticks
        .map_or("n/a".to_string(), |r| format!("{r:.4} ticks"));
    format!(
        "estimated {} of {} masked pixels, RMSE {rmse}",
        summary.estimated_pixels, summary.masked_pixels
    )
}

fn run(config: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let scene = config.build_scene()?;
    let mut files = write_scene_files(config, &scene)?;

    let mut extra = serde_json::Map::new();
    let run: PipelineRun =
        if config.scene == SceneKind::Phantom && config.mask == MaskMode::SingleShot {
            let exp = PhantomExperiment {
                phantom: config.phantom_params(),
                num_pulses: config.k,
                pulse_len: config.p,
                dsnr_db: config.dsnr_db,
                convention: config.convention,
                seed: config.seed,
                mask_policy: MaskPolicy {
                    fraction: config.mask_fraction,
                },
                tick_seconds: config.tick_seconds,
            };
            let out = run_phantom_experiment(&exp)?;
            extra.insert("shapes".into(), json!(out.shapes));
            extra.insert(
                "background_estimates".into(),
                json!(out.background_estimates),
            );
            out.run
        } else {
            let mask = match config.mask {
                MaskMode::SingleShot => MaskSource::SingleShot(MaskPolicy {
                    fraction: config.mask_fraction,
                }),
                MaskMode::Truth => MaskSource::Truth,
            };
            run_pipeline(
                &scene,
                &PipelineConfig {
                    num_pulses: config.k,
                    pulse_len: config.p,
                    tick_seconds: config.tick_seconds,
                    reference_seed: config.seed,
                    noise: noise_spec(config),
                    mask,
                },
            )?
        };

    let summary = DepthSummary {
        width: run.estimate.width(),
        height: run.estimate.height(),
        tick_seconds: run.estimate.tick_seconds,
        seed: Some(config.seed),
        num_pulses: config.k,
        pulse_len: config.p,
        dsnr_db: config.dsnr_db,
        rmse_ticks: Some(run.rmse),
        estimated_pixels: run.estimate.estimated_pixels(),
        masked_pixels: masked_count(&run.estimate),
    };
    files.extend(write_depth_files(config, &run.estimate, &summary)?);

    let macs = summary.masked_pixels as f64 * config.k as f64 * config.p as f64;
    let mut metrics = serde_json::Map::new();
    metrics.insert("rmse_ticks".into(), json!(run.rmse));
    metrics.insert("noise_sigma".into(), json!(run.noise_sigma));
    metrics.insert("estimated_pixels".into(), json!(summary.estimated_pixels));
    metrics.insert("masked_pixels".into(), json!(summary.masked_pixels));
    metrics.extend(extra);

    let mut lines = vec![depth_line(&summary)];
    if let Some(shapes) = metrics.get("shapes").and_then(Value::as_array) {
        for s in shapes {
            lines.push(format!(
                "  {:<9} nominal {:>4}  median {}",
                s["kind"].as_str().unwrap_or("?"),
                s["nominal_height"],
                s["median_height"]
            ));
        }
    }
    finish(
        config,
        single_seeds(config),
        Value::Object(metrics),
        &[],
        &files,
        json!({
            "stages": run.timings,
            "total_s": start.elapsed().as_secs_f64(),
            "correlation_macs_per_s": macs / run.timings.reconstruct_s.max(f64::MIN_POSITIVE),
        }),
        lines,
    )
}

fn sweep_metrics(result: &SweepResult) -> Value {
    let points: Vec<Value> = result
        .points
        .iter()
        .map(|p| {
            json!({
                "value": p.value,
                "median_rmse": p.median_rmse,
                "spread": p.spread(),
                "rmse_by_seed": p.runs.iter().map(|r| json!({ "seed": r.seed, "rmse": r.rmse })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let inversions: Vec<Value> = result
        .inversions()
        .iter()
        .map(|i| {
            json!({
                "from": i.from,
                "to": i.to,
                "increase": i.increase,
                "within_spread": i.within_spread(),
            })
        })
        .collect();
    json!({ "variable": result.variable, "points": points, "inversions": inversions })
}

fn sweep(config: &RunConfig) -> Result<Report, CliError> {
    let start = Instant::now();
    let spec = config.sweep_spec();
    let result = match config.command {
        CommandKind::SweepK => sweep_measurements(&spec)?,
        _ => sweep_dsnr(&spec)?,
    };
    let csv_path = config
        .out_dir
        .join(format!("sweep_{}.csv", result.variable.name()));
    write_text(&csv_path, &result.to_csv(false))?;

    let lines = result
        .points
        .iter()
        .map(|p| {
            format!(
                "{} = {:<8} median RMSE {:.4} ticks",
                result.variable.name(),
                p.value,
                p.median_rmse
            )
        })
        .collect();
    let timing: Vec<Value> = result
        .points
        .iter()
        .map(|p| {
            json!({
                "value": p.value,
                "wallclock_s": p.wallclock_s,
                "by_seed": p.runs.iter().map(|r| json!({ "seed": r.seed, "wallclock_s": r.wallclock_s })).collect::<Vec<_>>(),
            })
        })
        .collect();
    finish(
        config,
        Seeds {
            reference: config.seeds.clone(),
            noise: config.seeds.clone(),
        },
        sweep_metrics(&result),
        &[],
        &[csv_path],
        json!({ "points": timing, "total_s": start.elapsed().as_secs_f64() }),
        lines,
    )
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| {
        tgi_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}
