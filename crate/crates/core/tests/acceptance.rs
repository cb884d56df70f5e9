//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p tgi-core --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgi_core::experiments::{
    rmse, run_phantom_experiment, run_pipeline, sweep_dsnr, sweep_measurements, BarParams,
    MaskSource, PhantomExperiment, PipelineConfig, SweepResult, SweepSpec,
};
use tgi_core::formats::{write_depth, DepthPaths, DepthSummary};
use tgi_core::reconstruct::{
    correlation_profile, correlation_profiles, estimate_integration_time, DepthEstimate,
};
use tgi_core::scene::{
    make_bar_scene_1d, simulate_capture, MeasurementCube, NoiseSpec, Provenance, Scene,
    PHANTOM_HEIGHTS,
};
use tgi_core::signal::{build_integral_table, generate_reference, IntegralTable};
use tgi_core::{with_workers, Grid};

const EXACT_FRACTION_MIN: f64 = 0.99;
const MAX_TICK_ERROR: u32 = 1;
const NOISE_FREE_RMSE_MAX: f64 = 0.1;
const NOISE_FREE_TIME_LIMIT: Duration = Duration::from_secs(10);
const HIGH_DSNR_RMSE_MAX: f64 = 1.0;
const HIGH_DSNR_TIME_LIMIT: Duration = Duration::from_secs(120);
const SHAPE_MEDIAN_REL_TOL: f64 = 0.05;
const PHANTOM_TIME_LIMIT: Duration = Duration::from_secs(15 * 60);
const KERNEL_REL_TOL: f64 = 1e-9;
const AFFINE_TOL: f64 = 1e-12;
const PROFILE_SHAPE_TOL: f64 = 0.02;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bar_1d() -> Scene {
    // One pixel per height 0..=200.
    make_bar_scene_1d(201, 200, 50, 300).unwrap()
}

fn noise_free_bar_run() -> DepthEstimate {
    let scene = bar_1d();
    let run = run_pipeline(
        &scene,
        &PipelineConfig {
            num_pulses: 2000,
            pulse_len: 300,
            tick_seconds: 1.0,
            reference_seed: 11,
            noise: NoiseSpec::noiseless(),
            mask: MaskSource::Truth,
        },
    )
    .unwrap();
    run.estimate
}

fn high_dsnr_spec() -> SweepSpec {
    SweepSpec {
        grid: vec![20.0],
        num_pulses: 6000,
        seeds: (1..=5).collect(),
        bar: BarParams::default(),
        pulse_len: 1200,
        ..SweepSpec::dsnr_default()
    }
}

fn noise_free_recovery() -> Outcome {
    let start = Instant::now();
    let estimate = with_workers(1, noise_free_bar_run).unwrap();
    let elapsed = start.elapsed();
    let truth = tgi_core::scene::integration_times(&bar_1d());
    let mut exact = 0;
    let mut worst = 0;
    for (e, t) in estimate.t_hat.iter().zip(truth.iter()) {
        let err = e.unwrap().abs_diff(t.unwrap());
        exact += (err == 0) as usize;
        worst = worst.max(err);
    }
    let fraction = exact as f64 / truth.len() as f64;
    let r = rmse(&estimate.t_hat, &truth, &estimate.mask).unwrap();
    outcome(
        fraction >= EXACT_FRACTION_MIN
            && worst <= MAX_TICK_ERROR
            && r <= NOISE_FREE_RMSE_MAX
            && elapsed <= NOISE_FREE_TIME_LIMIT,
        format!(
            "exact {:.2}% (>= {}%), max error {worst} (<= {MAX_TICK_ERROR}), RMSE {r:.4} (<= {NOISE_FREE_RMSE_MAX}), {:.2}s on 1 worker (<= {}s)",
            fraction * 100.0,
            EXACT_FRACTION_MIN * 100.0,
            elapsed.as_secs_f64(),
            NOISE_FREE_TIME_LIMIT.as_secs()
        ),
    )
}

fn high_dsnr_operating_point() -> Outcome {
    let start = Instant::now();
    let result = with_workers(4, || sweep_dsnr(&high_dsnr_spec()))
        .unwrap()
        .unwrap();
    let elapsed = start.elapsed();
    let median = result.points[0].median_rmse;
    let per_seed: Vec<String> = result.points[0]
        .runs
        .iter()
        .map(|r| format!("{:.3}", r.rmse))
        .collect();
    outcome(
        median <= HIGH_DSNR_RMSE_MAX && elapsed <= HIGH_DSNR_TIME_LIMIT,
        format!(
            "median RMSE {median:.4} (<= {HIGH_DSNR_RMSE_MAX}) over seeds [{}], {:.1}s on 4 workers (<= {}s)",
            per_seed.join(", "),
            elapsed.as_secs_f64(),
            HIGH_DSNR_TIME_LIMIT.as_secs()
        ),
    )
}

fn phantom_reproduction() -> Outcome {
    let start = Instant::now();
    let run = with_workers(8, || run_phantom_experiment(&PhantomExperiment::default()))
        .unwrap()
        .unwrap();
    let elapsed = start.elapsed();
    let mut pass = run.background_estimates == 0 && elapsed <= PHANTOM_TIME_LIMIT;
    let mut medians = Vec::new();
    for (shape, nominal) in run.shapes.iter().zip(PHANTOM_HEIGHTS) {
        let m = shape.median_height.unwrap_or(f64::NAN);
        pass &= (m - nominal as f64).abs() <= SHAPE_MEDIAN_REL_TOL * nominal as f64;
        medians.push(format!("{} {m}/{nominal}", shape.kind.label()));
    }
    let masked = run.run.estimate.mask.iter().filter(|m| **m).count();
    let macs = masked as f64 * 6000.0 * 1200.0;
    outcome(
        pass,
        format!(
            "medians [{}] (within {}%), background estimates {}, {:.1}s on 8 workers (<= {}s), correlation {:.2e} MAC over {masked} pixels at {:.2} GMAC/s",
            medians.join(", "),
            SHAPE_MEDIAN_REL_TOL * 100.0,
            run.background_estimates,
            elapsed.as_secs_f64(),
            PHANTOM_TIME_LIMIT.as_secs(),
            macs,
            macs / run.run.timings.reconstruct_s / 1e9
        ),
    )
}

fn fmt_medians(result: &SweepResult) -> String {
    result
        .points
        .iter()
        .map(|p| format!("{}: {:.4}", p.value, p.median_rmse))
        .collect::<Vec<_>>()
        .join(", ")
}

fn dsnr_trend() -> Outcome {
    let result = sweep_dsnr(&SweepSpec::dsnr_default()).unwrap();
    let m = result.medians();
    let pass = m.windows(2).all(|w| w[1] < w[0]);
    outcome(
        pass,
        format!(
            "median RMSE strictly decreasing: [{}]",
            fmt_medians(&result)
        ),
    )
}

fn measurement_trend() -> Outcome {
    let result = sweep_measurements(&SweepSpec::measurements_default()).unwrap();
    let m = result.medians();
    let at = |k: f64| result.point(k).unwrap().median_rmse;
    let pass =
        m.windows(2).all(|w| w[1] <= w[0]) && at(200.0) > at(2000.0) && at(2000.0) > at(32000.0);
    outcome(
        pass,
        format!(
            "median RMSE nonincreasing, RMSE(200) > RMSE(2000) > RMSE(32000): [{}]",
            fmt_medians(&result)
        ),
    )
}

/// Two-pass Pearson correlation; `None` when either side is constant.
fn naive_pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

fn naive_profile(y: &[f64], table: &IntegralTable) -> Vec<Option<f64>> {
    (1..=table.pulse_len())
        .map(|t| {
            let col: Vec<f64> = (0..table.num_pulses())
                .map(|i| table.integral(i, t))
                .collect();
            naive_pearson(y, &col)
        })
        .collect()
}

fn naive_argmax(values: &[Option<f64>]) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i as u32 + 1, v));
            }
        }
    }
    best.map(|(t, _)| t)
}

fn kernel_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut argmax_mismatches = 0;
    let mut profiles = 0;
    for instance in 0..50u64 {
        let k = rng.random_range(2..=200);
        let p = rng.random_range(1..=100);
        let w = rng.random_range(1..=8);
        let h = rng.random_range(1..=8);
        let table = build_integral_table(&generate_reference(k, p, 100 + instance, 1.0).unwrap());
        // Half the pixels follow the forward model, the rest are arbitrary.
        let mut data = vec![0.0; k * w * h];
        for px in 0..w * h {
            let t = rng.random_range(1..=p);
            let r: f64 = rng.random_range(0.1..1.0);
            let sigma: f64 = rng.random_range(0.0..0.5);
            let modelled = rng.random_bool(0.5);
            for i in 0..k {
                data[i * w * h + px] = if modelled {
                    r * table.integral(i, t) + sigma * (rng.random::<f64>() - 0.5)
                } else {
                    rng.random_range(-5.0..5.0)
                };
            }
        }
        let cube = MeasurementCube::from_parts(
            k,
            w,
            h,
            data,
            Provenance {
                scene_id: "random".into(),
                reference_seed: None,
                noise: NoiseSpec::noiseless(),
                noise_sigma: 0.0,
            },
        )
        .unwrap();
        let pixels: Vec<usize> = (0..w * h).collect();
        for (px, profile) in correlation_profiles(&cube, &table, &pixels)
            .unwrap()
            .iter()
            .enumerate()
        {
            let oracle = naive_profile(&cube.pixel_series(px), &table);
            for (got, want) in profile.values().iter().zip(&oracle) {
                match want {
                    Some(b) => worst = worst.max((got - b).abs() / b.abs().max(1.0)),
                    None if got.is_nan() => {}
                    None => worst = f64::INFINITY,
                }
            }
            let got = estimate_integration_time(profile).ok().map(|(t, _)| t);
            argmax_mismatches += (got != naive_argmax(&oracle)) as usize;
            profiles += 1;
        }
    }
    outcome(
        worst <= KERNEL_REL_TOL && argmax_mismatches == 0,
        format!(
            "{profiles} profiles over 50 instances, worst relative error {worst:.2e} (<= {KERNEL_REL_TOL:e}), argmax mismatches {argmax_mismatches}"
        ),
    )
}

fn affine_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut t_mismatches = 0;
    let mut cases = 0;
    for trial in 0..10u64 {
        let k = rng.random_range(20..=400);
        let p = rng.random_range(10..=150);
        let table = build_integral_table(&generate_reference(k, p, 200 + trial, 1.0).unwrap());
        let t = rng.random_range(1..=p);
        let y: Vec<f64> = (0..k)
            .map(|i| {
                rng.random_range(0.2..1.0) * table.integral(i, t) + rng.random_range(-1.0..1.0)
            })
            .collect();
        let base = correlation_profile(&y, &table).unwrap();
        let base_t = estimate_integration_time(&base).unwrap().0;
        for alpha in [0.5, 2.0, 10.0] {
            for beta in [-3.0, 0.0, 7.0] {
                let z: Vec<f64> = y.iter().map(|v| alpha * v + beta).collect();
                let prof = correlation_profile(&z, &table).unwrap();
                for (a, b) in prof.values().iter().zip(base.values()) {
                    worst = worst.max((a - b).abs());
                }
                t_mismatches += (estimate_integration_time(&prof).unwrap().0 != base_t) as usize;
                cases += 1;
            }
        }
    }
    outcome(
        worst <= AFFINE_TOL && t_mismatches == 0,
        format!(
            "{cases} (series, alpha, beta) cases, worst deviation {worst:.2e} (<= {AFFINE_TOL:e}), t_hat mismatches {t_mismatches}"
        ),
    )
}

fn depth_bytes(estimate: &DepthEstimate) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let paths = DepthPaths::new(dir.path(), "d");
    let summary = DepthSummary {
        width: estimate.width(),
        height: estimate.height(),
        tick_seconds: estimate.tick_seconds,
        seed: None,
        num_pulses: 0,
        pulse_len: 0,
        dsnr_db: None,
        rmse_ticks: None,
        estimated_pixels: estimate.estimated_pixels(),
        masked_pixels: 0,
    };
    write_depth(&paths, estimate, &summary).unwrap();
    paths
        .all()
        .iter()
        .flat_map(|p| std::fs::read(p).unwrap())
        .collect()
}

fn determinism() -> Outcome {
    let runs: Vec<(Vec<u8>, String, Vec<u8>)> = [1, 2, 8]
        .iter()
        .map(|&w| {
            with_workers(w, || {
                let bar = depth_bytes(&noise_free_bar_run());
                let csv = sweep_dsnr(&high_dsnr_spec()).unwrap().to_csv(false);
                let phantom = run_phantom_experiment(&PhantomExperiment::default()).unwrap();
                (bar, csv, depth_bytes(&phantom.run.estimate))
            })
            .unwrap()
        })
        .collect();
    let same = |i: usize| {
        let (a, b) = (&runs[0], &runs[i]);
        [a.0 == b.0, a.1 == b.1, a.2 == b.2]
    };
    let checks = [same(1), same(2)];
    let pass = checks.iter().flatten().all(|ok| *ok);
    outcome(
        pass,
        format!(
            "workers 1 vs 2: bar/sweep CSV/phantom identical {:?}; 1 vs 8: {:?} ({} phantom depth bytes)",
            checks[0],
            checks[1],
            runs[0].2.len()
        ),
    )
}

fn expected_profile_shape() -> Outcome {
    const K: usize = 100_000;
    const T_STAR: u32 = 900;
    let lags = [100usize, 225, 400, 900];
    let height = Grid::filled(1, 1, 0u32);
    let scene = Scene::new("point", height, Grid::filled(1, 1, 1.0), T_STAR, T_STAR).unwrap();
    let mut sums = [0.0; 4];
    for run in 0..20u64 {
        let reference = generate_reference(K, T_STAR as usize, 1000 + run, 1.0).unwrap();
        let table = build_integral_table(&reference);
        drop(reference);
        let cube = simulate_capture(&scene, &table, &NoiseSpec::noiseless()).unwrap();
        let profile = correlation_profile(&cube.pixel_series(0), &table).unwrap();
        for (s, &t) in sums.iter_mut().zip(&lags) {
            *s += profile.value(t).unwrap();
        }
    }
    let mut worst = 0.0f64;
    let parts: Vec<String> = sums
        .iter()
        .zip(lags)
        .map(|(s, t)| {
            let mean = s / 20.0;
            let expected = (t as f64 / T_STAR as f64).sqrt();
            worst = worst.max((mean - expected).abs());
            format!("C({t}) {mean:.4} vs {expected:.4}")
        })
        .collect();
    outcome(
        worst <= PROFILE_SHAPE_TOL,
        format!(
            "{}, worst deviation {worst:.4} (<= {PROFILE_SHAPE_TOL})",
            parts.join(", ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("noise-free exact recovery", noise_free_recovery),
        ("high-DSNR operating point", high_dsnr_operating_point),
        ("phantom reproduction", phantom_reproduction),
        ("DSNR trend", dsnr_trend),
        ("measurement-count trend", measurement_trend),
        ("kernel oracle equivalence", kernel_oracle),
        ("estimator affine invariance", affine_invariance),
        ("determinism across worker counts", determinism),
        ("expected profile shape", expected_profile_shape),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        println!(
            "[{}] {}. {name}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
