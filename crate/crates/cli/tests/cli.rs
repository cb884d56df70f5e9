use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use sha2::{Digest, Sha256};
use tgi_cli::commands::execute;
use tgi_cli::config::{CommandKind, MaskMode, SceneKind};
use tgi_cli::{parse_config_with, CliError};
use tgi_core::scene::DsnrConvention;

fn parse(args: &[&str]) -> Result<tgi_cli::RunConfig, CliError> {
    let argv = std::iter::once("tgi").chain(args.iter().copied());
    parse_config_with(argv, None)
}

fn small_phantom_args(out: &Path) -> Vec<String> {
    [
        "run",
        "--width",
        "32",
        "--height",
        "24",
        "--k",
        "300",
        "--p",
        "200",
        "--shutter-len",
        "200",
        "--max-height",
        "80",
        "--t-min",
        "20",
        "--workers",
        "2",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn without_wallclock(mut manifest: Value) -> Value {
    manifest
        .as_object_mut()
        .unwrap()
        .remove("wallclock")
        .unwrap();
    manifest
}

fn tgi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tgi"))
        .args(args)
        .env_remove("TGI_OUTPUT_DIR")
        .output()
        .unwrap()
}

#[test]
fn simulate_flags_are_applied() {
    let c = parse(&["simulate", "--k", "6000", "--p", "1200", "--dsnr-db", "15"]).unwrap();
    assert_eq!(c.command, CommandKind::Simulate);
    assert_eq!((c.k, c.p, c.dsnr_db), (6000, 1200, Some(15.0)));
}

#[test]
fn empty_run_uses_defaults() {
    let c = parse(&["run"]).unwrap();
    assert_eq!(c.scene, SceneKind::Phantom);
    assert_eq!((c.width, c.height, c.max_height), (120, 120, 800));
    assert_eq!((c.k, c.p, c.t_min, c.shutter_len), (6000, 1200, 100, 1200));
    assert_eq!(c.dsnr_db, Some(15.0));
    assert_eq!(c.convention, DsnrConvention::Variance);
    assert_eq!(c.mask, MaskMode::SingleShot);
    assert_eq!(c.mask_fraction, 0.3);
    assert_eq!(c.out_dir, PathBuf::from("tgi-out"));
    assert!(c.workers >= 1);
}

#[test]
fn malformed_value_names_the_flag() {
    let err = parse(&["simulate", "--dsnr-db", "abc"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("dsnr-db"), "{err}");
}

#[test]
fn noise_free_and_sweep_defaults() {
    assert_eq!(parse(&["run", "--dsnr-db", "none"]).unwrap().dsnr_db, None);
    let k = parse(&["sweep-k"]).unwrap();
    assert_eq!(k.scene, SceneKind::Bar);
    assert_eq!(k.grid, vec![200.0, 600.0, 2000.0, 8000.0, 32000.0]);
    assert_eq!(k.dsnr_db, Some(10.0));
    assert_eq!(k.seeds, vec![1, 2, 3, 4, 5]);
    assert_eq!(k.mask, MaskMode::Truth);
    let d = parse(&["sweep-dsnr", "--grid", "0, 10,20", "--seeds", "7,8"]).unwrap();
    assert_eq!(d.grid, vec![0.0, 10.0, 20.0]);
    assert_eq!(d.seeds, vec![7, 8]);
    assert!(parse(&["sweep-dsnr", "--scene", "phantom"]).is_err());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(
        &file,
        "k = 4000\ndsnr-db = 12\nconvention = std\nseed = 9\n",
    )
    .unwrap();
    let f = file.to_str().unwrap();
    let c = parse(&["run", "--config", f, "--k", "5000"]).unwrap();
    assert_eq!(c.k, 5000);
    assert_eq!(c.dsnr_db, Some(12.0));
    assert_eq!(c.convention, DsnrConvention::Std);
    assert_eq!(c.seed, 9);

    fs::write(&file, "k = 10\nbogus = 1\n").unwrap();
    let err = parse(&["run", "--config", f]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("bogus"), "{err}");

    fs::write(&file, "shutter_len = long\n").unwrap();
    let err = parse(&["run", "--config", f]).unwrap_err();
    assert!(err.to_string().contains("shutter_len"), "{err}");
}

#[test]
fn output_dir_from_environment() {
    let argv = ["tgi", "scene"];
    let c = parse_config_with(argv, Some(PathBuf::from("/tmp/env-out"))).unwrap();
    assert_eq!(c.out_dir, PathBuf::from("/tmp/env-out"));
    let c = parse_config_with(["tgi", "scene", "--out", "x"], Some("/tmp/env-out".into())).unwrap();
    assert_eq!(c.out_dir, PathBuf::from("x"));
}

#[test]
fn preconditions_fail_before_compute() {
    for args in [
        &["run", "--p", "1000"][..],
        &["run", "--k", "1"],
        &["run", "--workers", "0"],
        &["run", "--mask-fraction", "1.5"],
        &["run", "--scene", "bar", "--height", "3"],
        &["reconstruct"],
        &["sweep-k", "--grid", "100,50"],
    ] {
        let err = parse(args).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{args:?}: {err}");
    }
}

#[test]
fn phantom_manifest_records_config_metrics_and_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let args = small_phantom_args(dir.path());
    let config = parse(&args.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
    let report = execute(&config).unwrap();
    let manifest = read_json(&report.manifest_path);
    assert_eq!(manifest["config"]["k"], 300);
    assert_eq!(manifest["config"]["dsnr_db"], 15.0);
    assert!(manifest["metrics"]["rmse_ticks"].is_f64());
    assert_eq!(manifest["metrics"]["shapes"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["seeds"]["reference"], serde_json::json!([1]));

    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 8);
    for f in files {
        let bytes = fs::read(dir.path().join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"], bytes.len());
        let digest: String = Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        assert_eq!(f["sha256"], digest);
    }
}

#[test]
fn rerun_gives_identical_manifest_except_wallclock() {
    let dir = tempfile::tempdir().unwrap();
    let args = small_phantom_args(dir.path());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let first = read_json(&execute(&parse(&argv).unwrap()).unwrap().manifest_path);
    let second = read_json(&execute(&parse(&argv).unwrap()).unwrap().manifest_path);
    assert!(first["wallclock"]["total_s"].is_f64());
    assert_eq!(without_wallclock(first), without_wallclock(second));
}

#[test]
fn sweep_lists_one_hash_per_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let c = parse(&[
        "sweep-dsnr",
        "--grid",
        "0,20",
        "--seeds",
        "1,2",
        "--k",
        "200",
        "--p",
        "100",
        "--width",
        "11",
        "--max-height",
        "50",
        "--t-min",
        "10",
        "--shutter-len",
        "100",
        "--out",
        out,
    ])
    .unwrap();
    let manifest = read_json(&execute(&c).unwrap().manifest_path);
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0]["path"], "sweep_dsnr_db.csv");
    let csv = fs::read_to_string(dir.path().join("sweep_dsnr_db.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "variable,value,seed,rmse_ticks,wallclock_s"
    );
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(manifest["metrics"]["points"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_then_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let rec = dir.path().join("rec");
    let common = [
        "--scene",
        "bar",
        "--width",
        "21",
        "--k",
        "800",
        "--p",
        "120",
        "--shutter-len",
        "120",
        "--max-height",
        "60",
        "--t-min",
        "20",
        "--dsnr-db",
        "none",
    ];
    let mut a = vec!["simulate"];
    a.extend(common);
    a.extend(["--out", sim.to_str().unwrap()]);
    execute(&parse(&a).unwrap()).unwrap();
    let c = parse(&[
        "reconstruct",
        "--input",
        sim.to_str().unwrap(),
        "--mask",
        "truth",
        "--out",
        rec.to_str().unwrap(),
    ])
    .unwrap();
    let manifest = read_json(&execute(&c).unwrap().manifest_path);
    assert_eq!(manifest["metrics"]["summary"]["rmse_ticks"], 0.0);
    assert_eq!(manifest["metrics"]["summary"]["estimated_pixels"], 21);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).display().to_string();

    assert_eq!(tgi(&["run", "--dsnr-db", "abc"]).status.code(), Some(2));
    assert_eq!(tgi(&["--help"]).status.code(), Some(0));

    let bar = [
        "--scene",
        "bar",
        "--width",
        "5",
        "--p",
        "60",
        "--shutter-len",
        "60",
        "--max-height",
        "20",
        "--t-min",
        "10",
    ];
    for (name, k) in [("a", "50"), ("b", "40")] {
        let mut args = vec!["simulate", "--k", k, "--out"];
        let out = d(name);
        args.push(&out);
        args.extend(bar);
        assert_eq!(tgi(&args).status.code(), Some(0));
    }

    // Reference with a different K than the cube.
    fs::copy(
        dir.path().join("b/reference.tgir"),
        dir.path().join("a/reference.tgir"),
    )
    .unwrap();
    let out = tgi(&["reconstruct", "--input", &d("a"), "--out", &d("r")]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let mut bytes = fs::read(dir.path().join("b/reference.tgir")).unwrap();
    bytes[..4].copy_from_slice(b"TGIX");
    fs::write(dir.path().join("b/reference.tgir"), bytes).unwrap();
    let out = tgi(&["reconstruct", "--input", &d("b"), "--out", &d("r")]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("reference.tgir") && stderr.contains("offset 0"),
        "{stderr}"
    );
}
