//! End-to-end checks of the command-line surface: artifacts, determinism,
//! and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_iadccn")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn tiny_model_args() -> Vec<&'static str> {
    vec![
        "--set", "model.block_channels=4,8,16,16,16",
        "--set", "model.block_depths=1,1,1,1,1",
        "--set", "model.dru_channels=16",
        "--set", "model.iab_hidden=8",
        "--set", "train.patch_size=48",
        "--set", "train.patches_per_image=1",
        "--set", "train.epochs=2",
    ]
}

fn synth(dir: &Path, n: usize, seed: u64) {
    run_ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--hw",
        "48",
        "48",
        "--count-range",
        "2",
        "5",
        "--seed",
        &seed.to_string(),
    ]);
}

#[test]
fn version_reports_file_format_versions() {
    let stdout = run_ok(&["--version"]);
    assert!(stdout.contains("IADM v1"), "{stdout}");
    assert!(stdout.contains("IAWT v1"), "{stdout}");
}

#[test]
fn synth_empty_dataset_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    run_ok(&[
        "synth", "--out", out.to_str().unwrap(), "--n", "0", "--seed", "1",
    ]);
    let images = iadccn::data::load_annotations(&out.join("annotations.json")).unwrap();
    assert!(images.is_empty());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn synth_is_byte_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth(&a, 3, 99);
    synth(&b, 3, 99);
    for name in ["img_0000.pgm", "img_0001.pgm", "img_0002.pgm", "annotations.json"] {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }
}

#[test]
fn synth_pinned_count_range_yields_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("five");
    run_ok(&[
        "synth", "--out", out.to_str().unwrap(), "--n", "4", "--hw", "48", "48",
        "--count-range", "5", "5", "--seed", "2",
    ]);
    let images = iadccn::data::load_annotations(&out.join("annotations.json")).unwrap();
    assert_eq!(images.len(), 4);
    for img in images {
        assert_eq!(img.points.len(), 5, "{}", img.id);
    }
}

#[test]
fn train_produces_artifacts_and_metrics_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 5);
    let out = dir.path().join("run");
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--seed", "11",
    ];
    args.extend(tiny_model_args());
    run_ok(&args);

    for artifact in ["weights.iawt", "metrics.csv", "metrics.pgm", "config.txt", "manifest.json"] {
        assert!(out.join(artifact).exists(), "{artifact} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    // one header plus one row per epoch
    assert_eq!(metrics.lines().count(), 1 + 2);

    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"sha256\""));
    assert!(manifest.contains("weights.iawt"));
}

#[test]
fn train_ablation_base_disables_all_additions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 6);
    let out = dir.path().join("run");
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--seed", "11", "--ablation", "base",
    ];
    args.extend(tiny_model_args());
    run_ok(&args);
    let config = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(config.contains("model.iab_enabled=false"));
    assert!(config.contains("model.seg_head_enabled=false"));
    assert!(config.contains("train.hsm_enabled=false"));
    // a base checkpoint carries no attention tensors
    let cfg = iadccn::train::ExperimentConfig::parse(&config).unwrap();
    let params = iadccn::model::load_params::<f32>(&out.join("weights.iawt"), &cfg.model).unwrap();
    assert!(params.iter().all(|(n, _)| !n.starts_with("iab.")));
}

#[test]
fn resume_checks_weight_inventory_against_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 7);
    let out = dir.path().join("base_run");
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--seed", "3", "--ablation", "base",
    ];
    args.extend(tiny_model_args());
    run_ok(&args);

    // resuming base weights under an attention config must fail the
    // inventory check with a data error (exit 3)
    let out2 = dir.path().join("resumed");
    let weights = out.join("weights.iawt");
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out2.to_str().unwrap(),
        "--seed", "3", "--ablation", "iab",
        "--resume", weights.to_str().unwrap(),
    ];
    args.extend(tiny_model_args());
    let res = run(&args);
    assert_eq!(res.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("missing"), "{stderr}");

    // resuming under the matching config works
    let out3 = dir.path().join("resumed_ok");
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", out3.to_str().unwrap(),
        "--seed", "3", "--ablation", "base",
        "--resume", weights.to_str().unwrap(),
    ];
    args.extend(tiny_model_args());
    run_ok(&args);
}

#[test]
fn eval_and_infer_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 8);
    let run_dir = dir.path().join("run");
    let mut args = vec![
        "train", "--data", data.to_str().unwrap(), "--out", run_dir.to_str().unwrap(),
        "--seed", "4",
    ];
    args.extend(tiny_model_args());
    run_ok(&args);

    let eval_dir = dir.path().join("eval");
    let weights = run_dir.join("weights.iawt");
    let stdout = run_ok(&[
        "eval", "--data", data.to_str().unwrap(),
        "--weights", weights.to_str().unwrap(),
        "--out", eval_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("mae"), "{stdout}");
    let summary = std::fs::read_to_string(eval_dir.join("summary.json")).unwrap();
    for field in ["\"mae\"", "\"mse\"", "\"n\"", "\"ms_per_image\""] {
        assert!(summary.contains(field), "{summary}");
    }
    let report = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);

    let infer_dir = dir.path().join("infer");
    run_ok(&[
        "infer", "--image", data.join("img_0000.pgm").to_str().unwrap(),
        "--weights", weights.to_str().unwrap(),
        "--out", infer_dir.to_str().unwrap(),
    ]);
    let d = iadccn::data::load_density(&infer_dir.join("density.iadm")).unwrap();
    // 48x48 input at output stride 4
    assert_eq!((d.height, d.width, d.scale), (12, 12, 4));
}

#[test]
fn render_all_zero_density_is_black() {
    let dir = tempfile::tempdir().unwrap();
    let density = dir.path().join("zero.iadm");
    iadccn::data::save_density(&density, &iadccn::data::DensityMap::zeros(6, 9, 4)).unwrap();
    let out = dir.path().join("zero.pgm");
    run_ok(&[
        "render", "--density", density.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    let bytes = std::fs::read(&out).unwrap();
    let raster_start = bytes.len() - 6 * 9;
    assert!(bytes[raster_start..].iter().all(|&b| b == 0));
}

#[test]
fn exit_codes_follow_the_contract() {
    // usage error: unknown flag
    let out = run(&["train", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // configuration error: unknown --set key
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2, 9);
    let out = run(&[
        "train", "--data", data.to_str().unwrap(),
        "--out", dir.path().join("x").to_str().unwrap(),
        "--set", "bogus.key=1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // data error: missing dataset
    let out = run(&[
        "train", "--data", dir.path().join("nope").to_str().unwrap(),
        "--out", dir.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    // data error: malformed density file
    let bad = dir.path().join("bad.iadm");
    std::fs::write(&bad, b"JUNKJUNKJUNKJUNKJUNKJUNK").unwrap();
    let out = run(&[
        "render", "--density", bad.to_str().unwrap(),
        "--out", dir.path().join("z.pgm").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gradcheck_ops_passes_quickly() {
    let start = std::time::Instant::now();
    let stdout = run_ok(&["gradcheck", "--level", "ops"]);
    assert!(stdout.contains("worst rel err"), "{stdout}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert!(start.elapsed().as_secs() < 60);
}
