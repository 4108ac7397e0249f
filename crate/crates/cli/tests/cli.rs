//! End-to-end tests driving the compiled binary. A small dataset is
//! synthesized and trained once, then shared by the read-only tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sutura::augment::AugmentConfig;
use sutura::dataio::{AccessLog, DatasetManifest, PlaneImage};
use sutura::synth::{generate_dataset, PhantomConfig};
use sutura::train::{load_samples, train_fold, FoldData, TrainConfig};
use sutura::unet::UNetConfig;

fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sutura"))
        .args(args)
        .env_remove("SUTURA_THREADS")
        .output()
        .expect("binary runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn assert_success(output: &Output) {
    assert_eq!(code(output), 0, "stderr: {}", stderr(output));
}

/// Synthesized dataset plus one trained run, built once per test binary.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    manifest: PathBuf,
    config: PathBuf,
    run: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = run_cli(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--surgeries",
            "4",
            "--frames",
            "2",
            "--seed",
            "7",
            "--width",
            "64",
            "--height",
            "64",
            "--sutures",
            "3:5",
        ]);
        assert_success(&out);

        let config = dir.path().join("config.json");
        std::fs::write(&config, fixture_config_json()).unwrap();

        let run = dir.path().join("run");
        let out = run_cli(&[
            "train",
            "--manifest",
            data.join("manifest.json").to_str().unwrap(),
            "--folds",
            "2",
            "--config",
            config.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ]);
        assert_success(&out);

        Fixture {
            manifest: data.join("manifest.json"),
            data,
            config,
            run,
            _dir: dir,
        }
    })
}

fn fixture_config_json() -> &'static str {
    r#"{
        "epochs_max": 2,
        "batch_size": 4,
        "seed": 1,
        "sigma": 1.5,
        "unet": {
            "depth": 1,
            "base_filters": 2,
            "input_width": 32,
            "input_height": 32
        }
    }"#
}

#[test]
fn help_exits_zero_everywhere() {
    for args in [
        vec!["--help"],
        vec!["synth", "--help"],
        vec!["train", "--help"],
        vec!["eval", "--help"],
        vec!["decode", "--help"],
        vec!["curves", "--help"],
    ] {
        let out = run_cli(&args);
        assert_eq!(code(&out), 0, "{args:?}");
    }
    let out = run_cli(&["synth", "--help"]);
    let text = stdout(&out);
    for flag in ["--out", "--surgeries", "--frames", "--seed", "--sutures"] {
        assert!(text.contains(flag), "help misses {flag}");
    }
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run_cli(&["synth", "--bogus"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = run_cli(&["synth", "--surgeries", "2", "--frames", "2"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--out"));
}

#[test]
fn synth_writes_loadable_manifest_and_prints_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let out = run_cli(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--surgeries",
        "2",
        "--frames",
        "2",
        "--seed",
        "5",
        "--width",
        "64",
        "--height",
        "64",
        "--sutures",
        "3:4",
    ]);
    assert_success(&out);
    let printed = PathBuf::from(stdout(&out).trim());
    assert_eq!(printed, data.join("manifest.json"));
    let manifest = DatasetManifest::load(&printed).unwrap();
    assert_eq!(manifest.entries.len(), 4);
}

#[test]
fn synth_rerun_overwrites_with_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let args = [
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--surgeries",
        "1",
        "--frames",
        "2",
        "--seed",
        "9",
        "--width",
        "64",
        "--height",
        "64",
        "--sutures",
        "3:4",
    ];
    assert_success(&run_cli(&args));
    let manifest = std::fs::read(data.join("manifest.json")).unwrap();
    let frame = std::fs::read(data.join("surgery_00/frame_001.png")).unwrap();
    assert_success(&run_cli(&args));
    assert_eq!(manifest, std::fs::read(data.join("manifest.json")).unwrap());
    assert_eq!(
        frame,
        std::fs::read(data.join("surgery_00/frame_001.png")).unwrap()
    );
}

#[test]
fn synth_rejects_inverted_suture_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "synth",
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--surgeries",
        "1",
        "--frames",
        "1",
        "--sutures",
        "9:5",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("inverted"));
}

#[test]
fn synth_impossible_placement_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "synth",
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--surgeries",
        "1",
        "--frames",
        "1",
        "--width",
        "40",
        "--height",
        "40",
        "--sutures",
        "16:16",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("separation"));
}

#[test]
fn train_writes_all_fold_artifacts() {
    let f = fixture();
    for name in [
        "fold_0.ckpt",
        "fold_1.ckpt",
        "fold_0_record.csv",
        "fold_1_record.csv",
        "fold_0_curve.csv",
        "fold_1_curve.csv",
        "curve.csv",
        "summary.txt",
    ] {
        assert!(f.run.join(name).exists(), "missing {name}");
    }
    let summary = std::fs::read_to_string(f.run.join("summary.txt")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.contains("fold 0: validation"));
    assert!(summary.contains("best epoch"));
}

#[test]
fn train_rerun_is_byte_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let rerun = dir.path().join("rerun");
    let out = run_cli(&[
        "train",
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--folds",
        "2",
        "--config",
        f.config.to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    assert_success(&out);
    for name in ["summary.txt", "fold_0_record.csv", "fold_0.ckpt", "curve.csv"] {
        let a = std::fs::read(f.run.join(name)).unwrap();
        let b = std::fs::read(rerun.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn train_rejects_more_folds_than_surgeries() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "train",
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--folds",
        "11",
        "--config",
        f.config.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("folds"));
}

fn data_rows(csv: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "threshold,ppv_mean,ppv_min,ppv_max,tpr_mean,tpr_min,tpr_max"
    );
    lines.map(str::to_owned).collect()
}

#[test]
fn eval_default_range_writes_twenty_rows() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let out = run_cli(&[
        "eval",
        "--checkpoint",
        f.run.join("fold_0.ckpt").to_str().unwrap(),
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--split",
        "all",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert_eq!(stdout(&out).trim(), csv.to_str().unwrap());
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 20);
    assert!(rows[0].starts_with("0.050000,"));
    assert!(rows[9].starts_with("0.500000,"));
    assert!(rows[19].starts_with("1.000000,"));
}

#[test]
fn eval_custom_range_row_count_follows_the_range() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let out = run_cli(&[
        "eval",
        "--checkpoint",
        f.run.join("fold_0.ckpt").to_str().unwrap(),
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--split",
        "all",
        "--thresholds",
        "0.25:0.75:0.25",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert_eq!(data_rows(&csv).len(), 3);
}

#[test]
fn eval_rejects_inverted_threshold_range() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&[
        "eval",
        "--checkpoint",
        f.run.join("fold_0.ckpt").to_str().unwrap(),
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--thresholds",
        "0.9:0.1:0.05",
        "--csv",
        dir.path().join("c.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("inverted"));
}

#[test]
fn eval_reports_version_mismatch_with_the_version() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let tampered = dir.path().join("future.ckpt");
    let mut bytes = std::fs::read(f.run.join("fold_0.ckpt")).unwrap();
    bytes[8] = 99; // version u32 sits right after the 8-byte magic
    std::fs::write(&tampered, bytes).unwrap();
    let out = run_cli(&[
        "eval",
        "--checkpoint",
        tampered.to_str().unwrap(),
        "--manifest",
        f.manifest.to_str().unwrap(),
        "--csv",
        dir.path().join("c.csv").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("version 99"), "stderr: {err}");
}

#[test]
fn eval_is_reproducible_across_thread_counts() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let csv = dir.path().join(format!("t{threads}.csv"));
        let out = run_cli(&[
            "eval",
            "--threads",
            threads,
            "--checkpoint",
            f.run.join("fold_0.ckpt").to_str().unwrap(),
            "--manifest",
            f.manifest.to_str().unwrap(),
            "--split",
            "all",
            "--csv",
            csv.to_str().unwrap(),
        ]);
        assert_success(&out);
        outputs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

/// Overfitting one frame yields a checkpoint whose own frame evaluates to
/// a perfect row at threshold 0.5.
#[test]
fn eval_perfect_checkpoint_scores_ones_at_half_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("one");
    let synth_config = PhantomConfig {
        width: 32,
        height: 32,
        sutures_min: 2,
        sutures_max: 2,
        seed: 11,
        ..PhantomConfig::default()
    };
    let manifest = generate_dataset(&synth_config, &data, 1, 1).unwrap();
    let entries: Vec<_> = manifest.entries.iter().collect();
    let log = AccessLog::new();
    let samples = load_samples(&manifest, &entries, 32, 32, &log).unwrap();

    let train_config = TrainConfig {
        epochs_max: 150,
        initial_lr: 1e-2,
        batch_size: 1,
        seed: 3,
        sigma: 1.5,
        augment: AugmentConfig {
            apply_probability: 0.0,
            ..AugmentConfig::default()
        },
        unet: UNetConfig {
            depth: 2,
            base_filters: 8,
            input_width: 32,
            input_height: 32,
            dropout_schedule: vec![0.3, 0.3],
            ..UNetConfig::default()
        },
        ..TrainConfig::default()
    };
    let fold = FoldData {
        fold_id: 0,
        train: samples.clone(),
        validation: samples,
        train_surgeries: vec!["surgery_00".into()],
        validation_surgeries: vec!["surgery_00".into()],
    };
    let (checkpoint, _record) = train_fold(&fold, &train_config).unwrap();
    let ckpt_path = dir.path().join("perfect.ckpt");
    checkpoint.save(&ckpt_path).unwrap();

    let csv = dir.path().join("perfect.csv");
    let out = run_cli(&[
        "eval",
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_success(&out);
    let row = data_rows(&csv)
        .into_iter()
        .find(|r| r.starts_with("0.500000,"))
        .expect("threshold 0.5 row");
    assert_eq!(row, "0.500000,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000");
}

#[test]
fn decode_zero_heatmap_yields_empty_points_file() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("zeros.png");
    PlaneImage::new(32, 32).save_png(&map).unwrap();
    let points = dir.path().join("points.txt");
    let out = run_cli(&[
        "decode",
        "--heatmap",
        map.to_str().unwrap(),
        "--threshold",
        "0.5",
        "--out",
        points.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert_eq!(std::fs::read(&points).unwrap().len(), 0);
}

#[test]
fn decode_threshold_one_suppresses_all_sigmoid_output() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    // Any frame resized to the checkpoint's input works as a probe image.
    let frame = PlaneImage::load_png(&f.data.join("surgery_00/frame_000.png")).unwrap();
    let small = frame.resize_bilinear(32, 32);
    let image = dir.path().join("probe.png");
    small.save_png(&image).unwrap();
    let points = dir.path().join("points.txt");
    let out = run_cli(&[
        "decode",
        "--image",
        image.to_str().unwrap(),
        "--checkpoint",
        f.run.join("fold_0.ckpt").to_str().unwrap(),
        "--threshold",
        "1.0",
        "--out",
        points.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert_eq!(std::fs::read(&points).unwrap().len(), 0);
}

#[test]
fn decode_rejects_wrong_image_size_with_expected_size() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.txt");
    let out = run_cli(&[
        "decode",
        "--image",
        f.data.join("surgery_00/frame_000.png").to_str().unwrap(),
        "--checkpoint",
        f.run.join("fold_0.ckpt").to_str().unwrap(),
        "--out",
        points.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("32x32"), "stderr: {}", stderr(&out));
}

#[test]
fn decode_requires_exactly_one_input_mode() {
    let out = run_cli(&["decode", "--out", "x.txt"]);
    assert_eq!(code(&out), 1);
    let out = run_cli(&[
        "decode",
        "--heatmap",
        "a.png",
        "--image",
        "b.png",
        "--checkpoint",
        "c.ckpt",
        "--out",
        "x.txt",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn decode_overlay_colors_follow_match_categories() {
    let dir = tempfile::tempdir().unwrap();

    // Heatmap with two solid 3x3 blobs: one matching the truth (TP at
    // 20,20), one spurious (FP at 45,45). The truth adds a missed point
    // (FN at 10,50).
    let mut map = PlaneImage::new(64, 64);
    for (cx, cy) in [(20i64, 20i64), (45, 45)] {
        for dy in -1..=1 {
            for dx in -1..=1 {
                for c in 0..3 {
                    map.set(c, (cx + dx) as usize, (cy + dy) as usize, 1.0);
                }
            }
        }
    }
    let map_path = dir.path().join("map.png");
    map.save_png(&map_path).unwrap();

    let truth_path = dir.path().join("truth.json");
    std::fs::write(
        &truth_path,
        r#"{
            "shapes": [
                {"label": "s", "points": [[21.0, 20.0]], "shape_type": "point"},
                {"label": "s", "points": [[10.0, 50.0]], "shape_type": "point"}
            ],
            "imagePath": "map.png",
            "imageWidth": 64,
            "imageHeight": 64
        }"#,
    )
    .unwrap();

    let points = dir.path().join("points.txt");
    let overlay = dir.path().join("overlay.png");
    let out = run_cli(&[
        "decode",
        "--heatmap",
        map_path.to_str().unwrap(),
        "--threshold",
        "0.5",
        "--out",
        points.to_str().unwrap(),
        "--truth",
        truth_path.to_str().unwrap(),
        "--overlay",
        overlay.to_str().unwrap(),
    ]);
    assert_success(&out);

    let text = std::fs::read_to_string(&points).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().any(|l| l == "20,20"));

    let img = PlaneImage::load_png(&overlay).unwrap();
    let rgb_at = |x: usize, y: usize| (img.get(0, x, y), img.get(1, x, y), img.get(2, x, y));
    // Ring pixels sit 4 px from each center (between radius 3 and 4.6).
    let (r, g, b) = rgb_at(24, 20);
    assert!(g > 0.9 && r < 0.1 && b < 0.1, "TP ring not green: {r} {g} {b}");
    let (r, g, b) = rgb_at(49, 45);
    assert!(r > 0.9 && g < 0.1 && b < 0.1, "FP ring not red: {r} {g} {b}");
    let (r, g, b) = rgb_at(14, 50);
    assert!(
        r > 0.9 && (0.4..=0.7).contains(&g) && b < 0.1,
        "FN ring not orange: {r} {g} {b}"
    );
}

#[test]
fn curves_merge_of_fold_files_equals_train_aggregate() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let merged_path = dir.path().join("merged.csv");
    let out = run_cli(&[
        "curves",
        f.run.join("fold_0_curve.csv").to_str().unwrap(),
        f.run.join("fold_1_curve.csv").to_str().unwrap(),
        "--out",
        merged_path.to_str().unwrap(),
    ]);
    assert_success(&out);

    let read = |path: &Path| {
        let file = std::fs::File::open(path).unwrap();
        sutura::eval::read_curves_csv(std::io::BufReader::new(file)).unwrap()
    };
    let merged = read(&merged_path);
    let expected = read(&f.run.join("curve.csv"));
    assert_eq!(merged.len(), expected.len());
    // The fold files quantize each ratio to six decimals, so the merged
    // means can differ from the direct aggregate by one last-digit step.
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= 2e-6,
        _ => false,
    };
    for (m, e) in merged.iter().zip(&expected) {
        assert_eq!(m.threshold, e.threshold);
        assert!(close(m.ppv_mean, e.ppv_mean), "{m:?} vs {e:?}");
        assert!(close(m.ppv_min, e.ppv_min), "{m:?} vs {e:?}");
        assert!(close(m.ppv_max, e.ppv_max), "{m:?} vs {e:?}");
        assert!(close(m.tpr_mean, e.tpr_mean), "{m:?} vs {e:?}");
        assert!(close(m.tpr_min, e.tpr_min), "{m:?} vs {e:?}");
        assert!(close(m.tpr_max, e.tpr_max), "{m:?} vs {e:?}");
    }
}

#[test]
fn curves_without_inputs_is_usage_error() {
    let out = run_cli(&["curves", "--out", "x.csv"]);
    assert_eq!(code(&out), 1);
}
