use std::path::Path;
use std::process::Command;
use std::time::Instant;

use m3d_cli::commands::{
    cmd_ablate, cmd_condense, cmd_eval, cmd_moments, export_images, Axis, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE,
    REPORT_FILE,
};
use m3d_cli::datasets::load_train;
use m3d_cli::{Checkpoint, RunConfig};
use m3d_core::condenser::{init_synthetic, InitMode};
use m3d_core::numerics::RngState;

fn toy(dir: &Path) -> RunConfig {
    RunConfig {
        dataset: "toy".into(),
        arch: "mlp2".into(),
        width: 32,
        ipc: 4,
        iterations: 20,
        factor: 1,
        real_batch: 64,
        lr: 0.001,
        snapshot_every: 10,
        eval_epochs: 30,
        repeats: 2,
        moment_encoders: 2,
        out_dir: dir.to_string_lossy().into_owned(),
        data_root: "unused".into(),
        ..RunConfig::default()
    }
}

fn m3d() -> Command {
    Command::new(env!("CARGO_BIN_EXE_m3d"))
}

#[test]
fn zero_iterations_returns_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { iterations: 0, ..toy(tmp.path()) };
    let ckpt = cmd_condense(&cfg).unwrap();
    let train = load_train(&cfg).unwrap();
    let init = init_synthetic(&train, 4, 1, InitMode::RealSample, &RngState::new(cfg.seed)).unwrap();
    assert_eq!(ckpt.set, init);
    assert_eq!(Checkpoint::load(&tmp.path().join(CHECKPOINT_FILE)).unwrap(), ckpt);
}

#[test]
fn linear_m3d_and_dm_checkpoints_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_condense(&RunConfig { kernel: "linear".into(), loss: "m3d".into(), ..toy(a.path()) }).unwrap();
    cmd_condense(&RunConfig { kernel: "linear".into(), loss: "dm".into(), ..toy(b.path()) }).unwrap();
    let read = |d: &Path| std::fs::read(d.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn toy_smoke_run_is_fast_and_logs_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let status = m3d()
        .args(["condense", "--dataset", "toy", "--iterations", "100", "--factor", "1", "--snapshot-every", "50"])
        .args(["--arch", "mlp2", "--width", "32", "--ipc", "4", "--lr", "0.001", "--out-dir"])
        .arg(tmp.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(start.elapsed().as_secs_f64() < 60.0);
    let mut r = csv::Reader::from_path(tmp.path().join(METRICS_FILE)).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec!["iteration", "class", "loss", "moment1", "moment2", "moment3", "wall_time_s"]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 300);
    let with_moments: Vec<&str> = rows.iter().filter(|r| !r[3].is_empty()).map(|r| &r[0]).collect();
    assert_eq!(with_moments, ["0", "0", "0", "50", "50", "50", "99", "99", "99"]);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_condense(&toy(a.path())).unwrap();
    let status = m3d()
        .arg("condense")
        .arg("--config")
        .arg(a.path().join(CONFIG_FILE))
        .arg("--out-dir")
        .arg(b.path())
        .status()
        .unwrap();
    assert!(status.success());
    let read = |d: &Path| std::fs::read(d.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("in.toml");
    std::fs::write(&file, toy(tmp.path()).to_toml().replace("ipc = 4", "ipc = 2")).unwrap();
    let out = tmp.path().join("run");
    let status = m3d()
        .arg("condense")
        .arg("--config")
        .arg(&file)
        .args(["--ipc", "3", "--iterations", "0", "--out-dir"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let echoed = RunConfig::load(&out.join(CONFIG_FILE)).unwrap();
    assert_eq!((echoed.ipc, echoed.iterations), (3, 0));
    assert_eq!(Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap().set.ipc(), 3);
}

#[test]
fn single_repeat_reports_zero_std() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { repeats: 1, ..toy(tmp.path()) };
    cmd_condense(&cfg).unwrap();
    let report = cmd_eval(&cfg, &tmp.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(report.std, 0.0);
    let mut r = csv::Reader::from_path(tmp.path().join(REPORT_FILE)).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["row", "accuracy", "mean", "std", "wall_time_s"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][0], "aggregate");
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn eval_rejects_architecture_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { iterations: 0, ..toy(tmp.path()) };
    cmd_condense(&cfg).unwrap();
    let other = RunConfig { width: 16, ..cfg };
    assert!(matches!(cmd_eval(&other, &tmp.path().join(CHECKPOINT_FILE)), Err(m3d_cli::CliError::Config(_))));
}

#[test]
fn exit_codes_follow_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = m3d()
        .args(["eval", "--dataset", "toy", "--checkpoint"])
        .arg(tmp.path().join("nope.m3d"))
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
    let bad = m3d().args(["condense", "--kernel", "cosine"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let numeric = m3d()
        .args(["condense", "--dataset", "toy", "--arch", "mlp2", "--width", "32", "--factor", "1"])
        .args(["--kernel", "polynomial", "--lr", "1e6", "--iterations", "50", "--out-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(numeric.status.code(), Some(4), "{}", String::from_utf8_lossy(&numeric.stderr));
    let no_data = m3d()
        .args(["condense", "--dataset", "mnist", "--data-root"])
        .arg(tmp.path())
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(no_data.status.code(), Some(3));
}

#[test]
fn moments_vanish_when_the_set_is_the_whole_class() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { iterations: 0, per_class: 12, ipc: 12, ..toy(tmp.path()) };
    cmd_condense(&cfg).unwrap();
    let row = cmd_moments(&cfg, &tmp.path().join(CHECKPOINT_FILE)).unwrap();
    for d in [row.first_order, row.second_order, row.third_order] {
        assert!(d.abs() < 1e-10, "{d}");
    }
    let mut r = csv::Reader::from_path(tmp.path().join("moments.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["scope", "first_order", "second_order", "third_order"]);
}

#[test]
fn ablation_rows_cover_axis_times_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { iterations: 4, ipm: 1, ipm_values: vec![1, 2], ablate_seeds: 2, repeats: 1, ..toy(tmp.path()) };
    let rows = cmd_ablate(&cfg, Axis::Ipm).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), [0, 1, 0, 1]);
    let n = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap().records().count();
    assert_eq!(n, 4);
}

#[test]
fn single_point_sweep_matches_condense_then_eval() {
    let a = tempfile::tempdir().unwrap();
    let cfg = RunConfig { ipm_values: vec![5], ..toy(a.path()) };
    let row = cmd_ablate(&cfg, Axis::Ipm).unwrap().remove(0);
    cmd_condense(&cfg).unwrap();
    let report = cmd_eval(&cfg, &a.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!((row.accuracy_mean, row.accuracy_std), (report.mean, report.std));
}

#[test]
fn kernel_choice_barely_moves_toy_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { iterations: 200, eval_epochs: 100, ablate_seeds: 2, ..toy(tmp.path()) };
    let rows = cmd_ablate(&cfg, Axis::Kernel).unwrap();
    let mean = |k: &str| {
        let xs: Vec<f64> = rows.iter().filter(|r| r.value == k).map(|r| r.accuracy_mean).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let accs = [mean("gaussian"), mean("linear"), mean("polynomial")];
    let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.10, "{accs:?}");
}

#[test]
fn exported_images_round_trip_and_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = cmd_condense(&toy(tmp.path())).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let status = m3d()
        .arg("export-images")
        .arg("--checkpoint")
        .arg(tmp.path().join(CHECKPOINT_FILE))
        .arg("--out")
        .arg(&a)
        .status()
        .unwrap();
    assert!(status.success());
    std::fs::create_dir_all(&b).unwrap();
    let files = export_images(&ckpt.set, &b).unwrap();
    assert_eq!(std::fs::read_dir(&a).unwrap().count(), 3 * 4 + 1);
    assert_eq!(files.len(), 13);
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(f).unwrap());
    }
    let pixels = ckpt.set.to_pixels().unwrap();
    for class in 0..3 {
        for i in 0..4 {
            let img = image::open(a.join(format!("class{class}_{i}.png"))).unwrap().to_luma8();
            let src = &pixels.data()[(class * 4 + i) * 64..][..64];
            for (p, v) in img.as_raw().iter().zip(src) {
                assert!((*p as f64 / 255.0 - v).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
    let grid = image::open(a.join("grid.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (4 * 8, 3 * 8));
}
