//! The subcommands. Each writes its outputs under the run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use m3d_core::condenser::{condense, condense_with, moment_diagnostics, CondenseConfig, MetricRow, SyntheticSet};
use m3d_core::evalharness::{evaluate_condensed, EvalReport};

use crate::checkpoint::Checkpoint;
use crate::config::{kernel_by_name, RunConfig};
use crate::datasets::{load_test, load_train};
use crate::error::{CliError, CliResult};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.m3d";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Creates the output directory and writes the resolved config into it.
pub fn echo_config(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(dir)
}

/// metrics.csv row. Moment columns are empty between snapshots.
#[derive(Debug, Serialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub class: usize,
    pub loss: f64,
    pub moment1: Option<f64>,
    pub moment2: Option<f64>,
    pub moment3: Option<f64>,
    pub wall_time_s: f64,
}

impl From<&MetricRow> for MetricsRecord {
    fn from(r: &MetricRow) -> Self {
        let m = r.moments.map(|m| m.as_array());
        MetricsRecord {
            iteration: r.iteration,
            class: r.class,
            loss: r.loss,
            moment1: m.map(|m| m[0]),
            moment2: m.map(|m| m[1]),
            moment3: m.map(|m| m[2]),
            wall_time_s: r.wall_time_s,
        }
    }
}

/// report.csv row: one per repeat (`row` = repeat index, `accuracy` set)
/// then one with `row` = `aggregate` carrying mean, population std and
/// total wall time.
#[derive(Debug, Serialize)]
pub struct ReportRecord {
    pub row: String,
    pub accuracy: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub wall_time_s: Option<f64>,
}

/// moments.csv row, orders in increasing order.
#[derive(Debug, Serialize)]
pub struct MomentsRecord {
    pub scope: String,
    pub first_order: f64,
    pub second_order: f64,
    pub third_order: f64,
}

/// sweep.csv row: one per (axis value, seed) cell.
#[derive(Debug, Serialize)]
pub struct SweepRecord {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub wall_time_s: f64,
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn dataset_config(cfg: &RunConfig, ds: &m3d_core::data::LabeledDataset) -> CliResult<CondenseConfig> {
    let c = cfg.condense_config(ds.input_shape())?;
    c.arch.validate()?;
    Ok(c)
}

/// Condenses the training split; writes the checkpoint and metrics.csv.
pub fn cmd_condense(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let dir = echo_config(cfg)?;
    let train = load_train(cfg)?;
    let ccfg = dataset_config(cfg, &train)?;
    let mut writer = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    let mut write_err = None;
    let out = condense_with(&train, &ccfg, cfg.loss_mode()?, |row| {
        if write_err.is_none() {
            write_err = writer.serialize(MetricsRecord::from(row)).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    writer.flush()?;
    let ckpt = Checkpoint {
        arch: ccfg.arch,
        dataset: cfg.dataset.clone(),
        seed: cfg.seed,
        iterations: cfg.iterations,
        set: out.set,
    };
    ckpt.save(&dir.join(CHECKPOINT_FILE))?;
    println!(
        "condensed {} classes × {} images in {:.1}s -> {}",
        ckpt.set.num_classes(),
        ckpt.set.ipc(),
        out.log.last().map_or(0.0, |r| r.wall_time_s),
        dir.join(CHECKPOINT_FILE).display()
    );
    Ok(ckpt)
}

fn check_compatible(cfg: &RunConfig, ckpt: &Checkpoint) -> CliResult<()> {
    if ckpt.dataset != cfg.dataset {
        return Err(CliError::config(format!(
            "checkpoint was condensed from {} but the config names {}",
            ckpt.dataset, cfg.dataset
        )));
    }
    let arch = cfg.encoder_arch(ckpt.arch.input)?;
    if arch != ckpt.arch {
        return Err(CliError::config(format!("architecture mismatch: checkpoint {} vs config {arch}", ckpt.arch)));
    }
    Ok(())
}

/// Trains `repeats` classifiers on the checkpoint and tests them; writes
/// report.csv.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> CliResult<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compatible(cfg, &ckpt)?;
    let dir = echo_config(cfg)?;
    let test = load_test(cfg, ckpt.set.stats())?;
    let report = evaluate_condensed(&ckpt.set, &test, &ckpt.arch, &cfg.train_config()?, cfg.upsample()?)?;
    write_csv(&dir.join(REPORT_FILE), &report_rows(&report))?;
    println!("accuracy {:.4} ± {:.4} over {} repeats", report.mean, report.std, report.accuracies.len());
    Ok(report)
}

pub fn report_rows(report: &EvalReport) -> Vec<ReportRecord> {
    let mut rows: Vec<ReportRecord> = report
        .accuracies
        .iter()
        .enumerate()
        .map(|(i, &a)| ReportRecord { row: i.to_string(), accuracy: Some(a), mean: None, std: None, wall_time_s: None })
        .collect();
    rows.push(ReportRecord {
        row: "aggregate".into(),
        accuracy: None,
        mean: Some(report.mean),
        std: Some(report.std),
        wall_time_s: Some(report.wall_time_s),
    });
    rows
}

/// Moment distances between the training split and the checkpoint, averaged
/// over fresh encoders and classes; writes moments.csv.
pub fn cmd_moments(cfg: &RunConfig, checkpoint: &Path) -> CliResult<MomentsRecord> {
    let ckpt = Checkpoint::load(checkpoint)?;
    check_compatible(cfg, &ckpt)?;
    let dir = echo_config(cfg)?;
    let train = load_train(cfg)?;
    let set = match ckpt.set.stats() {
        Some(s) if Some(s) != train.stats() => {
            return Err(CliError::config("checkpoint normalization differs from the dataset's"));
        }
        _ => &ckpt.set,
    };
    let report = moment_diagnostics(
        &train,
        set,
        &ckpt.arch,
        cfg.moment_encoders,
        cfg.seed,
        cfg.upsample()?,
        cfg.precision()?,
    )?;
    let [first_order, second_order, third_order] = report.as_array();
    let row = MomentsRecord { scope: "all_classes".into(), first_order, second_order, third_order };
    write_csv(&dir.join(MOMENTS_FILE), std::slice::from_ref(&row))?;
    println!("moment distances 1st {first_order:.4} 2nd {second_order:.4} 3rd {third_order:.4}");
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Kernel,
    Ipm,
}

/// Condense + eval for every axis value and seed (paired across values);
/// writes sweep.csv.
pub fn cmd_ablate(cfg: &RunConfig, axis: Axis) -> CliResult<Vec<SweepRecord>> {
    let dir = echo_config(cfg)?;
    let train = load_train(cfg)?;
    let test = load_test(cfg, train.stats())?;
    let base = dataset_config(cfg, &train)?;
    let mode = cfg.loss_mode()?;
    let values: Vec<(String, CondenseConfig)> = match axis {
        Axis::Kernel => ["gaussian", "linear", "polynomial"]
            .into_iter()
            .map(|k| Ok((k.to_string(), CondenseConfig { kernel: kernel_by_name(k, cfg)?, ..base.clone() })))
            .collect::<CliResult<_>>()?,
        Axis::Ipm => cfg.ipm_values.iter().map(|&i| (i.to_string(), CondenseConfig { ipm: i, ..base.clone() })).collect(),
    };
    let axis_name = match axis {
        Axis::Kernel => "kernel",
        Axis::Ipm => "ipm",
    };
    let mut rows = Vec::new();
    for (value, ccfg) in &values {
        for s in 0..cfg.ablate_seeds as u64 {
            let seed = cfg.seed + s;
            let start = Instant::now();
            let set = condense(&train, &CondenseConfig { seed, ..ccfg.clone() }, mode)?.set;
            let tcfg = m3d_core::evalharness::TrainConfig { seed, ..cfg.train_config()? };
            let report = evaluate_condensed(&set, &test, &ccfg.arch, &tcfg, cfg.upsample()?)?;
            println!("{axis_name}={value} seed={seed}: {:.4} ± {:.4}", report.mean, report.std);
            rows.push(SweepRecord {
                axis: axis_name.into(),
                value: value.clone(),
                seed,
                accuracy_mean: report.mean,
                accuracy_std: report.std,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    write_csv(&dir.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

/// Writes `class{c}_{i}.png` for every synthetic image plus `grid.png`
/// (one row per class). Returns the written paths.
pub fn cmd_export_images(checkpoint: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(checkpoint)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))?;
    export_images(&ckpt.set, out)
}

pub fn export_images(set: &SyntheticSet, out: &Path) -> CliResult<Vec<PathBuf>> {
    let pixels = set.to_pixels()?;
    let shape = set.input_shape();
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    if c != 1 && c != 3 {
        return Err(CliError::config(format!("cannot export {c}-channel images")));
    }
    let (classes, ipc) = (set.num_classes(), set.ipc());
    let quantize = |v: f64| (v * 255.0).round() as u8;
    let mut grid = vec![0u8; classes * ipc * c * h * w];
    let grid_w = ipc * w;
    let mut written = Vec::with_capacity(classes * ipc + 1);
    for class in 0..classes {
        for i in 0..ipc {
            let img = &pixels.data()[(class * ipc + i) * c * h * w..][..c * h * w];
            let mut buf = vec![0u8; c * h * w];
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        let v = quantize(img[(ch * h + y) * w + x]);
                        buf[(y * w + x) * c + ch] = v;
                        grid[((class * h + y) * grid_w + i * w + x) * c + ch] = v;
                    }
                }
            }
            let path = out.join(format!("class{class}_{i}.png"));
            save_png(&path, &buf, w, h, c)?;
            written.push(path);
        }
    }
    let path = out.join("grid.png");
    save_png(&path, &grid, grid_w, classes * h, c)?;
    written.push(path);
    Ok(written)
}

fn save_png(path: &Path, buf: &[u8], w: usize, h: usize, c: usize) -> CliResult<()> {
    let color = if c == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
    image::save_buffer_with_format(path, buf, w as u32, h as u32, color, image::ImageFormat::Png)?;
    Ok(())
}
