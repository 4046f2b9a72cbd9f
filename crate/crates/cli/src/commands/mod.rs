//! Subcommand implementations.

pub mod evaluate;
pub mod ingest;
pub mod predict;
pub mod synth;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use seq2one::data::{
    build_dataset, ndsi_cloud_filter, FeatureSpec, PixelSeries,
};
use seq2one::model::Variant;
use seq2one::serial::save_dataset;

/// Built-in defaults; `config/defaults.conf` documents the same values.
pub mod defaults {
    pub const TIME_STEPS: usize = 5;
    pub const HIDDEN_SIZES: &str = "64,64";
    pub const EPOCHS: usize = 200;
    pub const BATCH_SIZE: usize = 32;
    pub const LEARNING_RATE: f64 = 1e-3;
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS_OPT: f64 = 1e-8;
    pub const PATIENCE: usize = 50;
    pub const CLIP_NORM: f64 = 5.0;
    pub const SPLIT: &str = "0.7,0.15,0.15";
    pub const NDSI_THRESHOLD: f64 = 0.4;
    pub const TIME_SCALE: f64 = 365.25;
    pub const PIXELS: usize = 200;
    pub const ACQUISITIONS: usize = 30;
    pub const NOISE_SIGMA: f64 = 0.02;
    pub const MAX_GAP_DAYS: i64 = 14;
    pub const SEED: u64 = 0;
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[clap(rename_all = "snake_case")]
pub enum TaskArg {
    Ndvi,
    Vis,
    S2bands,
}

impl TaskArg {
    pub fn name(self) -> &'static str {
        match self {
            TaskArg::Ndvi => "ndvi",
            TaskArg::Vis => "vis",
            TaskArg::S2bands => "s2bands",
        }
    }

    pub fn all() -> [TaskArg; 3] {
        [TaskArg::Ndvi, TaskArg::Vis, TaskArg::S2bands]
    }
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[clap(rename_all = "snake_case")]
pub enum VariantArg {
    AttentionBilstm,
    AttentionLstm,
    Bilstm,
}

impl VariantArg {
    pub fn to_variant(self) -> Variant {
        match self {
            VariantArg::AttentionBilstm => Variant::AttentionBilstm,
            VariantArg::AttentionLstm => Variant::AttentionLstm,
            VariantArg::Bilstm => Variant::Bilstm,
        }
    }
}

/// Cache file name for a task inside a dataset directory.
pub fn cache_path(dir: &Path, task: &str) -> PathBuf {
    dir.join(format!("dataset_{task}.s2o1d"))
}

/// Cloud-filters the series and builds one featurized cache per task.
/// Returns the cache paths and per-task statistics for the manifest.
pub fn build_caches(
    series: Vec<PixelSeries>,
    out_dir: &Path,
    tasks: &[TaskArg],
    time_steps: usize,
    fractions: (f64, f64, f64),
    seed: u64,
    ndsi_threshold: f64,
    time_scale: f64,
) -> Result<(Vec<PathBuf>, BTreeMap<String, serde_json::Value>)> {
    let mut stats = BTreeMap::new();
    let mut dropped_cloudy = 0_usize;
    let mut filtered = Vec::with_capacity(series.len());
    for pixel in series {
        let (kept, dropped) = ndsi_cloud_filter(pixel.acquisitions, ndsi_threshold)?;
        dropped_cloudy += dropped;
        filtered.push(PixelSeries {
            pixel_id: pixel.pixel_id,
            acquisitions: kept,
        });
    }
    stats.insert("dropped_cloudy_acquisitions".to_string(), dropped_cloudy.into());

    let mut paths = Vec::new();
    for task in tasks {
        let mut spec = FeatureSpec::for_task(task.name())?;
        spec.time_scale = time_scale;
        let (dataset, report) = build_dataset(&filtered, &spec, time_steps, fractions, seed)?;
        let path = cache_path(out_dir, task.name());
        save_dataset(&path, &dataset)?;
        log::info!(
            "task {}: {} windows ({} train / {} val / {} test), {} short pixels skipped",
            task.name(),
            report.windows,
            dataset.train.n,
            dataset.val.n,
            dataset.test.n,
            report.skipped_short_pixels
        );
        stats.insert(
            format!("windows_{}", task.name()),
            report.windows.into(),
        );
        stats.insert(
            format!("skipped_short_pixels_{}", task.name()),
            report.skipped_short_pixels.into(),
        );
        paths.push(path);
    }
    Ok((paths, stats))
}
