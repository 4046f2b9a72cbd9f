//! `predict`: forecast band/index values for each pixel at a target date.

use std::path::PathBuf;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::Args;
use seq2one::data::{featurize_inference, ndsi_cloud_filter, read_jsonl, PixelSeries};
use seq2one::serial::{format_f64, load_model};

use super::defaults;
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::settings::{resolve_f64, Resolved, Settings};

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
#[clap(rename_all = "snake_case")]
pub enum PredictMode {
    /// Target date must lie strictly after every acquisition of a pixel.
    Forecast,
    /// Target date may fall inside the series; the preceding acquisitions
    /// are used as history.
    Gapfill,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: PathBuf,
    /// JSON Lines pixel archive providing the history acquisitions.
    #[arg(long)]
    pub history: PathBuf,
    /// Date to forecast, ISO-8601 (YYYY-MM-DD).
    #[arg(long)]
    pub target_date: NaiveDate,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PredictMode::Forecast)]
    pub mode: PredictMode,
    #[arg(long)]
    pub ndsi_threshold: Option<f64>,
}

pub fn run(args: PredictArgs, settings: &Settings) -> Result<()> {
    let mut resolved = Resolved::default();
    let ndsi_threshold = resolve_f64(
        args.ndsi_threshold,
        settings,
        "ndsi_threshold",
        defaults::NDSI_THRESHOLD,
        &mut resolved,
    )?;
    resolved.record("target_date", args.target_date);
    resolved.record("mode", format!("{:?}", args.mode).to_lowercase());

    let loaded = load_model(&args.model)?;
    let spec = loaded.feature_spec.ok_or_else(|| {
        seq2one::Error::Config(format!(
            "model {} carries no feature spec; cannot featurize history",
            args.model.display()
        ))
    })?;
    let time_steps = loaded.model.config().time_steps;

    let raw_series = read_jsonl(&args.history)?;
    let mut series = Vec::with_capacity(raw_series.len());
    for pixel in raw_series {
        let (kept, _) = ndsi_cloud_filter(pixel.acquisitions, ndsi_threshold)?;
        series.push(PixelSeries {
            pixel_id: pixel.pixel_id,
            acquisitions: kept,
        });
    }

    if args.mode == PredictMode::Forecast {
        for pixel in &series {
            if let Some(last) = pixel.acquisitions.last() {
                if last.date >= args.target_date {
                    anyhow::bail!(seq2one::Error::Data(format!(
                        "pixel {}: target date {} is not after its last acquisition {} \
                         (use --mode gapfill to predict inside the series)",
                        pixel.pixel_id, args.target_date, last.date
                    )));
                }
            }
        }
    }

    let batch = featurize_inference(&series, &spec, time_steps, args.target_date)?;
    let x = batch.x_tensor()?;
    let (y_hat, _) = loaded.model.predict(&x)?;

    let norm = spec
        .normalization
        .as_ref()
        .expect("featurize_inference requires fitted normalization");
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let csv_path = args.out.join(format!("predictions_{}.csv", args.target_date));
    let mut csv = String::from("pixel_id,target_date");
    for name in &spec.targets {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    let d = spec.targets.len();
    for (i, pixel_id) in batch.pixel_ids.iter().enumerate() {
        csv.push_str(pixel_id);
        csv.push(',');
        csv.push_str(&args.target_date.to_string());
        for j in 0..d {
            csv.push(',');
            csv.push_str(&format_f64(norm.denormalize_target(j, y_hat.data()[i * d + j])));
        }
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv)?;
    log::info!(
        "predicted {} pixels at {} ({} skipped for short history)",
        batch.n,
        args.target_date,
        batch.skipped
    );

    let mut manifest = ManifestBuilder::new("predict");
    manifest
        .config(resolved.into_map())
        .input(&args.model)
        .input(&args.history)
        .output(&csv_path)
        .stat("pixels_predicted", batch.n)
        .stat("pixels_skipped_short_history", batch.skipped);
    manifest.write(&manifest_path_for(&csv_path))?;

    println!("{}", csv_path.display());
    Ok(())
}
