//! `evaluate`: score one model on a split, or build the combined
//! variant-by-task comparison table over a directory of trained models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use seq2one::data::FeaturizedDataset;
use seq2one::metrics::{evaluate, export_report, MetricsReport};
use seq2one::serial::{format_f64, load_dataset, load_model};

use super::cache_path;
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::settings::{Resolved, Settings};

#[derive(Args, Debug)]
#[command(group(
    clap::ArgGroup::new("target").required(true).args(["model", "all_variants"]),
))]
pub struct EvaluateArgs {
    /// Trained model file to evaluate.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluate every *.s2o1 model under --models and emit one combined
    /// table with per-task RMSE/MAPE averaged over seeds.
    #[arg(long, requires = "models")]
    pub all_variants: bool,
    /// Directory of trained models (with --all-variants).
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Directory holding dataset_<task>.s2o1d caches.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate: train, val, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: EvaluateArgs, _settings: &Settings) -> Result<()> {
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    if args.all_variants {
        run_all_variants(&args)
    } else {
        run_single(&args)
    }
}

/// Loads a model file and scores it on its task's cache; the cache's
/// feature spec must match the one stored in the model.
fn evaluate_model_file(
    model_path: &Path,
    data_dir: &Path,
    split: &str,
    datasets: &mut BTreeMap<String, FeaturizedDataset>,
) -> Result<(String, String, u64, MetricsReport)> {
    let loaded = load_model(model_path)?;
    let task = loaded.task.clone().ok_or_else(|| {
        seq2one::Error::Config(format!(
            "model {} does not record its task",
            model_path.display()
        ))
    })?;
    if !datasets.contains_key(&task) {
        datasets.insert(task.clone(), load_dataset(&cache_path(data_dir, &task))?);
    }
    let dataset = &datasets[&task];
    let model_spec = loaded.feature_spec.as_ref().ok_or_else(|| {
        seq2one::Error::Config(format!(
            "model {} carries no feature spec",
            model_path.display()
        ))
    })?;
    if *model_spec != dataset.spec {
        anyhow::bail!(seq2one::Error::Config(format!(
            "feature spec mismatch: model {} was trained on a different featurization \
             than cache dataset_{task}.s2o1d",
            model_path.display()
        )));
    }
    let variant = loaded.model.config().variant.name().to_string();
    let seed = loaded.model.config().seed;
    let report = evaluate(
        &loaded.model,
        dataset.split(split)?,
        &dataset.spec,
        &variant,
    )?;
    Ok((variant, task, seed, report))
}

fn run_single(args: &EvaluateArgs) -> Result<()> {
    let model_path = args.model.as_ref().expect("clap group guarantees one");
    let mut datasets = BTreeMap::new();
    let (variant, task, _, report) =
        evaluate_model_file(model_path, &args.data, &args.split, &mut datasets)?;

    let stem = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{variant}_{task}"));
    let prefix = args.out.join(format!("{stem}_{}", args.split));
    let files = export_report(&report, &prefix)?;

    let mut manifest = ManifestBuilder::new("evaluate");
    let mut resolved = Resolved::default();
    resolved.record("split", &args.split);
    manifest.config(resolved.into_map()).input(model_path);
    for f in &files {
        manifest.output(f);
    }
    manifest
        .stat("aggregate_rmse", report.aggregate_rmse)
        .stat("aggregate_mape", report.aggregate_mape)
        .stat("n_samples", report.n_samples);
    manifest.write(&manifest_path_for(&files[0]))?;

    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

const TABLE_TASKS: [&str; 3] = ["ndvi", "vis", "s2bands"];

fn run_all_variants(args: &EvaluateArgs) -> Result<()> {
    let models_dir = args.models.as_ref().expect("clap requires --models");
    let mut model_paths: Vec<PathBuf> = std::fs::read_dir(models_dir)
        .with_context(|| format!("reading models directory {}", models_dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "s2o1"))
        .collect();
    model_paths.sort();
    if model_paths.is_empty() {
        anyhow::bail!(seq2one::Error::Data(format!(
            "no *.s2o1 models found in {}",
            models_dir.display()
        )));
    }

    // (variant, task) -> per-seed aggregate metrics
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    let mut datasets = BTreeMap::new();
    for path in &model_paths {
        let (variant, task, seed, report) =
            evaluate_model_file(path, &args.data, &args.split, &mut datasets)?;
        log::info!(
            "{variant} / {task} / seed {seed}: rmse={:.6} mape={:.4}",
            report.aggregate_rmse,
            report.aggregate_mape
        );
        groups
            .entry((variant, task))
            .or_default()
            .push((report.aggregate_rmse, report.aggregate_mape));
    }

    let methods: Vec<String> = {
        let mut v: Vec<String> = groups.keys().map(|(m, _)| m.clone()).collect();
        v.dedup();
        v
    };
    let mut csv = String::from("method");
    for task in TABLE_TASKS {
        csv.push_str(&format!(",rmse_{task},mape_{task}"));
    }
    csv.push('\n');
    for method in &methods {
        csv.push_str(method);
        for task in TABLE_TASKS {
            match groups.get(&(method.clone(), task.to_string())) {
                Some(seeds) => {
                    let n = seeds.len() as f64;
                    let rmse = seeds.iter().map(|(r, _)| r).sum::<f64>() / n;
                    let mape = seeds.iter().map(|(_, m)| m).sum::<f64>() / n;
                    csv.push_str(&format!(",{},{}", format_f64(rmse), format_f64(mape)));
                }
                None => csv.push_str(",,"),
            }
        }
        csv.push('\n');
    }
    let table_path = args.out.join("comparison.csv");
    std::fs::write(&table_path, csv)?;

    let mut manifest = ManifestBuilder::new("evaluate");
    let mut resolved = Resolved::default();
    resolved.record("split", &args.split);
    resolved.record("all_variants", true);
    manifest.config(resolved.into_map());
    for path in &model_paths {
        manifest.input(path);
    }
    manifest.output(&table_path);
    manifest.stat("models_evaluated", model_paths.len());
    manifest.write(&manifest_path_for(&table_path))?;

    println!("{}", table_path.display());
    Ok(())
}
