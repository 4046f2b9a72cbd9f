//! `train`: fit one variant on one task's featurized cache.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use seq2one::model::{Model, ModelConfig};
use seq2one::serial::{load_dataset, save_model};
use seq2one::train::{fit, TrainConfig};

use super::{cache_path, defaults, TaskArg, VariantArg};
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::settings::{
    parse_hidden, resolve_f64, resolve_string, resolve_u64, resolve_usize, Resolved, Settings,
};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding dataset_<task>.s2o1d caches.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub task: TaskArg,
    #[arg(long)]
    pub variant: VariantArg,
    /// Output directory for the model, training log, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for both parameter init and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Global gradient-norm ceiling; 0 disables clipping.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Comma-separated hidden sizes, e.g. 64,64.
    #[arg(long)]
    pub hidden: Option<String>,
}

pub fn run(args: TrainArgs, settings: &Settings) -> Result<()> {
    let mut resolved = Resolved::default();
    let seed = resolve_u64(args.seed, settings, "seed", defaults::SEED, &mut resolved)?;
    let epochs = resolve_usize(args.epochs, settings, "epochs", defaults::EPOCHS, &mut resolved)?;
    let batch_size = resolve_usize(
        args.batch_size,
        settings,
        "batch_size",
        defaults::BATCH_SIZE,
        &mut resolved,
    )?;
    let learning_rate = resolve_f64(
        args.learning_rate,
        settings,
        "learning_rate",
        defaults::LEARNING_RATE,
        &mut resolved,
    )?;
    let beta1 = resolve_f64(None, settings, "beta1", defaults::BETA1, &mut resolved)?;
    let beta2 = resolve_f64(None, settings, "beta2", defaults::BETA2, &mut resolved)?;
    let eps_opt = resolve_f64(None, settings, "eps_opt", defaults::EPS_OPT, &mut resolved)?;
    let patience = resolve_usize(
        args.patience,
        settings,
        "patience",
        defaults::PATIENCE,
        &mut resolved,
    )?;
    let clip_norm = resolve_f64(
        args.clip_norm,
        settings,
        "clip_norm",
        defaults::CLIP_NORM,
        &mut resolved,
    )?;
    let hidden_raw = resolve_string(
        args.hidden,
        settings,
        "hidden_sizes",
        defaults::HIDDEN_SIZES,
        &mut resolved,
    );
    let hidden_sizes = parse_hidden(&hidden_raw)?;

    let cache = cache_path(&args.data, args.task.name());
    let dataset = load_dataset(&cache)?;
    if dataset.spec.task != args.task.name() {
        anyhow::bail!(seq2one::Error::Config(format!(
            "cache {} holds task {}, expected {}",
            cache.display(),
            dataset.spec.task,
            args.task.name()
        )));
    }

    let model_config = ModelConfig {
        variant: args.variant.to_variant(),
        time_steps: dataset.time_steps,
        input_features: dataset.train.features,
        hidden_sizes,
        output_dim: dataset.train.targets,
        seed,
    };
    let train_config = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        beta1,
        beta2,
        eps_opt,
        patience,
        seed,
        clip_norm: if clip_norm > 0.0 { Some(clip_norm) } else { None },
    };

    let mut model = Model::build(model_config)?;
    log::info!(
        "training {} on {} ({} samples, {} parameters)",
        args.variant.to_variant().name(),
        args.task.name(),
        dataset.train.n,
        model.param_count()
    );

    let x = dataset.train.x_tensor()?;
    let y = dataset.train.y_tensor()?;
    let val_tensors = if dataset.val.is_empty() {
        None
    } else {
        Some((dataset.val.x_tensor()?, dataset.val.y_tensor()?))
    };
    let val_ref = val_tensors.as_ref().map(|(a, b)| (a, b));
    let log = fit(&mut model, &x, &y, val_ref, &train_config)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    let stem = format!(
        "{}_{}_seed{}",
        args.variant.to_variant().name(),
        args.task.name(),
        seed
    );
    let model_path = args.out.join(format!("{stem}.s2o1"));
    save_model(&model_path, &model, Some(args.task.name()), Some(&dataset.spec))?;
    let log_path = args.out.join(format!("{stem}_train_log.csv"));
    log.write_csv(&log_path)?;

    let final_loss = log.records.last().map(|r| r.train_loss);
    let mut manifest = ManifestBuilder::new("train");
    manifest
        .seed(seed)
        .config(resolved.into_map())
        .input(&cache)
        .output(&model_path)
        .output(&log_path)
        .stat("epochs_run", log.records.len())
        .stat("best_epoch", log.best_epoch);
    if let Some(loss) = final_loss {
        manifest.stat("final_train_loss", loss);
    }
    manifest.write(&manifest_path_for(&model_path))?;

    println!("{}", model_path.display());
    println!("{}", log_path.display());
    Ok(())
}
