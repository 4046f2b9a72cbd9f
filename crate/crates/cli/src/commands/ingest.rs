//! `ingest`: featurize an existing JSON Lines pixel archive.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use seq2one::data::read_jsonl;

use super::{build_caches, defaults, TaskArg};
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::settings::{
    parse_fractions, resolve_f64, resolve_string, resolve_u64, resolve_usize, Resolved, Settings,
};

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// JSON Lines input: one pixel per line with dated band maps.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the featurized caches.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<TaskArg>>,
    /// Train,val,test fractions, e.g. 0.7,0.15,0.15.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ndsi_threshold: Option<f64>,
    #[arg(long)]
    pub time_scale: Option<f64>,
}

pub fn run(args: IngestArgs, settings: &Settings) -> Result<()> {
    let mut resolved = Resolved::default();
    let seed = resolve_u64(args.seed, settings, "seed", defaults::SEED, &mut resolved)?;
    let split = resolve_string(args.split, settings, "split", defaults::SPLIT, &mut resolved);
    let fractions = parse_fractions(&split)?;
    let ndsi_threshold = resolve_f64(
        args.ndsi_threshold,
        settings,
        "ndsi_threshold",
        defaults::NDSI_THRESHOLD,
        &mut resolved,
    )?;
    let time_scale = resolve_f64(
        args.time_scale,
        settings,
        "time_scale",
        defaults::TIME_SCALE,
        &mut resolved,
    )?;
    let time_steps = resolve_usize(
        None,
        settings,
        "time_steps",
        defaults::TIME_STEPS,
        &mut resolved,
    )?;
    let tasks = args.tasks.unwrap_or_else(|| TaskArg::all().to_vec());

    let series = read_jsonl(&args.input)?;
    log::info!("read {} pixels from {}", series.len(), args.input.display());
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;

    let (cache_paths, stats) = build_caches(
        series,
        &args.out,
        &tasks,
        time_steps,
        fractions,
        seed,
        ndsi_threshold,
        time_scale,
    )?;

    let primary = cache_paths.first().expect("at least one task").clone();
    let mut manifest = ManifestBuilder::new("ingest");
    manifest.seed(seed).config(resolved.into_map());
    manifest.input(&args.input);
    for path in &cache_paths {
        manifest.output(path);
    }
    for (key, value) in stats {
        manifest.stat(&key, value);
    }
    manifest.write(&manifest_path_for(&primary))?;

    for path in cache_paths {
        println!("{}", path.display());
    }
    Ok(())
}
