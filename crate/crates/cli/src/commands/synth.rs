//! `synth`: generate a seeded synthetic pixel archive and featurize it.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use seq2one::data::{generate_synthetic, write_jsonl, SyntheticConfig};

use super::{build_caches, defaults, TaskArg};
use crate::manifest::{manifest_path_for, ManifestBuilder};
use crate::settings::{
    parse_fractions, resolve_f64, resolve_i64, resolve_string, resolve_u64, resolve_usize,
    Resolved, Settings,
};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for the JSON Lines archive and featurized caches.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pixels to simulate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub pixels: Option<u64>,
    /// Acquisitions per pixel.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub acquisitions: Option<u64>,
    /// Gaussian noise added to every band.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Upper bound of the uniform acquisition gap in days (lower bound 5).
    #[arg(long, value_parser = clap::value_parser!(i64).range(5..))]
    pub max_gap_days: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tasks to featurize (default: all three).
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<TaskArg>>,
    /// Train,val,test fractions, e.g. 0.7,0.15,0.15.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub ndsi_threshold: Option<f64>,
    /// Divisor turning day counts into the time channel.
    #[arg(long)]
    pub time_scale: Option<f64>,
}

pub fn run(args: SynthArgs, settings: &Settings) -> Result<()> {
    let mut resolved = Resolved::default();
    let pixels = resolve_u64(
        args.pixels,
        settings,
        "pixels",
        defaults::PIXELS as u64,
        &mut resolved,
    )? as usize;
    let acquisitions = resolve_u64(
        args.acquisitions,
        settings,
        "acquisitions",
        defaults::ACQUISITIONS as u64,
        &mut resolved,
    )? as usize;
    let noise_sigma = resolve_f64(
        args.noise_sigma,
        settings,
        "noise_sigma",
        defaults::NOISE_SIGMA,
        &mut resolved,
    )?;
    let max_gap_days = resolve_i64(
        args.max_gap_days,
        settings,
        "max_gap_days",
        defaults::MAX_GAP_DAYS,
        &mut resolved,
    )?;
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

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;

    let series = generate_synthetic(&SyntheticConfig {
        n_pixels: pixels,
        n_acquisitions: acquisitions,
        noise_sigma,
        irregular_gap_days: max_gap_days,
        seed,
    })?;
    let jsonl_path = args.out.join("pixels.jsonl");
    write_jsonl(&jsonl_path, &series)?;
    log::info!("wrote {} pixels to {}", series.len(), jsonl_path.display());

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

    let mut manifest = ManifestBuilder::new("synth");
    manifest.seed(seed).config(resolved.into_map());
    manifest.output(&jsonl_path);
    for path in &cache_paths {
        manifest.output(path);
    }
    for (key, value) in stats {
        manifest.stat(&key, value);
    }
    manifest.write(&manifest_path_for(&jsonl_path))?;

    println!("{}", jsonl_path.display());
    for path in cache_paths {
        println!("{}", path.display());
    }
    Ok(())
}
