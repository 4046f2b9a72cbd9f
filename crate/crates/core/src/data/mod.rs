//! Ingestion and feature engineering: pixel time series, vegetation
//! indices, NDSI cloud filtering, sliding windows with the time-difference
//! channel, normalization, group-aware splits, and a seeded synthetic
//! generator for desk-scale verification.

mod indices;
mod synthetic;
mod windows;

pub use indices::{compute_index, INDEX_NAMES};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use windows::{
    build_dataset, build_windows, featurize_inference, split_windows, time_difference_channel,
    BuildReport, FeaturizedDataset, FeaturizedSplit, InferenceBatch, Normalization, RawWindow,
};

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cloud-free multiband observation of a pixel at a known date.
/// Band values are top-of-canopy reflectances, roughly in `[0, 1.2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub date: NaiveDate,
    pub bands: BTreeMap<String, f64>,
}

impl Acquisition {
    fn validate(&self) -> Result<()> {
        for (name, &v) in &self.bands {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "band {name} on {} has invalid reflectance {v}",
                    self.date
                )));
            }
        }
        Ok(())
    }
}

/// All acquisitions of one pixel, sorted by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelSeries {
    pub pixel_id: String,
    pub acquisitions: Vec<Acquisition>,
}

impl PixelSeries {
    /// Sorts by date and checks the series invariants.
    pub fn normalize(&mut self) -> Result<()> {
        self.acquisitions.sort_by_key(|a| a.date);
        for acq in &self.acquisitions {
            acq.validate()?;
        }
        for pair in self.acquisitions.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(Error::Data(format!(
                    "pixel {} has duplicate acquisition date {}",
                    self.pixel_id, pair[0].date
                )));
            }
        }
        Ok(())
    }
}

/// Resolves a feature name to a value: a raw band if present, otherwise a
/// derived vegetation index.
pub fn feature_value(acq: &Acquisition, name: &str) -> Result<f64> {
    if let Some(&v) = acq.bands.get(name) {
        return Ok(v);
    }
    if INDEX_NAMES.contains(&name) {
        return compute_index(name, &acq.bands);
    }
    Err(Error::Data(format!(
        "acquisition on {} is missing band {name}",
        acq.date
    )))
}

/// Drops acquisitions whose NDSI exceeds `threshold` (default 0.4);
/// returns the survivors and the number dropped.
pub fn ndsi_cloud_filter(
    acquisitions: Vec<Acquisition>,
    threshold: f64,
) -> Result<(Vec<Acquisition>, usize)> {
    let before = acquisitions.len();
    let mut kept = Vec::with_capacity(before);
    for acq in acquisitions {
        let ndsi = compute_index("NDSI", &acq.bands)?;
        if ndsi <= threshold {
            kept.push(acq);
        }
    }
    let dropped = before - kept.len();
    Ok((kept, dropped))
}

/// Named input/target feature lists plus the normalization fitted on the
/// training split. The time-difference channel is appended after `inputs`
/// and is scaled by `time_scale` (days / time_scale), not z-scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub task: String,
    pub inputs: Vec<String>,
    pub targets: Vec<String>,
    pub time_scale: f64,
    pub normalization: Option<Normalization>,
}

/// The default vegetation-index set for the multi-VI task.
pub const DEFAULT_VIS: [&str; 5] = ["NDVI", "GNDVI", "NDRE", "SAVI", "EVI"];
/// The default band set for the all-bands task.
pub const DEFAULT_BANDS: [&str; 6] = ["B2", "B3", "B4", "B5", "B8", "B11"];
/// Default divisor for the time channel (days to years).
pub const DEFAULT_TIME_SCALE: f64 = 365.25;

impl FeatureSpec {
    pub fn for_task(task: &str) -> Result<Self> {
        let (inputs, targets): (Vec<String>, Vec<String>) = match task {
            "ndvi" => (vec!["NDVI".into()], vec!["NDVI".into()]),
            "vis" => (
                DEFAULT_VIS.iter().map(|s| s.to_string()).collect(),
                DEFAULT_VIS.iter().map(|s| s.to_string()).collect(),
            ),
            "s2bands" => (
                DEFAULT_BANDS.iter().map(|s| s.to_string()).collect(),
                DEFAULT_BANDS.iter().map(|s| s.to_string()).collect(),
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown task '{other}' (valid: ndvi, vis, s2bands)"
                )))
            }
        };
        Ok(Self {
            task: task.to_string(),
            inputs,
            targets,
            time_scale: DEFAULT_TIME_SCALE,
            normalization: None,
        })
    }

    /// Model input width: named inputs plus the time-difference channel.
    pub fn input_features(&self) -> usize {
        self.inputs.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.targets.is_empty() {
            return Err(Error::Config(
                "feature spec needs at least one input and one target".into(),
            ));
        }
        if self.time_scale <= 0.0 {
            return Err(Error::Config("time_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Reads JSON Lines pixel series: one pixel per line,
/// `{"pixel_id": ..., "acquisitions": [{"date": "YYYY-MM-DD", "bands": {...}}]}`.
pub fn read_jsonl(path: &Path) -> Result<Vec<PixelSeries>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut series: PixelSeries = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        series.normalize()?;
        out.push(series);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, series: &[PixelSeries]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for s in series {
        let line = serde_json::to_string(s)
            .map_err(|e| Error::Data(format!("jsonl encode failed: {e}")))?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}
