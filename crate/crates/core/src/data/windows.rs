//! Sliding-window dataset construction: feature extraction, the
//! time-difference channel, group-aware splits, and normalization fitted on
//! the training split only.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{feature_value, FeatureSpec, PixelSeries};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Days between each history acquisition and the target date, divided by
/// `time_scale`. Dates must be strictly increasing and the target strictly
/// after every history date, so the deltas are strictly positive and
/// strictly decreasing.
pub fn time_difference_channel(
    history_dates: &[NaiveDate],
    target_date: NaiveDate,
    time_scale: f64,
) -> Result<Vec<f64>> {
    if time_scale <= 0.0 {
        return Err(Error::Config("time_scale must be positive".into()));
    }
    for pair in history_dates.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Data(format!(
                "history dates not strictly increasing: {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    history_dates
        .iter()
        .map(|&d| {
            let days = (target_date - d).num_days();
            if days <= 0 {
                return Err(Error::Data(format!(
                    "target date {target_date} must be strictly after history date {d}"
                )));
            }
            Ok(days as f64 / time_scale)
        })
        .collect()
}

/// One training window in physical units: `T` rows of input features, the
/// scaled time deltas, and the target vector.
#[derive(Debug, Clone)]
pub struct RawWindow {
    pub pixel_id: String,
    pub target_date: NaiveDate,
    /// Row-major `[T x inputs]`.
    pub inputs: Vec<f64>,
    pub deltas: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub windows: usize,
    pub skipped_short_pixels: usize,
}

/// Slides a `T`-acquisition window over every pixel: the `(T+1)`-th
/// acquisition is the target. Pixels with fewer than `T + 1` acquisitions
/// are skipped and counted.
pub fn build_windows(
    series: &[PixelSeries],
    spec: &FeatureSpec,
    time_steps: usize,
) -> Result<(Vec<RawWindow>, BuildReport)> {
    spec.validate()?;
    if time_steps < 1 {
        return Err(Error::Config("time_steps must be at least 1".into()));
    }
    let mut report = BuildReport::default();
    let mut windows = Vec::new();
    for pixel in series {
        let acqs = &pixel.acquisitions;
        if acqs.len() < time_steps + 1 {
            report.skipped_short_pixels += 1;
            continue;
        }
        for start in 0..acqs.len() - time_steps {
            let history = &acqs[start..start + time_steps];
            let target_acq = &acqs[start + time_steps];
            let mut inputs = Vec::with_capacity(time_steps * spec.inputs.len());
            for acq in history {
                for name in &spec.inputs {
                    inputs.push(feature_value(acq, name)?);
                }
            }
            let dates: Vec<NaiveDate> = history.iter().map(|a| a.date).collect();
            let deltas = time_difference_channel(&dates, target_acq.date, spec.time_scale)?;
            let target = spec
                .targets
                .iter()
                .map(|name| feature_value(target_acq, name))
                .collect::<Result<Vec<f64>>>()?;
            windows.push(RawWindow {
                pixel_id: pixel.pixel_id.clone(),
                target_date: target_acq.date,
                inputs,
                deltas,
                target,
            });
            report.windows += 1;
        }
    }
    Ok((windows, report))
}

/// Seeded group-aware split: pixels are shuffled, then assigned whole to
/// train/val/test in order, cutting at the window-count fractions. Windows
/// from one pixel never straddle partitions.
pub fn split_windows(
    windows: Vec<RawWindow>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<RawWindow>, Vec<RawWindow>, Vec<RawWindow>)> {
    let (f_train, f_val, f_test) = fractions;
    for (name, f) in [("train", f_train), ("val", f_val), ("test", f_test)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!(
                "{name} fraction {f} outside [0, 1]"
            )));
        }
    }
    if ((f_train + f_val + f_test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            f_train + f_val + f_test
        )));
    }

    let total = windows.len();
    let mut by_pixel: BTreeMap<String, Vec<RawWindow>> = BTreeMap::new();
    for w in windows {
        by_pixel.entry(w.pixel_id.clone()).or_default().push(w);
    }
    let mut pixel_ids: Vec<String> = by_pixel.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pixel_ids.shuffle(&mut rng);

    let cut_train = (f_train * total as f64).round() as usize;
    let cut_val = ((f_train + f_val) * total as f64).round() as usize;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut assigned = 0;
    for id in pixel_ids {
        let ws = by_pixel.remove(&id).expect("pixel id from key set");
        let n = ws.len();
        if assigned < cut_train {
            train.extend(ws);
        } else if assigned < cut_val {
            val.extend(ws);
        } else {
            test.extend(ws);
        }
        assigned += n;
    }
    Ok((train, val, test))
}

/// Per-feature standardization statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Normalization {
    /// Fits means and (population) standard deviations over the training
    /// windows: inputs over all samples and time steps, targets over
    /// samples.
    pub fn fit(train: &[RawWindow], n_inputs: usize, n_targets: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data(
                "cannot fit normalization on an empty training split".into(),
            ));
        }
        let mut input_vals: Vec<Vec<f64>> = vec![Vec::new(); n_inputs];
        let mut target_vals: Vec<Vec<f64>> = vec![Vec::new(); n_targets];
        for w in train {
            for row in w.inputs.chunks(n_inputs) {
                for (j, &v) in row.iter().enumerate() {
                    input_vals[j].push(v);
                }
            }
            for (j, &v) in w.target.iter().enumerate() {
                target_vals[j].push(v);
            }
        }
        let fit_one = |vals: &[f64], what: &str| -> Result<(f64, f64)> {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std <= 1e-12 {
                return Err(Error::Data(format!(
                    "{what} has zero variance on the training split"
                )));
            }
            Ok((mean, std))
        };
        let mut norm = Normalization {
            input_mean: Vec::new(),
            input_std: Vec::new(),
            target_mean: Vec::new(),
            target_std: Vec::new(),
        };
        for (j, vals) in input_vals.iter().enumerate() {
            let (m, s) = fit_one(vals, &format!("input feature {j}"))?;
            norm.input_mean.push(m);
            norm.input_std.push(s);
        }
        for (j, vals) in target_vals.iter().enumerate() {
            let (m, s) = fit_one(vals, &format!("target feature {j}"))?;
            norm.target_mean.push(m);
            norm.target_std.push(s);
        }
        Ok(norm)
    }

    pub fn denormalize_target(&self, j: usize, v: f64) -> f64 {
        v * self.target_std[j] + self.target_mean[j]
    }

    pub fn normalize_target(&self, j: usize, v: f64) -> f64 {
        (v - self.target_mean[j]) / self.target_std[j]
    }
}

/// Featurized samples: normalized inputs plus the time channel, normalized
/// targets, and the provenance needed for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedSplit {
    pub n: usize,
    pub time_steps: usize,
    /// Named inputs + 1 time channel.
    pub features: usize,
    pub targets: usize,
    /// Row-major `[n x time_steps x features]`.
    pub x: Vec<f64>,
    /// Row-major `[n x targets]`.
    pub y: Vec<f64>,
    pub pixel_ids: Vec<String>,
    pub target_dates: Vec<NaiveDate>,
}

impl FeaturizedSplit {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn x_tensor(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Data("split has no samples".into()));
        }
        Tensor::new(&[self.n, self.time_steps, self.features], self.x.clone())
    }

    pub fn y_tensor(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Data("split has no samples".into()));
        }
        Tensor::new(&[self.n, self.targets], self.y.clone())
    }
}

fn featurize(
    windows: &[RawWindow],
    spec: &FeatureSpec,
    norm: &Normalization,
    time_steps: usize,
) -> FeaturizedSplit {
    let n_inputs = spec.inputs.len();
    let features = n_inputs + 1;
    let mut x = Vec::with_capacity(windows.len() * time_steps * features);
    let mut y = Vec::with_capacity(windows.len() * spec.targets.len());
    let mut pixel_ids = Vec::with_capacity(windows.len());
    let mut target_dates = Vec::with_capacity(windows.len());
    for w in windows {
        for t in 0..time_steps {
            for j in 0..n_inputs {
                let v = w.inputs[t * n_inputs + j];
                x.push((v - norm.input_mean[j]) / norm.input_std[j]);
            }
            x.push(w.deltas[t]);
        }
        for (j, &v) in w.target.iter().enumerate() {
            y.push(norm.normalize_target(j, v));
        }
        pixel_ids.push(w.pixel_id.clone());
        target_dates.push(w.target_date);
    }
    FeaturizedSplit {
        n: windows.len(),
        time_steps,
        features,
        targets: spec.targets.len(),
        x,
        y,
        pixel_ids,
        target_dates,
    }
}

/// A fully prepared dataset: the fitted feature spec plus the three splits.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedDataset {
    pub spec: FeatureSpec,
    pub time_steps: usize,
    pub train: FeaturizedSplit,
    pub val: FeaturizedSplit,
    pub test: FeaturizedSplit,
}

impl FeaturizedDataset {
    pub fn split(&self, name: &str) -> Result<&FeaturizedSplit> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (valid: train, val, test)"
            ))),
        }
    }
}

/// Windows, splits, fits normalization on the train split, featurizes.
pub fn build_dataset(
    series: &[PixelSeries],
    spec: &FeatureSpec,
    time_steps: usize,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(FeaturizedDataset, BuildReport)> {
    let (windows, report) = build_windows(series, spec, time_steps)?;
    let (train_w, val_w, test_w) = split_windows(windows, fractions, seed)?;
    let norm = Normalization::fit(&train_w, spec.inputs.len(), spec.targets.len())?;
    let mut fitted = spec.clone();
    fitted.normalization = Some(norm.clone());
    let dataset = FeaturizedDataset {
        train: featurize(&train_w, spec, &norm, time_steps),
        val: featurize(&val_w, spec, &norm, time_steps),
        test: featurize(&test_w, spec, &norm, time_steps),
        spec: fitted,
        time_steps,
    };
    Ok((dataset, report))
}

/// Featurized inference batch for prediction at a user-chosen date.
#[derive(Debug, Clone)]
pub struct InferenceBatch {
    pub n: usize,
    pub time_steps: usize,
    pub features: usize,
    /// Row-major `[n x time_steps x features]`.
    pub x: Vec<f64>,
    pub pixel_ids: Vec<String>,
    /// Pixels skipped for lack of `time_steps` acquisitions before the
    /// target date.
    pub skipped: usize,
}

impl InferenceBatch {
    pub fn x_tensor(&self) -> Result<Tensor> {
        if self.n == 0 {
            return Err(Error::Data(
                "no pixel has enough history before the target date".into(),
            ));
        }
        Tensor::new(&[self.n, self.time_steps, self.features], self.x.clone())
    }
}

/// Takes the last `time_steps` acquisitions strictly before `target_date`
/// for each pixel and builds normalized model inputs against that date.
pub fn featurize_inference(
    series: &[PixelSeries],
    spec: &FeatureSpec,
    time_steps: usize,
    target_date: NaiveDate,
) -> Result<InferenceBatch> {
    let norm = spec.normalization.as_ref().ok_or_else(|| {
        Error::Config("feature spec has no fitted normalization".into())
    })?;
    let n_inputs = spec.inputs.len();
    let features = n_inputs + 1;
    let mut x = Vec::new();
    let mut pixel_ids = Vec::new();
    let mut skipped = 0;
    for pixel in series {
        let history: Vec<_> = pixel
            .acquisitions
            .iter()
            .filter(|a| a.date < target_date)
            .collect();
        if history.len() < time_steps {
            skipped += 1;
            continue;
        }
        let history = &history[history.len() - time_steps..];
        let dates: Vec<NaiveDate> = history.iter().map(|a| a.date).collect();
        let deltas = time_difference_channel(&dates, target_date, spec.time_scale)?;
        for (t, acq) in history.iter().enumerate() {
            for (j, name) in spec.inputs.iter().enumerate() {
                let v = feature_value(acq, name)?;
                x.push((v - norm.input_mean[j]) / norm.input_std[j]);
            }
            x.push(deltas[t]);
        }
        pixel_ids.push(pixel.pixel_id.clone());
    }
    Ok(InferenceBatch {
        n: pixel_ids.len(),
        time_steps,
        features,
        x,
        pixel_ids,
        skipped,
    })
}
