//! Evaluation metrics (RMSE, MAPE) and report export in the shape of the
//! comparison tables and scatter plots the forecasters are judged by.

use std::path::{Path, PathBuf};

use crate::data::{FeatureSpec, FeaturizedSplit};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::serial::format_f64;
use crate::tensor::Tensor;

/// Targets with magnitude below this are excluded from MAPE (relative
/// error near zero is unbounded); they still count toward RMSE.
pub const DEFAULT_MAPE_EXCLUDE: f64 = 1e-3;

/// Root mean square error.
pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Data("rmse of an empty vector".into()));
    }
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "rmse lengths differ: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    let sum: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&t, &p)| (p - t) * (p - t))
        .sum();
    Ok((sum / y.len() as f64).sqrt())
}

/// Mean absolute percentage error (in percent) over entries with
/// `|y| >= exclude_below`; returns the excluded count.
pub fn mape(y: &[f64], y_hat: &[f64], exclude_below: f64) -> Result<(f64, usize)> {
    if y.len() != y_hat.len() {
        return Err(Error::Shape(format!(
            "mape lengths differ: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    let mut sum = 0.0;
    let mut included = 0_usize;
    for (&t, &p) in y.iter().zip(y_hat) {
        if t.abs() < exclude_below {
            continue;
        }
        sum += ((p - t) / t).abs();
        included += 1;
    }
    if included == 0 {
        return Err(Error::Data(
            "all targets fall below the MAPE exclusion threshold".into(),
        ));
    }
    Ok((100.0 * sum / included as f64, y.len() - included))
}

#[derive(Debug, Clone)]
pub struct TargetMetrics {
    pub name: String,
    pub rmse: f64,
    pub mape: f64,
    pub n: usize,
    pub n_mape_excluded: usize,
    /// `(true, predicted)` pairs in physical units, for scatter export.
    pub scatter: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub method: String,
    pub task: String,
    pub per_target: Vec<TargetMetrics>,
    /// Pooled over all (sample, target) residuals.
    pub aggregate_rmse: f64,
    pub aggregate_mape: f64,
    pub n_samples: usize,
    pub n_mape_excluded: usize,
}

/// Builds a report from flattened `[n x targets]` truth/prediction arrays
/// in physical units.
pub fn report_from_pairs(
    method: &str,
    task: &str,
    target_names: &[String],
    truths: &[f64],
    predictions: &[f64],
    exclude_below: f64,
) -> Result<MetricsReport> {
    let d = target_names.len();
    if d == 0 || truths.len() != predictions.len() || truths.len() % d != 0 {
        return Err(Error::Shape(format!(
            "inconsistent report inputs: {} truths, {} predictions, {d} targets",
            truths.len(),
            predictions.len()
        )));
    }
    let n = truths.len() / d;
    let mut per_target = Vec::with_capacity(d);
    for (j, name) in target_names.iter().enumerate() {
        let t: Vec<f64> = (0..n).map(|i| truths[i * d + j]).collect();
        let p: Vec<f64> = (0..n).map(|i| predictions[i * d + j]).collect();
        let r = rmse(&t, &p)?;
        let (m, excluded) = mape(&t, &p, exclude_below)?;
        per_target.push(TargetMetrics {
            name: name.clone(),
            rmse: r,
            mape: m,
            n,
            n_mape_excluded: excluded,
            scatter: t.into_iter().zip(p).collect(),
        });
    }
    let aggregate_rmse = rmse(truths, predictions)?;
    let (aggregate_mape, n_mape_excluded) = mape(truths, predictions, exclude_below)?;
    Ok(MetricsReport {
        method: method.to_string(),
        task: task.to_string(),
        per_target,
        aggregate_rmse,
        aggregate_mape,
        n_samples: n,
        n_mape_excluded,
    })
}

/// Runs the model over a featurized split, de-normalizes predictions and
/// targets back to physical units, and assembles the report.
pub fn evaluate(
    model: &Model,
    split: &FeaturizedSplit,
    spec: &FeatureSpec,
    method: &str,
) -> Result<MetricsReport> {
    let norm = spec
        .normalization
        .as_ref()
        .ok_or_else(|| Error::Config("feature spec has no fitted normalization".into()))?;
    if model.config().input_features != split.features {
        return Err(Error::Config(format!(
            "model expects {} input features, split provides {}",
            model.config().input_features,
            split.features
        )));
    }
    if model.config().output_dim != split.targets || spec.targets.len() != split.targets {
        return Err(Error::Config(format!(
            "model outputs {} targets, split provides {}",
            model.config().output_dim,
            split.targets
        )));
    }
    if split.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }

    let d = split.targets;
    let row = split.time_steps * split.features;
    let mut truths = Vec::with_capacity(split.n * d);
    let mut predictions = Vec::with_capacity(split.n * d);
    const CHUNK: usize = 512;
    for start in (0..split.n).step_by(CHUNK) {
        let end = (start + CHUNK).min(split.n);
        let xb = Tensor::new(
            &[end - start, split.time_steps, split.features],
            split.x[start * row..end * row].to_vec(),
        )?;
        let (y_hat, _) = model.predict(&xb)?;
        for i in 0..end - start {
            for j in 0..d {
                truths.push(norm.denormalize_target(j, split.y[(start + i) * d + j]));
                predictions.push(norm.denormalize_target(j, y_hat.data()[i * d + j]));
            }
        }
    }
    report_from_pairs(
        method,
        &spec.task,
        &spec.targets,
        &truths,
        &predictions,
        DEFAULT_MAPE_EXCLUDE,
    )
}

/// Writes `<prefix>_metrics.csv` (per-target rows plus an `all` aggregate
/// row) and one `<prefix>_scatter_<target>.csv` per target. Returns the
/// paths written.
pub fn export_report(report: &MetricsReport, path_prefix: &Path) -> Result<Vec<PathBuf>> {
    let prefix = path_prefix
        .to_str()
        .ok_or_else(|| Error::Config("non-UTF-8 output prefix".into()))?;
    let mut written = Vec::new();

    let metrics_path = PathBuf::from(format!("{prefix}_metrics.csv"));
    let mut table = String::from("method,target,rmse,mape,n,n_excluded\n");
    for t in &report.per_target {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            report.method,
            t.name,
            format_f64(t.rmse),
            format_f64(t.mape),
            t.n,
            t.n_mape_excluded
        ));
    }
    table.push_str(&format!(
        "{},all,{},{},{},{}\n",
        report.method,
        format_f64(report.aggregate_rmse),
        format_f64(report.aggregate_mape),
        report.n_samples,
        report.n_mape_excluded
    ));
    std::fs::write(&metrics_path, table)?;
    written.push(metrics_path);

    for t in &report.per_target {
        let path = PathBuf::from(format!("{prefix}_scatter_{}.csv", t.name));
        let mut csv = String::from("true,predicted\n");
        for (truth, pred) in &t.scatter {
            csv.push_str(&format!("{},{}\n", format_f64(*truth), format_f64(*pred)));
        }
        std::fs::write(&path, csv)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, generate_synthetic, FeatureSpec, SyntheticConfig};
    use crate::model::{Model, ModelConfig, Variant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_fixtures() {
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        let got = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((got - 12.5_f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[], &[]), Err(Error::Data(_))));
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // two-pass reference: residuals first, then the mean
        let residuals: Vec<f64> = y.iter().zip(&p).map(|(a, b)| b - a).collect();
        let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
        let want = mean_sq.sqrt();
        let got = rmse(&y, &p).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn mape_fixtures() {
        let (m, excluded) = mape(&[1.0, 2.0], &[1.1, 1.8], DEFAULT_MAPE_EXCLUDE).unwrap();
        assert!((m - 10.0).abs() < 1e-12);
        assert_eq!(excluded, 0);

        let y = vec![1.0, 2.0];
        let (m, _) = mape(&y, &y, DEFAULT_MAPE_EXCLUDE).unwrap();
        assert_eq!(m, 0.0);
    }

    #[test]
    fn mape_excludes_near_zero_targets() {
        let (m, excluded) = mape(&[1e-6, 1.0], &[0.5, 1.1], 1e-3).unwrap();
        assert_eq!(excluded, 1);
        assert!((m - 10.0).abs() < 1e-9);

        assert!(matches!(
            mape(&[1e-6, 1e-7], &[0.5, 0.5], 1e-3),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let y = vec![0.5, 1.5, 2.5, 3.5];
        let p = vec![0.4, 1.7, 2.2, 3.9];
        let y2 = vec![3.5, 0.5, 2.5, 1.5];
        let p2 = vec![3.9, 0.4, 2.2, 1.7];
        assert_eq!(rmse(&y, &p).unwrap(), rmse(&y2, &p2).unwrap());
        assert_eq!(
            mape(&y, &p, 1e-3).unwrap(),
            mape(&y2, &p2, 1e-3).unwrap()
        );
    }

    #[test]
    fn rmse_scales_linearly_with_denormalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (std, mean) = (0.17, 0.45);
        let y_phys: Vec<f64> = y.iter().map(|v| v * std + mean).collect();
        let p_phys: Vec<f64> = p.iter().map(|v| v * std + mean).collect();
        let normalized = rmse(&y, &p).unwrap();
        let physical = rmse(&y_phys, &p_phys).unwrap();
        assert!((physical - normalized * std).abs() < 1e-9);
    }

    #[test]
    fn oracle_predictor_scores_zero() {
        let names = vec!["NDVI".to_string()];
        let truths = vec![0.2, 0.4, 0.6];
        let report =
            report_from_pairs("oracle", "ndvi", &names, &truths, &truths, 1e-3).unwrap();
        assert_eq!(report.per_target[0].rmse, 0.0);
        assert_eq!(report.per_target[0].mape, 0.0);
        assert_eq!(report.aggregate_rmse, 0.0);
    }

    fn toy_dataset() -> crate::data::FeaturizedDataset {
        let synth = generate_synthetic(&SyntheticConfig {
            n_pixels: 6,
            n_acquisitions: 12,
            noise_sigma: 0.01,
            irregular_gap_days: 10,
            seed: 5,
        })
        .unwrap();
        let spec = FeatureSpec::for_task("ndvi").unwrap();
        build_dataset(&synth, &spec, 5, (1.0, 0.0, 0.0), 5).unwrap().0
    }

    #[test]
    fn constant_mean_predictor_rmse_equals_target_std() {
        let dataset = toy_dataset();
        let mut model = Model::build(ModelConfig {
            variant: Variant::AttentionBilstm,
            time_steps: 5,
            input_features: 2,
            hidden_sizes: vec![3],
            output_dim: 1,
            seed: 1,
        })
        .unwrap();
        // zero trainable parameters predict normalized 0, i.e. the
        // train-split mean in physical units
        for block in model.blocks_mut() {
            if block.trainable {
                block.value.data_mut().fill(0.0);
            }
        }
        let report = evaluate(&model, &dataset.train, &dataset.spec, "zero").unwrap();
        // the train targets' population std in physical units
        let norm = dataset.spec.normalization.as_ref().unwrap();
        let phys: Vec<f64> = dataset
            .train
            .y
            .iter()
            .map(|&v| norm.denormalize_target(0, v))
            .collect();
        let mean = phys.iter().sum::<f64>() / phys.len() as f64;
        let std = (phys.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / phys.len() as f64)
            .sqrt();
        assert!(
            (report.per_target[0].rmse - std).abs() < 1e-9,
            "{} vs {std}",
            report.per_target[0].rmse
        );
    }

    #[test]
    fn feature_mismatch_is_config_error() {
        let dataset = toy_dataset();
        let model = Model::build(ModelConfig {
            variant: Variant::Bilstm,
            time_steps: 5,
            input_features: 6, // dataset provides 2
            hidden_sizes: vec![3],
            output_dim: 1,
            seed: 1,
        })
        .unwrap();
        assert!(matches!(
            evaluate(&model, &dataset.train, &dataset.spec, "m"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn export_round_trips_and_matches_aggregate() {
        let dataset = toy_dataset();
        let model = Model::build(ModelConfig {
            variant: Variant::AttentionLstm,
            time_steps: 5,
            input_features: 2,
            hidden_sizes: vec![3],
            output_dim: 1,
            seed: 2,
        })
        .unwrap();
        let report = evaluate(&model, &dataset.train, &dataset.spec, "toy").unwrap();

        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("toy");
        let files = export_report(&report, &prefix).unwrap();
        assert_eq!(files.len(), 2); // metrics + 1 scatter

        // parse the scatter back and recompute the aggregate
        let scatter_csv = std::fs::read_to_string(&files[1]).unwrap();
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for line in scatter_csv.lines().skip(1) {
            let (t, p) = line.split_once(',').unwrap();
            truths.push(t.parse::<f64>().unwrap());
            preds.push(p.parse::<f64>().unwrap());
        }
        let recomputed = rmse(&truths, &preds).unwrap();
        assert!(
            (recomputed - report.aggregate_rmse).abs() < 1e-9,
            "{recomputed} vs {}",
            report.aggregate_rmse
        );

        // parse the metrics table back
        let table = std::fs::read_to_string(&files[0]).unwrap();
        let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], "toy");
        assert_eq!(row[1], "NDVI");
        let rmse_back: f64 = row[2].parse().unwrap();
        assert!((rmse_back - report.per_target[0].rmse).abs() < 1e-9);
    }

    #[test]
    fn empty_scatter_exports_header_only() {
        let report = MetricsReport {
            method: "m".into(),
            task: "ndvi".into(),
            per_target: vec![TargetMetrics {
                name: "NDVI".into(),
                rmse: 0.0,
                mape: 0.0,
                n: 0,
                n_mape_excluded: 0,
                scatter: Vec::new(),
            }],
            aggregate_rmse: 0.0,
            aggregate_mape: 0.0,
            n_samples: 0,
            n_mape_excluded: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let files = export_report(&report, &dir.path().join("empty")).unwrap();
        let scatter = std::fs::read_to_string(&files[1]).unwrap();
        assert_eq!(scatter, "true,predicted\n");
    }
}
