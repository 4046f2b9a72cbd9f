//! Cross-module flow: training, serialization, and evaluation compose
//! without losing a bit.

use seq2one::data::{build_dataset, generate_synthetic, FeatureSpec, SyntheticConfig};
use seq2one::metrics::evaluate;
use seq2one::model::{Model, ModelConfig, Variant};
use seq2one::serial::{load_model, save_model};
use seq2one::train::{fit, TrainConfig};

fn toy_setup() -> (seq2one::data::FeaturizedDataset, Model, TrainConfig) {
    let synth = generate_synthetic(&SyntheticConfig {
        n_pixels: 8,
        n_acquisitions: 12,
        noise_sigma: 0.01,
        irregular_gap_days: 10,
        seed: 11,
    })
    .unwrap();
    let spec = FeatureSpec::for_task("ndvi").unwrap();
    let (dataset, _) = build_dataset(&synth, &spec, 5, (0.7, 0.15, 0.15), 11).unwrap();
    let model = Model::build(ModelConfig {
        variant: Variant::AttentionBilstm,
        time_steps: 5,
        input_features: dataset.spec.input_features(),
        hidden_sizes: vec![4],
        output_dim: 1,
        seed: 21,
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 31,
        ..TrainConfig::default()
    };
    (dataset, model, cfg)
}

#[test]
fn trained_model_replays_identically_after_save_load() {
    let (dataset, mut model, cfg) = toy_setup();
    let x = dataset.train.x_tensor().unwrap();
    let y = dataset.train.y_tensor().unwrap();
    fit(&mut model, &x, &y, None, &cfg).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.s2o1");
    save_model(&path, &model, Some("ndvi"), Some(&dataset.spec)).unwrap();
    let loaded = load_model(&path).unwrap();

    // identical predictions on a fixed batch, to 0 ulp
    let (y1, _) = model.predict(&x).unwrap();
    let (y2, _) = loaded.model.predict(&x).unwrap();
    for (a, b) in y1.data().iter().zip(y2.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // evaluate after reload equals evaluate before, bit-exact
    let before = evaluate(&model, &dataset.test, &dataset.spec, "m").unwrap();
    let after = evaluate(&loaded.model, &dataset.test, &dataset.spec, "m").unwrap();
    assert_eq!(
        before.aggregate_rmse.to_bits(),
        after.aggregate_rmse.to_bits()
    );
    assert_eq!(
        before.aggregate_mape.to_bits(),
        after.aggregate_mape.to_bits()
    );
    let spec_back = loaded.feature_spec.unwrap();
    assert_eq!(spec_back, dataset.spec);
}

#[test]
fn identical_seeds_reproduce_the_whole_pipeline() {
    let run = || {
        let (dataset, mut model, cfg) = toy_setup();
        let x = dataset.train.x_tensor().unwrap();
        let y = dataset.train.y_tensor().unwrap();
        let vx = dataset.val.x_tensor().unwrap();
        let vy = dataset.val.y_tensor().unwrap();
        let log = fit(&mut model, &x, &y, Some((&vx, &vy)), &cfg).unwrap();
        let report = evaluate(&model, &dataset.test, &dataset.spec, "m").unwrap();
        (log, report.aggregate_rmse, report.aggregate_mape)
    };
    let (log1, rmse1, mape1) = run();
    let (log2, rmse2, mape2) = run();
    assert_eq!(rmse1.to_bits(), rmse2.to_bits());
    assert_eq!(mape1.to_bits(), mape2.to_bits());
    assert_eq!(log1.records.len(), log2.records.len());
    for (a, b) in log1.records.iter().zip(&log2.records) {
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    }
}
