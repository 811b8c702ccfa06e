use osc_core::datasets::{gen_blobs, Split};
use osc_core::network::{Activation, Model, Precision};
use osc_core::oscillation::cluster_stats;
use osc_core::train::{accuracy, cross_bit_eval, train, EvalWidth, Regime, TrainConfig};
use osc_core::QuantSpec;

fn config(regime: Regime, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(regime, 9);
    c.max_epochs = epochs;
    c.early_stop_patience = 0;
    c
}

#[test]
fn zero_lambda_reduces_to_baseline() {
    let ds = gen_blobs(3, 4, 8, 60, 1.0).unwrap();
    let model = Model::mlp(8, 16, 2, 4, Activation::Relu, 5).unwrap();
    let spec = QuantSpec::bits(3).unwrap();
    let base = train(model.clone(), &ds, &config(Regime::Baseline, 6)).unwrap();
    let reg = train(model, &ds, &config(Regime::OscReg { spec, lambda: 0.0 }, 6)).unwrap();
    assert_eq!(base.final_model, reg.final_model);
    for (a, b) in base.epochs.iter().zip(&reg.epochs) {
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.val_acc_fp, b.val_acc_fp);
        assert_eq!(b.reg_loss, 0.0);
    }
}

#[test]
fn baseline_solves_separable_blobs() {
    let ds = gen_blobs(11, 2, 16, 200, 0.3).unwrap();
    let model = Model::mlp(16, 32, 2, 2, Activation::Relu, 1).unwrap();
    let out = train(model, &ds, &config(Regime::Baseline, 30)).unwrap();
    let best = out.epochs.iter().map(|e| e.val_acc_fp).fold(0.0, f64::max);
    assert!(best >= 0.99, "{best}");
}

#[test]
fn four_bit_qat_is_close_to_full_precision() {
    let ds = gen_blobs(2, 10, 32, 100, 1.5).unwrap();
    let model = Model::mlp(32, 64, 2, 10, Activation::Relu, 3).unwrap();
    let base = train(model.clone(), &ds, &config(Regime::Baseline, 25)).unwrap();
    let qat = train(model, &ds, &config(Regime::Qat(QuantSpec::bits(4).unwrap()), 25)).unwrap();
    assert!(
        qat.best_metric >= base.best_metric - 0.02,
        "qat {} vs fp {}",
        qat.best_metric,
        base.best_metric
    );
}

#[test]
fn blob_fixture_is_learnable() {
    let ds = gen_blobs(0, 10, 64, 500, 1.5).unwrap();
    let model = Model::mlp(64, 256, 5, 10, Activation::Relu, 0).unwrap();
    let mut c = config(Regime::Baseline, 10);
    c.early_stop_patience = 3;
    let out = train(model, &ds, &c).unwrap();
    assert!(out.best_metric >= 0.85, "{}", out.best_metric);
}

#[test]
fn best_model_reproduces_reported_metric() {
    let ds = gen_blobs(6, 3, 8, 80, 1.0).unwrap();
    let model = Model::mlp(8, 16, 2, 3, Activation::Relu, 6).unwrap();
    let spec = QuantSpec::bits(3).unwrap();
    let out = train(model, &ds, &config(Regime::Qat(spec), 8)).unwrap();
    let val = ds.subset(Split::Val);
    assert_eq!(accuracy(&out.best_model, &val, &Precision::fake_quant(spec)).unwrap(), out.best_metric);
    let test = ds.subset(Split::Test);
    let cells = cross_bit_eval(&out.best_model, &[EvalWidth::Quant(spec), EvalWidth::Fp32], &test).unwrap();
    assert_eq!(cells[0].accuracy, accuracy(&out.best_model, &test, &Precision::fake_quant(spec)).unwrap());
    assert_eq!(cells[1].accuracy, accuracy(&out.best_model, &test, &Precision::Full).unwrap());
}

#[test]
fn regularizer_pushes_weights_to_thresholds() {
    let ds = gen_blobs(4, 4, 16, 100, 1.5).unwrap();
    let model = Model::mlp(16, 64, 2, 4, Activation::Relu, 4).unwrap();
    let spec = QuantSpec::bits(3).unwrap();
    let near = |lambda: f64| {
        let out = train(model.clone(), &ds, &config(Regime::OscReg { spec, lambda }, 15)).unwrap();
        cluster_stats(&out.final_model.weights()[0], spec).unwrap().near_threshold_fraction
    };
    let (a, b) = (near(0.0), near(30.0));
    assert!(b > a, "lambda 30: {b}, lambda 0: {a}");
}

#[test]
fn training_is_deterministic() {
    let ds = gen_blobs(8, 3, 8, 50, 1.0).unwrap();
    let model = Model::mlp(8, 16, 2, 3, Activation::Relu, 8).unwrap();
    let spec = QuantSpec::ternary();
    let c = config(Regime::OscReg { spec, lambda: 1.0 }, 4);
    let a = train(model.clone(), &ds, &c).unwrap();
    let b = train(model, &ds, &c).unwrap();
    assert_eq!(a.final_model, b.final_model);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(
        a.trackers.iter().flatten().map(|t| t.counts().to_vec()).collect::<Vec<_>>(),
        b.trackers.iter().flatten().map(|t| t.counts().to_vec()).collect::<Vec<_>>()
    );
}
