use std::path::Path;

use osc_core::datasets::Split;
use osc_core::network::Precision;
use osc_core::train::{accuracy, EvalWidth};
use osc_lab::config::{ExperimentConfig, SweepConfig};
use osc_lab::harness::{self, run_experiment};
use osc_lab::idx::{write_idx, DatasetManifest, IdxImages};
use osc_lab::record::{final_counts, read_csv, EpochRow, RunRecord, OSCILLATION_LOG_FILE, RECORD_FILE};
use osc_lab::{checkpoint, LabError};
use serde_json::json;

fn tiny(regime: &str, extra: serde_json::Value) -> ExperimentConfig {
    let mut v = json!({
        "schema_version": 1,
        "regime": regime,
        "max_epochs": 4,
        "patience": 0,
        "model": {"hidden": 12, "depth": 2},
        "dataset": {"kind": "blobs", "seed": 2, "classes": 3, "dims": 6, "per_class": 40, "spread": 1.0}
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    ExperimentConfig::from_value(&v).unwrap()
}

#[test]
fn run_record_round_trips_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("osc_reg", json!({"bits": "ternary", "lambda": 0.3}));
    let out = run_experiment(&cfg, Path::new(""), dir.path()).unwrap();
    let path = dir.path().join(RECORD_FILE);
    let loaded = RunRecord::load(&path).unwrap();
    assert_eq!(loaded, out.record);
    let copy = dir.path().join("copy.json");
    loaded.save(&copy).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
    assert_eq!(ExperimentConfig::from_value(&loaded.config.to_value()).unwrap(), cfg);
}

#[test]
fn idx_dataset_trains_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    // Two 2×2 classes: bright top row versus bright bottom row, with noise.
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..120u32 {
        let c = (i % 2) as u8;
        let j = (i * 37 % 50) as u8;
        let (hi, lo) = (200 + j, j);
        pixels.extend_from_slice(&if c == 0 { [hi, hi, lo, lo] } else { [lo, lo, hi, hi] });
        labels.push(c);
    }
    let images = IdxImages { count: 120, rows: 2, cols: 2, pixels };
    write_idx(&dir.path().join("img.idx"), &dir.path().join("lbl.idx"), &images, &labels).unwrap();
    let manifest = DatasetManifest { images: "img.idx".into(), labels: "lbl.idx".into(), split_seed: 3 };
    std::fs::write(dir.path().join("data.json"), serde_json::to_vec(&manifest).unwrap()).unwrap();
    let ds = DatasetManifest::open(&dir.path().join("data.json")).unwrap();
    assert_eq!((ds.len(), ds.dims(), ds.num_classes), (120, 4, 2));
    assert_eq!(ds.features.row(0), &[200.0 / 255.0, 200.0 / 255.0, 0.0, 0.0]);

    let v = json!({
        "schema_version": 1, "regime": "baseline", "max_epochs": 30, "patience": 0, "lr": 0.01,
        "model": {"hidden": 8, "depth": 1},
        "dataset": {"kind": "idx", "manifest": "data.json"}
    });
    let cfg = ExperimentConfig::from_value(&v).unwrap();
    let run = run_experiment(&cfg, dir.path(), &dir.path().join("run")).unwrap();
    assert_eq!(run.record.test_acc_fp, 1.0);
}

#[test]
fn checkpoint_preserves_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("qat", json!({"bits": 4}));
    let data = harness::load_dataset(&cfg.dataset, Path::new("")).unwrap();
    let run = harness::run_on(&cfg, &data, dir.path()).unwrap();
    let model = checkpoint::load(&dir.path().join(&run.record.checkpoint)).unwrap();
    let test = data.subset(Split::Test);
    assert_eq!(accuracy(&model, &test, &Precision::Full).unwrap(), run.record.test_acc_fp);
    let cells = harness::crossbit_checkpoint(&dir.path().join(&run.record.checkpoint), &data, &[EvalWidth::Fp32]).unwrap();
    assert_eq!(cells[0].accuracy, run.record.test_acc_fp);
}

#[test]
fn oscillation_log_matches_trackers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("qat", json!({"bits": 2, "oscillation_log_layers": [0, 1], "oscillation_log_every": 3}));
    let run = run_experiment(&cfg, Path::new(""), dir.path()).unwrap();
    let log = dir.path().join(OSCILLATION_LOG_FILE);
    for layer in [0, 1] {
        let counts = run.final_counts[layer].as_ref().unwrap();
        assert_eq!(&final_counts(&log, layer).unwrap(), counts);
    }
    let epochs: Vec<EpochRow> = read_csv(&dir.path().join("epochs.csv")).unwrap();
    assert_eq!(epochs.len(), 4);
    let text = std::fs::read_to_string(&log).unwrap();
    let logged: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(logged.into_iter().collect::<Vec<_>>(), ["0", "3", "4"]);
}

#[test]
fn sweep_aggregates_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let base = json!({
        "regime": "qat", "bits": 3, "max_epochs": 5, "patience": 0, "cadence": "step", "lr": 0.01, "batch_size": 8,
        "model": {"hidden": 12, "depth": 2},
        "dataset": {"kind": "blobs", "seed": 2, "classes": 3, "dims": 6, "per_class": 40, "spread": 1.0}
    });
    let v = json!({
        "schema_version": 1,
        "base": base,
        "configs": [{"id": "a"}, {"id": "b"}, {"id": "c", "regime": "baseline", "bits": null, "tracking_bits": 3}],
        "seeds": [1, 2, 3],
        "compare": [["a", "b"], ["a", "c"]],
        "threads": 2
    });
    let sweep = SweepConfig::from_value(&v).unwrap();
    let report = harness::sweep(&sweep, Path::new(""), dir.path()).unwrap();
    let a = report.config("a").unwrap();
    assert_eq!(a.seeds, [1, 2, 3]);
    let fp = a.cross_bit.iter().find(|w| w.eval_width == "fp32").unwrap();
    assert_eq!(fp.summary.n, 3);
    assert!(fp.summary.std.is_some());
    // Identical configs and seeds give identical count samples.
    let same = report.comparison("a", "b").unwrap();
    assert_eq!(same.t, Some(0.0), "{:?}", same.error);
    assert_eq!(same.p, Some(1.0));
    let diff = report.comparison("a", "c").unwrap();
    assert!(diff.t.is_some() && diff.n_a == diff.n_b);
    // Re-aggregation from disk gives the same report.
    assert_eq!(harness::report(&sweep, dir.path()).unwrap(), report);

    std::fs::remove_file(harness::run_dir(dir.path(), "b", 2).join(RECORD_FILE)).unwrap();
    match harness::report(&sweep, dir.path()) {
        Err(LabError::MissingRuns(m)) => assert_eq!(m, ["b/seed-2"]),
        other => panic!("{other:?}"),
    }
}

mod properties {
    use osc_core::network::{Activation, LayerSpec, Model};
    use osc_core::Matrix;
    use osc_lab::checkpoint;
    use osc_lab::record::{CrossBitCell, EpochSeries};
    use proptest::prelude::*;
    use std::path::Path;

    fn any_finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn checkpoint_round_trips_bitwise(
            dims in (1usize..5, 1usize..5, 1usize..5),
            seed in any::<u64>(),
            relu in any::<bool>(),
            quantized in any::<bool>(),
        ) {
            let (a, b, c) = dims;
            let act = if relu { Activation::Relu } else { Activation::Identity };
            let layers = vec![
                LayerSpec { in_dim: a, out_dim: b, activation: act, quantized },
                LayerSpec { in_dim: b, out_dim: c, activation: Activation::Identity, quantized: !quantized },
            ];
            let mut m = Model::init(layers, seed).unwrap();
            m.set_biases(1, Matrix::filled(1, c, -0.0)).unwrap();
            let back = checkpoint::decode(Path::new("mem"), &checkpoint::encode(&m)).unwrap();
            prop_assert_eq!(back.layers(), m.layers());
            for (x, y) in back.weights().iter().chain(back.biases()).zip(m.weights().iter().chain(m.biases())) {
                let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }

        #[test]
        fn record_floats_survive_json(
            values in prop::collection::vec(any_finite(), 1..20),
            target in prop::option::of(any_finite()),
        ) {
            let series = EpochSeries {
                epoch: (1..=values.len()).collect(),
                train_loss: values.clone(),
                reg_loss: values.iter().map(|v| -v).collect(),
                val_acc_fp: values.clone(),
                val_acc_target: vec![target; values.len()],
                scales: vec![values.clone()],
            };
            let back: EpochSeries = serde_json::from_str(&serde_json::to_string(&series).unwrap()).unwrap();
            prop_assert_eq!(&back, &series);
            let cell = CrossBitCell { eval_width: "3bit".into(), accuracy: values[0] };
            let back: CrossBitCell = serde_json::from_str(&serde_json::to_string(&cell).unwrap()).unwrap();
            prop_assert_eq!(back.accuracy.to_bits(), cell.accuracy.to_bits());
        }
    }
}
