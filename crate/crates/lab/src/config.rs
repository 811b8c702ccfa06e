//! Experiment and sweep configuration documents.
//!
//! Configs are JSON objects carrying a `schema_version`. Validation collects
//! every problem before failing, so one run of the tool reports all
//! offending keys at once. Command-line flags are applied as overrides on
//! the parsed object before validation, which keeps one code path and lets
//! every flag be expressed in a file too.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use osc_core::network::{AdamConfig, Activation};
use osc_core::oscillation::TrackingMode;
use osc_core::train::{Cadence, EvalWidth, Regime, TrainConfig, DEFAULT_LAMBDA};
use osc_core::QuantSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{LabError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// A quantizer width as written in configs: `"ternary"`, `"fp32"`, `"4bit"`,
/// `"4"` or the integer `4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Width(pub EvalWidth);

impl Width {
    pub fn spec(&self) -> Option<QuantSpec> {
        match self.0 {
            EvalWidth::Fp32 => None,
            EvalWidth::Quant(s) => Some(s),
        }
    }

    pub fn label(&self) -> String {
        self.0.label()
    }
}

impl std::str::FromStr for Width {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "ternary" => return Ok(Width(EvalWidth::Quant(QuantSpec::ternary()))),
            "fp32" => return Ok(Width(EvalWidth::Fp32)),
            _ => {}
        }
        let digits = t.strip_suffix("bit").unwrap_or(&t);
        let b: u32 = digits
            .parse()
            .map_err(|_| format!("unknown width {s:?} (expected ternary, fp32 or a bit count)"))?;
        QuantSpec::bits(b)
            .map(|q| Width(EvalWidth::Quant(q)))
            .map_err(|e| e.to_string())
    }
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for Width {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Width {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(b) => QuantSpec::bits(b)
                .map(|q| Width(EvalWidth::Quant(q)))
                .map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Baseline,
    Qat,
    OscReg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Number of hidden layers.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> usize {
    256
}
fn default_depth() -> usize {
    5
}
fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            depth: default_depth(),
            activation: default_activation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        #[serde(default)]
        seed: u64,
        classes: usize,
        dims: usize,
        per_class: usize,
        spread: f64,
    },
    /// IDX files listed in a manifest; relative paths resolve against the
    /// config file's directory.
    Idx { manifest: PathBuf },
}

impl DatasetConfig {
    /// The 10-class, 64-dimensional blob fixture.
    pub fn blob_fixture() -> Self {
        DatasetConfig::Blobs {
            seed: 7,
            classes: 10,
            dims: 64,
            per_class: 500,
            spread: 3.0,
        }
    }
}

/// A validated single-run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub id: String,
    pub regime: RegimeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<Width>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub lr: f64,
    pub max_epochs: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scale_frozen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking_bits: Option<Width>,
    pub tracking_mode: TrackingMode,
    pub cadence: CadenceName,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub eval_widths: Vec<Width>,
    /// Layers written to the oscillation log; empty disables the log.
    pub oscillation_log_layers: Vec<usize>,
    /// Log every n-th epoch (the initial and final epochs are always written).
    pub oscillation_log_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CadenceName {
    Epoch,
    Step,
}

const KEYS: &[&str] = &[
    "schema_version",
    "id",
    "regime",
    "bits",
    "lambda",
    "lr",
    "max_epochs",
    "patience",
    "batch_size",
    "seed",
    "scale_frozen",
    "tracking_bits",
    "tracking_mode",
    "cadence",
    "model",
    "dataset",
    "eval_widths",
    "oscillation_log_layers",
    "oscillation_log_every",
];

fn take<T: DeserializeOwned>(map: &Map<String, Value>, key: &str, errors: &mut Vec<String>) -> Option<T> {
    let v = map.get(key).filter(|v| !v.is_null())?;
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            errors.push(format!("{key}: {e}"));
            None
        }
    }
}

impl ExperimentConfig {
    /// Validates a parsed JSON object. Every problem is reported, each
    /// prefixed with the offending key.
    pub fn from_value(value: &Value) -> Result<Self> {
        let Some(map) = value.as_object() else {
            return Err(LabError::Config(vec!["<root>: expected a JSON object".into()]));
        };
        let mut errors = Vec::new();
        for key in map.keys() {
            if !KEYS.contains(&key.as_str()) {
                errors.push(format!("{key}: unknown key"));
            }
        }
        match take::<u32>(map, "schema_version", &mut errors) {
            Some(SCHEMA_VERSION) => {}
            Some(v) => errors.push(format!("schema_version: unsupported version {v}, expected {SCHEMA_VERSION}")),
            None if !map.contains_key("schema_version") => errors.push("schema_version: missing".into()),
            None => {}
        }
        let regime: Option<RegimeKind> = take(map, "regime", &mut errors);
        if !map.contains_key("regime") {
            errors.push("regime: missing".into());
        }
        let bits: Option<Width> = take(map, "bits", &mut errors);
        let lambda: Option<f64> = take(map, "lambda", &mut errors);
        let lr: f64 = take(map, "lr", &mut errors).unwrap_or(1e-3);
        let max_epochs: usize = take(map, "max_epochs", &mut errors).unwrap_or(100);
        let patience: usize = take(map, "patience", &mut errors).unwrap_or(10);
        let batch_size: usize = take(map, "batch_size", &mut errors).unwrap_or(64);
        let seed: u64 = take(map, "seed", &mut errors).unwrap_or(0);
        let scale_frozen: bool = take(map, "scale_frozen", &mut errors).unwrap_or(false);
        let tracking_bits: Option<Width> = take(map, "tracking_bits", &mut errors);
        let tracking_mode: TrackingMode = take(map, "tracking_mode", &mut errors).unwrap_or_default();
        let cadence: CadenceName = take(map, "cadence", &mut errors).unwrap_or(CadenceName::Epoch);
        let model: ModelConfig = take(map, "model", &mut errors).unwrap_or_default();
        let dataset: Option<DatasetConfig> = take(map, "dataset", &mut errors);
        let eval_widths: Vec<Width> = take(map, "eval_widths", &mut errors)
            .unwrap_or_else(|| EvalWidth::defaults().into_iter().map(Width).collect());
        let oscillation_log_layers: Vec<usize> = take(map, "oscillation_log_layers", &mut errors).unwrap_or_else(|| vec![0]);
        let oscillation_log_every: usize = take(map, "oscillation_log_every", &mut errors).unwrap_or(1);

        if let Some(kind) = regime {
            match (kind, bits) {
                (RegimeKind::Baseline, Some(_)) => {
                    errors.push("bits: the baseline trains without a target width (use tracking_bits)".into())
                }
                (RegimeKind::Qat | RegimeKind::OscReg, None) if map.get("bits").map_or(true, Value::is_null) => {
                    errors.push("bits: required for qat and osc_reg".into())
                }
                _ => {}
            }
            if let (Some(Width(EvalWidth::Fp32)), RegimeKind::Qat | RegimeKind::OscReg) = (bits, kind) {
                errors.push("bits: fp32 is not a training width".into());
            }
            if kind != RegimeKind::OscReg && lambda.is_some() {
                errors.push("lambda: only used by osc_reg".into());
            }
        }
        if let Some(l) = lambda {
            if !(l >= 0.0) || !l.is_finite() {
                errors.push(format!("lambda: must be a finite value >= 0, got {l}"));
            }
        }
        if !(lr > 0.0) || !lr.is_finite() {
            errors.push(format!("lr: must be a finite value > 0, got {lr}"));
        }
        if max_epochs == 0 {
            errors.push("max_epochs: must be >= 1".into());
        }
        if batch_size == 0 {
            errors.push("batch_size: must be >= 1".into());
        }
        if let Some(Width(EvalWidth::Fp32)) = tracking_bits {
            errors.push("tracking_bits: fp32 has no bins to track".into());
        }
        if model.hidden == 0 {
            errors.push("model: hidden must be >= 1".into());
        }
        if eval_widths.is_empty() {
            errors.push("eval_widths: must list at least one width".into());
        }
        if oscillation_log_every == 0 {
            errors.push("oscillation_log_every: must be >= 1".into());
        }
        if let Some(bad) = oscillation_log_layers.iter().find(|&&l| l > model.depth) {
            errors.push(format!("oscillation_log_layers: layer {bad} does not exist (model has {} layers)", model.depth + 1));
        }
        match &dataset {
            None if !map.contains_key("dataset") => errors.push("dataset: missing".into()),
            Some(DatasetConfig::Blobs {
                classes,
                dims,
                per_class,
                spread,
                ..
            }) => {
                if *classes == 0 || *dims == 0 || *per_class == 0 {
                    errors.push("dataset: classes, dims and per_class must be >= 1".into());
                }
                if !(*spread > 0.0) || !spread.is_finite() {
                    errors.push(format!("dataset: spread must be > 0, got {spread}"));
                }
            }
            _ => {}
        }

        if !errors.is_empty() {
            return Err(LabError::Config(errors));
        }
        let regime = regime.expect("checked");
        let id = match map.get("id") {
            Some(_) => take::<String>(map, "id", &mut errors).expect("string id"),
            None => default_id(regime, bits, lambda),
        };
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            id,
            regime,
            bits,
            lambda: match regime {
                RegimeKind::OscReg => Some(lambda.unwrap_or(DEFAULT_LAMBDA)),
                _ => None,
            },
            lr,
            max_epochs,
            patience,
            batch_size,
            seed,
            scale_frozen,
            tracking_bits,
            tracking_mode,
            cadence,
            model,
            dataset: dataset.expect("checked"),
            eval_widths,
            oscillation_log_layers,
            oscillation_log_every,
        })
    }

    /// Reads `path` and applies `overrides` (dotted keys reach into nested
    /// objects) before validation.
    pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<Self> {
        let mut value = read_json(path)?;
        apply_overrides(&mut value, overrides)?;
        Self::from_value(&value)
    }

    pub fn regime(&self) -> Regime {
        let spec = self.bits.and_then(|w| w.spec());
        match self.regime {
            RegimeKind::Baseline => Regime::Baseline,
            RegimeKind::Qat => Regime::Qat(spec.expect("validated")),
            RegimeKind::OscReg => Regime::OscReg {
                spec: spec.expect("validated"),
                lambda: self.lambda.unwrap_or(DEFAULT_LAMBDA),
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig::new(self.regime(), self.seed);
        c.adam = AdamConfig::with_lr(self.lr);
        c.max_epochs = self.max_epochs;
        c.early_stop_patience = self.patience;
        c.batch_size = self.batch_size;
        c.scale_frozen = self.scale_frozen;
        c.tracking_spec = self.tracking_bits.and_then(|w| w.spec());
        c.tracking_mode = self.tracking_mode;
        c.cadence = match self.cadence {
            CadenceName::Epoch => Cadence::Epoch,
            CadenceName::Step => Cadence::Step,
        };
        c
    }

    pub fn eval_widths(&self) -> Vec<EvalWidth> {
        self.eval_widths.iter().map(|w| w.0).collect()
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn default_id(regime: RegimeKind, bits: Option<Width>, lambda: Option<f64>) -> String {
    let bits = bits.map(|b| b.label()).unwrap_or_default();
    match regime {
        RegimeKind::Baseline => "baseline".into(),
        RegimeKind::Qat => format!("qat-{bits}"),
        RegimeKind::OscReg => format!("osc_reg-{bits}-l{}", lambda.unwrap_or(DEFAULT_LAMBDA)),
    }
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Config(vec![format!("<root>: {}: {e}", path.display())]))
}

/// Sets `key` (dot-separated for nested objects) to `value` in a JSON
/// object, creating intermediate objects.
pub fn apply_overrides(target: &mut Value, overrides: &[(String, Value)]) -> Result<()> {
    for (key, value) in overrides {
        let mut cur = &mut *target;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let Some(obj) = cur.as_object_mut() else {
                return Err(LabError::Config(vec![format!("{key}: cannot override inside a non-object")]));
            };
            if i + 1 == parts.len() {
                obj.insert((*part).to_string(), value.clone());
                break;
            }
            cur = obj
                .entry((*part).to_string())
                .or_insert_with(|| Value::Object(Map::new()));
        }
    }
    Ok(())
}

/// Parses a command-line value: JSON when it parses as JSON, else a string.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// A config × seed matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub configs: Vec<ExperimentConfig>,
    pub seeds: Vec<u64>,
    /// Config id pairs whose per-weight oscillation counts are compared.
    pub compare: Vec<(String, String)>,
    /// Layer whose counts feed the comparisons.
    pub compare_layer: usize,
    /// Worker threads; 0 means one per core.
    pub threads: usize,
}

const SWEEP_KEYS: &[&str] = &["schema_version", "base", "configs", "seeds", "compare", "compare_layer", "threads"];

impl SweepConfig {
    /// `base` holds shared keys; each `configs` entry is merged over it.
    pub fn from_value(value: &Value) -> Result<Self> {
        let Some(map) = value.as_object() else {
            return Err(LabError::Config(vec!["<root>: expected a JSON object".into()]));
        };
        let mut errors = Vec::new();
        for key in map.keys() {
            if !SWEEP_KEYS.contains(&key.as_str()) {
                errors.push(format!("{key}: unknown key"));
            }
        }
        match take::<u32>(map, "schema_version", &mut errors) {
            Some(SCHEMA_VERSION) => {}
            Some(v) => errors.push(format!("schema_version: unsupported version {v}, expected {SCHEMA_VERSION}")),
            None if !map.contains_key("schema_version") => errors.push("schema_version: missing".into()),
            None => {}
        }
        let base = map.get("base").cloned().unwrap_or_else(|| Value::Object(Map::new()));
        if !base.is_object() {
            errors.push("base: expected an object".into());
        }
        let entries: Vec<Value> = take(map, "configs", &mut errors).unwrap_or_default();
        if entries.is_empty() {
            errors.push("configs: must list at least one config".into());
        }
        let seeds: Vec<u64> = take(map, "seeds", &mut errors).unwrap_or_default();
        if seeds.is_empty() {
            errors.push("seeds: must list at least one seed".into());
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            errors.push("seeds: duplicate seed".into());
        }
        let compare: Vec<(String, String)> = take(map, "compare", &mut errors).unwrap_or_default();
        let compare_layer: usize = take(map, "compare_layer", &mut errors).unwrap_or(0);
        let threads: usize = take(map, "threads", &mut errors).unwrap_or(0);

        let mut configs = Vec::new();
        if base.is_object() {
            for (i, entry) in entries.iter().enumerate() {
                let Some(obj) = entry.as_object() else {
                    errors.push(format!("configs[{i}]: expected an object"));
                    continue;
                };
                let mut merged = base.clone();
                merged
                    .as_object_mut()
                    .expect("object")
                    .insert("schema_version".into(), Value::from(SCHEMA_VERSION));
                let overrides: Vec<(String, Value)> = obj.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                apply_overrides(&mut merged, &overrides)?;
                match ExperimentConfig::from_value(&merged) {
                    Ok(c) => configs.push(c),
                    Err(LabError::Config(es)) => errors.extend(es.into_iter().map(|e| format!("configs[{i}].{e}"))),
                    Err(e) => return Err(e),
                }
            }
        }
        let mut ids: Vec<&str> = configs.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                errors.push(format!("configs: duplicate id {:?}", pair[0]));
            }
        }
        for (a, b) in &compare {
            for id in [a, b] {
                if !configs.iter().any(|c| &c.id == id) && configs.len() == entries.len() {
                    errors.push(format!("compare: unknown config id {id:?}"));
                }
            }
        }
        for c in &configs {
            if !compare.is_empty() && !c.oscillation_log_layers.contains(&compare_layer) {
                let used = compare.iter().any(|(a, b)| a == &c.id || b == &c.id);
                if used {
                    errors.push(format!("compare_layer: config {:?} does not log layer {compare_layer}", c.id));
                }
            }
        }
        if !errors.is_empty() {
            return Err(LabError::Config(errors));
        }
        Ok(Self {
            configs,
            seeds,
            compare,
            compare_layer,
            threads,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_value(&read_json(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "schema_version": 1,
            "regime": "osc_reg",
            "bits": 3,
            "dataset": {"kind": "blobs", "classes": 3, "dims": 4, "per_class": 10, "spread": 1.0}
        })
    }

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_value(&minimal()).unwrap();
        assert_eq!(c.id, "osc_reg-3bit-l1");
        assert_eq!(c.lambda, Some(1.0));
        assert_eq!(c.patience, 10);
        assert_eq!(c.max_epochs, 100);
        assert_eq!(c.eval_widths.len(), 5);
        let t = c.train_config();
        assert_eq!(t.early_stop_patience, 10);
        assert!(matches!(t.regime, Regime::OscReg { lambda, .. } if lambda == 1.0));
    }

    #[test]
    fn every_offending_key_reported() {
        let mut v = minimal();
        let o = v.as_object_mut().unwrap();
        o.insert("lr".into(), json!(-1));
        o.insert("bogus".into(), json!(1));
        o.insert("batch_size".into(), json!("big"));
        o.insert("lambda".into(), json!(-2.0));
        let LabError::Config(errs) = ExperimentConfig::from_value(&v).unwrap_err() else {
            panic!()
        };
        for key in ["lr:", "bogus:", "batch_size:", "lambda:"] {
            assert!(errs.iter().any(|e| e.starts_with(key)), "{key} missing from {errs:?}");
        }
    }

    #[test]
    fn regime_width_rules() {
        let mut v = minimal();
        v["regime"] = json!("baseline");
        let e = ExperimentConfig::from_value(&v).unwrap_err();
        assert!(e.to_string().contains("bits:"));
        v.as_object_mut().unwrap().remove("bits");
        assert!(ExperimentConfig::from_value(&v).is_ok());
        v["lambda"] = json!(1.0);
        assert!(ExperimentConfig::from_value(&v).unwrap_err().to_string().contains("lambda:"));
        v.as_object_mut().unwrap().remove("regime");
        assert!(ExperimentConfig::from_value(&v).unwrap_err().to_string().contains("regime: missing"));
    }

    #[test]
    fn schema_version_checked() {
        let mut v = minimal();
        v["schema_version"] = json!(9);
        assert_eq!(ExperimentConfig::from_value(&v).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn widths_parse() {
        for (s, l) in [("ternary", "ternary"), ("4", "4bit"), ("8bit", "8bit"), ("FP32", "fp32")] {
            assert_eq!(s.parse::<Width>().unwrap().label(), l);
        }
        assert!("1".parse::<Width>().is_err());
        assert!("huge".parse::<Width>().is_err());
    }

    #[test]
    fn overrides_win_and_nest() {
        let mut v = minimal();
        apply_overrides(
            &mut v,
            &[
                ("seed".into(), parse_override_value("42")),
                ("model.hidden".into(), parse_override_value("8")),
                ("regime".into(), parse_override_value("qat")),
            ],
        )
        .unwrap();
        let c = ExperimentConfig::from_value(&v).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.model.hidden, 8);
        assert_eq!(c.regime, RegimeKind::Qat);
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::from_value(&minimal()).unwrap();
        let back = ExperimentConfig::from_value(&c.to_value()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sweep_merges_and_checks() {
        let v = json!({
            "schema_version": 1,
            "base": {"dataset": minimal()["dataset"].clone(), "max_epochs": 2},
            "configs": [
                {"id": "a", "regime": "baseline", "tracking_bits": 3},
                {"id": "b", "regime": "qat", "bits": 3}
            ],
            "seeds": [0, 1],
            "compare": [["a", "b"]]
        });
        let s = SweepConfig::from_value(&v).unwrap();
        assert_eq!(s.configs.len(), 2);
        assert_eq!(s.configs[1].max_epochs, 2);

        let mut bad = v.clone();
        bad["compare"] = json!([["a", "zzz"]]);
        bad["configs"][1]["lr"] = json!(0);
        let e = SweepConfig::from_value(&bad).unwrap_err().to_string();
        assert!(e.contains("configs[1].lr"), "{e}");
    }
}
