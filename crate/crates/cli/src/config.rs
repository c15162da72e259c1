use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use units_ml::episode::{load_csv, make_synthetic, Dataset, OodKind, SyntheticSpec};
use units_ml::meta::{EvalSettings, MetaConfig};
use units_ml::model::{Activation, Architecture};
use units_ml::seed::derive_seed;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_samples")]
    pub samples_per_class: usize,
    /// Held-out samples per class for evaluation; defaults to
    /// `samples_per_class`.
    #[serde(default)]
    pub eval_samples_per_class: Option<usize>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Held-out CSV; the training file is reused when absent.
    #[serde(default)]
    pub eval_path: Option<PathBuf>,
}

fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    8
}
fn default_samples() -> usize {
    100
}
fn default_radius() -> f64 {
    3.0
}
fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub kind: OodKind,
    pub magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_eval_tasks")]
    pub num_tasks: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub ood: Option<OodConfig>,
}

fn default_eval_tasks() -> usize {
    200
}
fn default_thresholds() -> Vec<f64> {
    vec![0.1, 0.2, 0.5, 1.0]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { num_tasks: default_eval_tasks(), thresholds: default_thresholds(), ood: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    pub meta: MetaConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// Reads a JSON config and applies `key.path=value` overrides.
pub fn load_value(path: &Path, overrides: &[String]) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: invalid JSON: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(value)
}

/// Sets a dotted path inside `root`. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got `{assignment}`")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::config(format!("--set: malformed key `{key}`")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            return Err(CliError::config(format!("{}: not an object", parts[..i].join("."))));
        }
        let map = cur.as_object_mut().expect("checked object");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl RunConfig {
    /// Deserializes and validates; errors name the offending field.
    pub fn from_value(value: &Value) -> Result<Self, CliError> {
        let mut cfg: RunConfig = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            // a missing field is reported against its parent; name the field itself
            let field = message
                .strip_prefix("missing field `")
                .and_then(|m| m.split('`').next())
                .map(|f| if path == "." { f.to_string() } else { format!("{path}.{f}") });
            CliError::config(format!("{}: {message}", field.unwrap_or(path)))
        })?;
        cfg.meta.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Csv => match &d.path {
                None => return Err(CliError::config("dataset.path: required when dataset.kind is csv")),
                Some(p) if !p.is_file() => {
                    return Err(CliError::config(format!("dataset.path: no such file {}", p.display())))
                }
                _ => {}
            },
            DatasetKind::Synthetic => {
                if d.num_classes < 2 {
                    return Err(CliError::config("dataset.num_classes: must be at least 2"));
                }
                if d.dim == 0 {
                    return Err(CliError::config("dataset.dim: must be positive"));
                }
                if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) {
                    return Err(CliError::config("dataset.noise_sigma: must be finite and >= 0"));
                }
                if !d.radius.is_finite() {
                    return Err(CliError::config("dataset.radius: must be finite"));
                }
                let rows = self.meta.sampler(self.meta.queries_per_task()).rows_per_class();
                if d.samples_per_class < rows {
                    return Err(CliError::config(format!(
                        "dataset.samples_per_class: {} is fewer than the {rows} rows a task draws per class",
                        d.samples_per_class
                    )));
                }
                if d.eval_samples_per_class.is_some_and(|n| n < self.meta.sampler(1).rows_per_class()) {
                    return Err(CliError::config("dataset.eval_samples_per_class: too few rows for one task"));
                }
                if d.num_classes < self.meta.n_way {
                    return Err(CliError::config("meta.n_way: exceeds dataset.num_classes"));
                }
            }
        }
        if self.arch.hidden_dims.contains(&0) {
            return Err(CliError::config("arch.hidden_dims: widths must be positive"));
        }
        self.meta.validate().map_err(|e| CliError::config(format!("meta.{e}")))?;
        if self.eval.num_tasks == 0 {
            return Err(CliError::config("eval.num_tasks: must be at least 1"));
        }
        if self.eval.thresholds.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(CliError::config("eval.thresholds: must be finite and >= 0"));
        }
        if let Some(ood) = &self.eval.ood {
            if ood.magnitudes.is_empty() || ood.magnitudes.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
                return Err(CliError::config("eval.ood.magnitudes: need at least one finite value >= 0"));
            }
        }
        Ok(())
    }

    pub fn training_data(&self) -> Result<Dataset, CliError> {
        match self.dataset.kind {
            DatasetKind::Synthetic => Ok(make_synthetic(&self.synthetic_spec(self.dataset.samples_per_class), self.seed)?),
            DatasetKind::Csv => {
                let path = self.dataset.path.as_ref().expect("validated");
                load_csv(path).map_err(|e| CliError::config(format!("dataset.path: {e}")))
            }
        }
    }

    /// Held-out data: a fresh synthetic draw from a derived seed, or the
    /// evaluation CSV.
    pub fn eval_data(&self) -> Result<Dataset, CliError> {
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                let n = self.dataset.eval_samples_per_class.unwrap_or(self.dataset.samples_per_class);
                Ok(make_synthetic(&self.synthetic_spec(n), derive_seed(self.seed, "heldout"))?)
            }
            DatasetKind::Csv => match &self.dataset.eval_path {
                Some(p) => load_csv(p).map_err(|e| CliError::config(format!("dataset.eval_path: {e}"))),
                None => self.training_data(),
            },
        }
    }

    fn synthetic_spec(&self, samples_per_class: usize) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.dataset.num_classes,
            dim: self.dataset.dim,
            samples_per_class,
            radius: self.dataset.radius,
            noise_sigma: self.dataset.noise_sigma,
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_dims: self.arch.hidden_dims.clone(),
            num_classes: self.meta.n_way,
            activation: self.arch.activation,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        let mut s = EvalSettings::from_meta(&self.meta, self.eval.num_tasks, derive_seed(self.seed, "evaluation"));
        s.thresholds = self.eval.thresholds.clone();
        s.ood = self.eval.ood.as_ref().map(|o| (o.kind, o.magnitudes.clone()));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "dataset": {"kind": "synthetic", "num_classes": 6, "dim": 2, "samples_per_class": 20},
            "meta": {
                "n_way": 3, "k_shot": 1, "q_query": 2, "inner_steps": 1, "inner_rate": 0.1,
                "outer_rate": 0.001, "tasks_per_iteration": 2, "candidate_pool": 4,
                "warmup_iterations": 0, "epochs": 1, "iterations_per_epoch": 3, "mode": "NTS"
            },
            "seed": 1
        })
    }

    #[test]
    fn overrides_set_nested_values() {
        let mut v = minimal();
        apply_override(&mut v, "meta.mode=ML").unwrap();
        apply_override(&mut v, "meta.inner_steps=4").unwrap();
        apply_override(&mut v, "eval.ood.kind=feature-shift").unwrap();
        assert_eq!(v["meta"]["mode"], "ML");
        assert_eq!(v["meta"]["inner_steps"], 4);
        assert_eq!(v["eval"]["ood"]["kind"], "feature-shift");
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "meta..x=1").is_err());
    }

    #[test]
    fn missing_csv_path_names_the_field() {
        let mut v = minimal();
        apply_override(&mut v, "dataset.kind=csv").unwrap();
        let err = RunConfig::from_value(&v).unwrap_err();
        assert_eq!(err.code, 2);
        assert!(err.message.contains("dataset.path"), "{}", err.message);
    }

    #[test]
    fn missing_and_unknown_fields_name_their_path() {
        let mut v = minimal();
        v["meta"].as_object_mut().unwrap().remove("n_way");
        let err = RunConfig::from_value(&v).unwrap_err();
        assert!(err.message.starts_with("meta.n_way"), "{}", err.message);

        let mut v = minimal();
        apply_override(&mut v, "meta.bogus=1").unwrap();
        let err = RunConfig::from_value(&v).unwrap_err();
        assert!(err.message.contains("meta"), "{}", err.message);
        assert!(err.message.contains("bogus"), "{}", err.message);
    }

    #[test]
    fn meta_constraints_are_prefixed() {
        let mut v = minimal();
        apply_override(&mut v, "meta.mode=ML").unwrap();
        apply_override(&mut v, "meta.candidate_pool=5").unwrap();
        let err = RunConfig::from_value(&v).unwrap_err();
        assert!(err.message.starts_with("meta.candidate_pool"), "{}", err.message);
    }

    #[test]
    fn seed_reaches_meta_config() {
        let cfg = RunConfig::from_value(&minimal()).unwrap();
        assert_eq!(cfg.meta.seed, 1);
        assert_eq!(cfg.eval.thresholds, vec![0.1, 0.2, 0.5, 1.0]);
    }
}
