//! Flat JSON run configuration with `--set key=value` and flag overrides.

use std::path::{Path, PathBuf};

use ghlda::corpus::EmbeddingFormat;
use ghlda::samplers::{Hyperparams, ModelKind, NiwConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

const PATH_KEYS: [&str; 6] = ["corpus", "test_corpus", "embeddings", "cache", "output_dir", "reference"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub corpus: Option<PathBuf>,
    pub test_corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub embedding_format: Option<String>,
    pub min_count: Option<usize>,
    pub test_docs: Option<usize>,
    pub cache: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub save_every: Option<usize>,

    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub num_topics: Option<usize>,
    pub m: Option<f64>,
    pub b: Option<f64>,
    pub gamma: Option<f64>,
    pub branch_spec: Option<Vec<usize>>,
    pub eta_levels: Option<Vec<f64>>,
    pub level_psi_ratios: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub dof: Option<f64>,
    pub psi_scale: Option<f64>,
    pub prior_mean: Option<Vec<f64>>,
    pub freeze_new_leaves_for: Option<usize>,
    pub shuffle_documents: Option<bool>,

    pub particles: Option<usize>,
    pub top_n: Option<usize>,
    pub polysemy_min_count: Option<usize>,
    pub reference: Option<PathBuf>,
    pub window: Option<String>,
}

/// Parse `key=value`; the value is JSON when it parses as JSON, otherwise a
/// string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::input(format!("expected KEY=VALUE, got '{s}'")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Config file (relative paths resolved against its directory), then
/// overrides in order; later entries win.
pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let mut map = Map::new();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", p.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: invalid JSON: {e}", p.display())))?;
        let Value::Object(obj) = value else {
            return Err(CliError::input(format!("{}: config must be a JSON object", p.display())));
        };
        let base = p.parent().unwrap_or(Path::new(""));
        for (k, mut v) in obj {
            if PATH_KEYS.contains(&k.as_str()) {
                if let Value::String(s) = &v {
                    if Path::new(s).is_relative() {
                        v = Value::String(base.join(s).to_string_lossy().into_owned());
                    }
                }
            }
            map.insert(k, v);
        }
    }
    for (k, v) in overrides {
        map.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::input(format!("invalid configuration: {e}")))
}

impl RunConfig {
    pub fn model(&self) -> Result<ModelKind, CliError> {
        self.model
            .ok_or_else(|| CliError::input("no model selected (set \"model\" or pass --model)"))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("ghlda-out"))
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.output_dir().join("corpus.json"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir().join("checkpoint.json")
    }

    pub fn embedding_format(&self) -> Result<EmbeddingFormat, CliError> {
        self.embedding_format
            .as_deref()
            .unwrap_or("glove")
            .parse()
            .map_err(CliError::input)
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(100)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Hyperparameters with defaults filled in; `Ψ`'s scale defaults by
    /// embedding format.
    pub fn hyperparams(&self) -> Result<Hyperparams, CliError> {
        let d = Hyperparams::default();
        let niw = NiwConfig {
            kappa: self.kappa.unwrap_or(d.niw.kappa),
            dof: self.dof,
            psi_scale: match self.psi_scale {
                Some(s) => s,
                None => self.embedding_format()?.default_psi_scale(),
            },
            mean: self.prior_mean.clone(),
        };
        Ok(Hyperparams {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            num_topics: self.num_topics.unwrap_or(d.num_topics),
            m: self.m.unwrap_or(d.m),
            b: self.b.unwrap_or(d.b),
            gamma: self.gamma.unwrap_or(d.gamma),
            branch_spec: self.branch_spec.clone().unwrap_or(d.branch_spec),
            eta_levels: self.eta_levels.clone(),
            level_psi_ratios: self.level_psi_ratios.clone(),
            niw,
            freeze_new_leaves_for: self.freeze_new_leaves_for.unwrap_or(d.freeze_new_leaves_for),
            shuffle_documents: self.shuffle_documents.unwrap_or(d.shuffle_documents),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_overrides_win_and_values_parse_as_json() {
        let o = vec![
            parse_assignment("epochs=3").unwrap(),
            parse_assignment("model=ghlda").unwrap(),
            parse_assignment("branch_spec=[1,2]").unwrap(),
            parse_assignment("epochs=5").unwrap(),
        ];
        let c = load(None, &o).unwrap();
        assert_eq!(c.epochs(), 5);
        assert_eq!(c.model().unwrap(), ModelKind::Ghlda);
        assert_eq!(c.branch_spec, Some(vec![1, 2]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let o = vec![parse_assignment("epoch=3").unwrap()];
        assert_eq!(load(None, &o).unwrap_err().code, 2);
    }

    #[test]
    fn psi_scale_follows_format() {
        let o = vec![parse_assignment("embedding_format=fasttext").unwrap()];
        assert_eq!(load(None, &o).unwrap().hyperparams().unwrap().niw.psi_scale, 20.0);
        assert_eq!(RunConfig::default().hyperparams().unwrap().niw.psi_scale, 50.0);
    }
}
