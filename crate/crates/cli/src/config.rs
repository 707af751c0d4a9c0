//! Run configuration: one TOML file, overridable from the command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hsbench::classic::{EstimatorSpec, Family};
use hsbench::corpus::{ColumnMap, Task};
use hsbench::features::VocabConfig;
use hsbench::neural::ModelConfig;
use hsbench::seed;
use hsbench::textprep::{parse_slang, parse_token_set, NormalizationResources};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Delimited table with a text column and two binary label columns.
    pub data: Option<PathBuf>,
    pub task: Task,
    /// Root seed; every component seed is derived from it by label.
    pub seed: u64,
    pub test_fraction: f64,
    pub out: PathBuf,
    pub columns: ColumnsConfig,
    pub resources: ResourcesConfig,
    pub features: VocabConfig,
    pub bench: BenchConfig,
    pub neural: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            task: Task::Hs,
            seed: 42,
            test_fraction: 0.2,
            out: PathBuf::from("out"),
            columns: ColumnsConfig::default(),
            resources: ResourcesConfig::default(),
            features: VocabConfig::default(),
            bench: BenchConfig::default(),
            neural: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnsConfig {
    pub text: String,
    pub hs: String,
    pub abusive: String,
}

impl Default for ColumnsConfig {
    fn default() -> Self {
        let m = ColumnMap::default();
        Self { text: m.text, hs: m.hs, abusive: m.abusive }
    }
}

/// Unset paths fall back to the small bundled demo resources.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourcesConfig {
    pub slang: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorEntry {
    pub family: Family,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub folds: usize,
    /// Refit the vocabulary inside every fold instead of once on the
    /// training portion.
    pub refit_vocab_per_fold: bool,
    pub estimators: Vec<EstimatorEntry>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            refit_vocab_per_fold: false,
            estimators: Family::ALL.iter().map(|&family| EstimatorEntry { family, params: BTreeMap::new() }).collect(),
        }
    }
}

/// Component seeds, all derived from the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub split: u64,
    pub folds: u64,
    pub validation: u64,
    pub neural: u64,
    pub estimators: u64,
}

impl RunConfig {
    /// Reads a TOML file, applies `key=value` overrides (dotted keys, values
    /// in TOML syntax or bare strings) and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(CliError::Config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.bench.folds < 2 {
            return Err(CliError::Config(format!("bench.folds must be at least 2, got {}", self.bench.folds)));
        }
        if self.bench.estimators.is_empty() {
            return Err(CliError::Config("bench.estimators is empty".into()));
        }
        for e in &self.bench.estimators {
            EstimatorSpec::new(e.family, &e.params, 0).map_err(|err| CliError::Config(err.to_string()))?;
        }
        self.neural.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let r = &self.resources;
        for p in [&r.slang, &r.stopwords, &r.lexicon].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("resource file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::Config("no dataset given (use --data or `data = ...`)".into()))
    }

    pub fn column_map(&self) -> ColumnMap {
        ColumnMap {
            text: self.columns.text.clone(),
            hs: self.columns.hs.clone(),
            abusive: self.columns.abusive.clone(),
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            split: seed::derive(self.seed, "split"),
            folds: seed::derive(self.seed, "folds"),
            validation: seed::derive(self.seed, "validation"),
            neural: seed::derive(self.seed, "neural"),
            estimators: seed::derive(self.seed, "estimators"),
        }
    }

    pub fn estimator_specs(&self) -> Result<Vec<EstimatorSpec>, CliError> {
        let root = self.seeds().estimators;
        self.bench
            .estimators
            .iter()
            .enumerate()
            .map(|(i, e)| {
                EstimatorSpec::new(e.family, &e.params, seed::derive_index(root, i as u64))
                    .map_err(|err| CliError::Config(err.to_string()))
            })
            .collect()
    }

    /// Neural settings with the derived seed filled in.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig { seed: self.seeds().neural, ..self.neural.clone() }
    }

    /// Bundled resources with any configured file swapped in.
    pub fn resources(&self) -> Result<NormalizationResources, CliError> {
        let read = |p: &Path| {
            std::fs::read(p)
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .map_err(|e| CliError::Ingestion(format!("{}: {e}", p.display())))
        };
        let r = &self.resources;
        let mut res = NormalizationResources::bundled();
        if let Some(p) = &r.slang {
            res.slang_map = parse_slang(&read(p)?, p).map_err(|e| CliError::Ingestion(e.to_string()))?;
        }
        if let Some(p) = &r.stopwords {
            res.stopwords = parse_token_set(&read(p)?);
        }
        if let Some(p) = &r.lexicon {
            res.abusive_lexicon = parse_token_set(&read(p)?);
        }
        res.require_lexicon().map_err(|e| CliError::Ingestion(e.to_string()))?;
        Ok(res)
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config(format!("empty key in {assignment:?}")))?;
    let mut node = table;
    for p in parts {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{p} in {key} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
