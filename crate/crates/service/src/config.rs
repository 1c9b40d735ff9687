//! Service configuration: model, data and log paths, listen address.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use rxdialog::corpusio::import_conll;
use rxdialog::datagen::{load_grammar, load_scenarios};
use rxdialog::drugdb::{ingest, ColumnMap};
use rxdialog::engine::PolicyKind;
use rxdialog::pipeline::Resources;
use rxdialog::policy::state::DEFAULT_HISTORY;
use rxdialog::taxonomy::load_schema;

/// Environment variable naming a config file when `--config` is absent.
pub const CONFIG_ENV: &str = "RXD_CONFIG";

/// Input files. Unset entries fall back to the bundled data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub schema: Option<PathBuf>,
    pub db: Option<PathBuf>,
    /// `field=column` overrides for the drug table header.
    pub db_columns: Option<String>,
    pub grammar: Option<PathBuf>,
    pub seed_corpus: Option<PathBuf>,
    pub scenarios: Option<PathBuf>,
    pub smalltalk: Option<PathBuf>,
}

impl DataPaths {
    pub fn load(&self) -> anyhow::Result<Resources> {
        let mut r = Resources::builtin();
        if let Some(p) = &self.schema {
            r.schema = load_schema(p).with_context(|| format!("schema {}", p.display()))?;
        }
        if let Some(p) = &self.db {
            let cols = ColumnMap::default().with_overrides(self.db_columns.as_deref().unwrap_or(""))?;
            r.db = ingest(p, &cols).with_context(|| format!("drug table {}", p.display()))?;
        }
        if let Some(p) = &self.grammar {
            r.grammar = load_grammar(p).with_context(|| format!("grammar {}", p.display()))?;
        }
        if let Some(p) = &self.seed_corpus {
            r.seed_corpus = import_conll(p).with_context(|| format!("seed corpus {}", p.display()))?.utterances;
        }
        if let Some(p) = &self.scenarios {
            r.scenarios = load_scenarios(p).with_context(|| format!("scenarios {}", p.display()))?;
        }
        if let Some(p) = &self.smalltalk {
            let text = std::fs::read_to_string(p).with_context(|| format!("small talk {}", p.display()))?;
            r.smalltalk = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub log_dir: PathBuf,
    pub nlu_model: Option<PathBuf>,
    pub policy_model: Option<PathBuf>,
    pub policy: PolicyKind,
    pub history: usize,
    pub data: DataPaths,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            log_dir: PathBuf::from("logs"),
            nlu_model: None,
            policy_model: None,
            policy: PolicyKind::Rule,
            history: DEFAULT_HISTORY,
            data: DataPaths::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }

    /// `explicit`, else the file named by `RXD_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> anyhow::Result<Self> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}
