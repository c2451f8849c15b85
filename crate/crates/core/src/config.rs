//! JSON config files for generation and evaluation runs. Relative paths
//! resolve against the directory holding the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, TableCorpus};
use crate::evalharness::HarnessConfig;
use crate::genpipe::DatasetConfig;
use crate::llm::{BackendConfig, LlmBackend};
use crate::registry::{IntentRegistry, RegistryError};
use crate::retrieval::SummaryBank;
use crate::sqlgen::SqlBank;
use crate::templates::{TemplateError, TemplatePack};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("backend: {0}")]
    Backend(String),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub manifest: PathBuf,
    pub templates: PathBuf,
    pub intents: PathBuf,
}

impl CorpusPaths {
    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.manifest);
        rebase(base, &mut self.templates);
        rebase(base, &mut self.intents);
    }

    pub fn load(&self) -> Result<Workspace, ConfigError> {
        let corpus = TableCorpus::load(&self.manifest)?;
        let intents = IntentRegistry::load(&self.intents)?;
        let pack = TemplatePack::load(&self.templates, corpus.slots()?, &intents)?;
        Ok(Workspace { corpus, intents, pack })
    }
}

pub struct Workspace {
    pub corpus: TableCorpus,
    pub intents: IntentRegistry,
    pub pack: TemplatePack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    #[serde(flatten)]
    pub paths: CorpusPaths,
    /// Dataset JSONL to write.
    pub output: PathBuf,
    #[serde(flatten)]
    pub dataset: DatasetConfig,
    /// Needed for paraphrasing or model abbreviations.
    #[serde(default)]
    pub llm: Option<BackendConfig>,
}

impl GenerateConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut c: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.paths.rebase(base);
        rebase(base, &mut c.output);
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub paths: CorpusPaths,
    /// Dataset JSONL to evaluate.
    pub dataset: PathBuf,
    /// Receives report.json and trace.jsonl.
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub harness: HarnessConfig,
    #[serde(default)]
    pub llm: Option<BackendConfig>,
    #[serde(default)]
    pub sql_examples: Option<PathBuf>,
    #[serde(default)]
    pub summary_examples: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut c: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        c.paths.rebase(base);
        rebase(base, &mut c.dataset);
        rebase(base, &mut c.output_dir);
        for p in [&mut c.sql_examples, &mut c.summary_examples].into_iter().flatten() {
            rebase(base, p);
        }
        Ok(c)
    }

    pub fn banks(&self) -> Result<(SqlBank, SummaryBank), ConfigError> {
        let sql = match &self.sql_examples {
            Some(p) => read_json(p)?,
            None => SqlBank::new(),
        };
        let summary = match &self.summary_examples {
            Some(p) => read_json(p)?,
            None => SummaryBank::new(),
        };
        Ok((sql, summary))
    }
}

pub fn build_backend(c: &Option<BackendConfig>) -> Result<Option<Arc<dyn LlmBackend>>, ConfigError> {
    c.as_ref().map(|b| b.build().map_err(ConfigError::Backend)).transpose()
}
