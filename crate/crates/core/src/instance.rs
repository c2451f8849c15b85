//! The generated QA instance and its JSONL form.

use std::io::{BufRead, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bio::{BioTagSequence, SlotBinding};
use crate::corpus::QueryResult;
use crate::labels::{Category, ConditionLabel, ScopeLabel};
use crate::registry::{DomainId, UNKNOWN_INTENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub template_id: String,
    pub question: String,
    pub gold_sql: String,
    pub gold_answer: QueryResult,
    pub domain: DomainId,
    pub intents: Vec<String>,
    pub bio: BioTagSequence,
    pub intent_underspec: bool,
    pub scope_labels: Vec<ScopeLabel>,
    pub condition_labels: Vec<ConditionLabel>,
    pub select_clarification: IndexMap<String, String>,
    pub from_clarification: IndexMap<String, String>,
    pub where_clarification: IndexMap<String, String>,
    pub gold_captions: Vec<String>,
    pub split: Split,
    pub strata_key: String,
    pub category: Category,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("{id}: intent_underspec disagrees with intents {intents:?}")]
    IntentFlag { id: String, intents: Vec<String> },
    #[error("{id}: stored category {stored:?} but labels imply {computed:?}")]
    Category {
        id: String,
        stored: Category,
        computed: Category,
    },
    #[error("{id}: {message}")]
    Bio { id: String, message: String },
    #[error("{id}: no intents")]
    NoIntents { id: String },
}

impl QAInstance {
    pub fn computed_category(&self) -> Category {
        Category::classify(
            self.intent_underspec,
            !self.scope_labels.is_empty(),
            !self.condition_labels.is_empty(),
        )
    }

    pub fn is_mixed(&self) -> bool {
        self.computed_category() == Category::Mixed
    }

    /// Slot values as they appear in the question.
    pub fn question_slots(&self) -> SlotBinding {
        self.bio.decode(&self.question).unwrap_or_default()
    }

    pub fn check(&self) -> Result<(), InstanceError> {
        if self.intents.is_empty() {
            return Err(InstanceError::NoIntents { id: self.id.clone() });
        }
        let unknown = self.intents.len() == 1 && self.intents[0] == UNKNOWN_INTENT;
        if unknown != self.intent_underspec {
            return Err(InstanceError::IntentFlag {
                id: self.id.clone(),
                intents: self.intents.clone(),
            });
        }
        let computed = self.computed_category();
        if computed != self.category {
            return Err(InstanceError::Category {
                id: self.id.clone(),
                stored: self.category,
                computed,
            });
        }
        self.bio.validate().map_err(|e| InstanceError::Bio {
            id: self.id.clone(),
            message: e.to_string(),
        })?;
        self.bio.decode(&self.question).map_err(|e| InstanceError::Bio {
            id: self.id.clone(),
            message: e.to_string(),
        })?;
        Ok(())
    }
}

/// Writes one instance per line.
pub fn write_jsonl<W: Write>(mut w: W, instances: &[QAInstance]) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Error)]
pub enum DatasetReadError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}, line {line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QAInstance>, DatasetReadError> {
    let io = |source| DatasetReadError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = serde_json::from_str(&line).map_err(|source| DatasetReadError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(inst);
    }
    Ok(out)
}
