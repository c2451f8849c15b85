//! Underspecification labels and instance categories.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NOT_EXIST: &str = "not exist";

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("Missing labels carry empty slot content, got {0:?}")]
    MissingWithContent(String),
    #[error("{0} labels need nonempty slot content")]
    EmptyContent(&'static str),
    #[error("condition label marker must be \"not exist\", got {0:?}")]
    BadMarker(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScopeErrorType {
    Missing,
    Error,
    Unmatch,
}

impl ScopeErrorType {
    pub const ALL: [ScopeErrorType; 3] = [ScopeErrorType::Missing, ScopeErrorType::Error, ScopeErrorType::Unmatch];

    pub fn as_str(self) -> &'static str {
        match self {
            ScopeErrorType::Missing => "Missing",
            ScopeErrorType::Error => "Error",
            ScopeErrorType::Unmatch => "Unmatch",
        }
    }
}

impl fmt::Display for ScopeErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `[slot_content, slot_type, error_type]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(
    into = "(String, String, ScopeErrorType)",
    try_from = "(String, String, ScopeErrorType)"
)]
pub struct ScopeLabel {
    pub slot_content: String,
    pub slot_type: String,
    pub error_type: ScopeErrorType,
}

impl ScopeLabel {
    pub fn missing(slot_type: impl Into<String>) -> Self {
        Self {
            slot_content: String::new(),
            slot_type: slot_type.into(),
            error_type: ScopeErrorType::Missing,
        }
    }

    pub fn new(
        slot_content: impl Into<String>,
        slot_type: impl Into<String>,
        error_type: ScopeErrorType,
    ) -> Result<Self, LabelError> {
        let label = Self {
            slot_content: slot_content.into(),
            slot_type: slot_type.into(),
            error_type,
        };
        label.check()?;
        Ok(label)
    }

    fn check(&self) -> Result<(), LabelError> {
        match self.error_type {
            ScopeErrorType::Missing if !self.slot_content.is_empty() => {
                Err(LabelError::MissingWithContent(self.slot_content.clone()))
            }
            ScopeErrorType::Error | ScopeErrorType::Unmatch if self.slot_content.is_empty() => {
                Err(LabelError::EmptyContent(self.error_type.as_str()))
            }
            _ => Ok(()),
        }
    }
}

impl From<ScopeLabel> for (String, String, ScopeErrorType) {
    fn from(l: ScopeLabel) -> Self {
        (l.slot_content, l.slot_type, l.error_type)
    }
}

impl TryFrom<(String, String, ScopeErrorType)> for ScopeLabel {
    type Error = LabelError;

    fn try_from((c, t, e): (String, String, ScopeErrorType)) -> Result<Self, LabelError> {
        ScopeLabel::new(c, t, e)
    }
}

impl fmt::Display for ScopeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:?}, {:?}, {})",
            self.slot_content, self.slot_type, self.error_type
        )
    }
}

/// `[slot_content, slot_type, "not exist"]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "(String, String, String)", try_from = "(String, String, String)")]
pub struct ConditionLabel {
    pub slot_content: String,
    pub slot_type: String,
}

impl ConditionLabel {
    pub fn new(slot_content: impl Into<String>, slot_type: impl Into<String>) -> Result<Self, LabelError> {
        let slot_content = slot_content.into();
        if slot_content.is_empty() {
            return Err(LabelError::EmptyContent("condition"));
        }
        Ok(Self {
            slot_content,
            slot_type: slot_type.into(),
        })
    }

    pub fn marker(&self) -> &'static str {
        NOT_EXIST
    }
}

impl From<ConditionLabel> for (String, String, String) {
    fn from(l: ConditionLabel) -> Self {
        (l.slot_content, l.slot_type, NOT_EXIST.to_string())
    }
}

impl TryFrom<(String, String, String)> for ConditionLabel {
    type Error = LabelError;

    fn try_from((c, t, m): (String, String, String)) -> Result<Self, LabelError> {
        if m != NOT_EXIST {
            return Err(LabelError::BadMarker(m));
        }
        ConditionLabel::new(c, t)
    }
}

impl fmt::Display for ConditionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?}, {:?})", self.slot_content, self.slot_type, NOT_EXIST)
    }
}

/// Sampling stratum of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Specified,
    Select,
    From,
    Where,
    Mixed,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Specified,
        Category::Select,
        Category::From,
        Category::Where,
        Category::Mixed,
    ];

    /// Mixed iff at least two label families are present.
    pub fn classify(intent_underspec: bool, has_scope: bool, has_condition: bool) -> Category {
        match (intent_underspec, has_scope, has_condition) {
            (false, false, false) => Category::Specified,
            (true, false, false) => Category::Select,
            (false, true, false) => Category::From,
            (false, false, true) => Category::Where,
            _ => Category::Mixed,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Specified => "specified",
            Category::Select => "select",
            Category::From => "from",
            Category::Where => "where",
            Category::Mixed => "mixed",
        }
    }
}
