//! The gated user simulator. It answers a clarification question only when
//! the question names a gold underspecification of the instance.

use serde::{Deserialize, Serialize};

use crate::dialogue::Clause;
use crate::instance::QAInstance;
use crate::labels::{ConditionLabel, ScopeLabel};
use crate::llm::{prompts, ChatRequest, LlmBackend, Message, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clause", content = "label", rename_all = "snake_case")]
pub enum ClarificationRequest {
    Intent(bool),
    Scope(ScopeLabel),
    Condition(ConditionLabel),
}

impl ClarificationRequest {
    pub fn clause(&self) -> Clause {
        match self {
            ClarificationRequest::Intent(_) => Clause::Intent,
            ClarificationRequest::Scope(_) => Clause::Scope,
            ClarificationRequest::Condition(_) => Clause::Condition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClarificationResponse {
    Revealed {
        text: String,
        keyword: String,
        attempts: u32,
        fell_back: bool,
    },
    /// Carries nothing, so nothing can leak.
    Refused,
}

impl ClarificationResponse {
    pub fn keyword(&self) -> Option<&str> {
        match self {
            ClarificationResponse::Revealed { keyword, .. } => Some(keyword),
            ClarificationResponse::Refused => None,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            ClarificationResponse::Revealed { text, .. } => text,
            ClarificationResponse::Refused => "",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimulatorMode {
    #[default]
    Fixed,
    Dynamic {
        #[serde(default = "default_retries")]
        max_retries: u32,
    },
}

pub const DEFAULT_MAX_RETRIES: u32 = 5;

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

impl SimulatorMode {
    pub fn dynamic() -> Self {
        SimulatorMode::Dynamic {
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimulatorMode::Fixed => "fixed",
            SimulatorMode::Dynamic { .. } => "dynamic",
        }
    }
}

/// How closely a prediction must match a gold label to be answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// Whole-triple equality.
    #[default]
    Strict,
    /// Same slot type is enough.
    SlotType,
}

pub fn render_fixed(clause: Clause, slot_type: &str, value: &str) -> String {
    match clause {
        Clause::Intent => format!("I want to know the {value}."),
        Clause::Scope => format!("The correct {slot_type} is {value}."),
        Clause::Condition => format!("The full {slot_type} is {value}."),
    }
}

/// Asks the model to rephrase the fixed sentence until a reply contains
/// `value` verbatim. Returns the text, the number of model calls and
/// whether it fell back to the fixed sentence.
pub fn render_dynamic(
    clause: Clause,
    slot_type: &str,
    value: &str,
    llm: &dyn LlmBackend,
    max_retries: u32,
) -> (String, u32, bool) {
    let fixed = render_fixed(clause, slot_type, value);
    let system = prompts::fill(prompts::DYNAMIC_CLARIFY, &[("keyword", value)]);
    let mut calls = 0;
    for attempt in 0..max_retries.max(1) {
        let req = ChatRequest::new(
            Stage::DynamicClarify,
            vec![Message::system(system.clone()), Message::user(fixed.clone())],
        )
        .with_seed(attempt as u64);
        calls += 1;
        match llm.complete(&req) {
            Ok(text) if text.contains(value) => return (text.trim().to_string(), calls, false),
            Ok(_) => continue,
            Err(_) => break,
        }
    }
    (fixed, calls, true)
}

pub struct Simulator<'a> {
    pub mode: SimulatorMode,
    pub gating: Gating,
    pub llm: Option<&'a dyn LlmBackend>,
}

impl<'a> Simulator<'a> {
    pub fn fixed() -> Self {
        Self {
            mode: SimulatorMode::Fixed,
            gating: Gating::Strict,
            llm: None,
        }
    }

    pub fn new(mode: SimulatorMode, gating: Gating, llm: Option<&'a dyn LlmBackend>) -> Self {
        Self { mode, gating, llm }
    }

    /// The ground-truth (slot label, value) a request would unlock.
    fn lookup(&self, inst: &QAInstance, req: &ClarificationRequest) -> Option<(String, String)> {
        match req {
            ClarificationRequest::Intent(predicted) => {
                if !*predicted || !inst.intent_underspec {
                    return None;
                }
                let header = inst.select_clarification.values().next()?;
                Some((String::new(), header.clone()))
            }
            ClarificationRequest::Scope(label) => {
                let hit = inst.scope_labels.iter().find(|g| match self.gating {
                    Gating::Strict => *g == label,
                    Gating::SlotType => g.slot_type == label.slot_type,
                })?;
                let value = inst.from_clarification.get(&hit.slot_type)?;
                Some((hit.slot_type.clone(), value.clone()))
            }
            ClarificationRequest::Condition(label) => {
                let hit = inst.condition_labels.iter().find(|g| match self.gating {
                    Gating::Strict => *g == label,
                    Gating::SlotType => g.slot_type == label.slot_type,
                })?;
                let value = inst.where_clarification.get(&hit.slot_type)?;
                Some((hit.slot_type.clone(), value.clone()))
            }
        }
    }

    pub fn clarify(&self, inst: &QAInstance, req: &ClarificationRequest) -> ClarificationResponse {
        let Some((slot_type, value)) = self.lookup(inst, req) else {
            return ClarificationResponse::Refused;
        };
        if value.is_empty() {
            return ClarificationResponse::Refused;
        }
        let clause = req.clause();
        let (text, attempts, fell_back) = match (self.mode, self.llm) {
            (SimulatorMode::Dynamic { max_retries }, Some(llm)) => {
                render_dynamic(clause, &slot_type, &value, llm, max_retries)
            }
            _ => (render_fixed(clause, &slot_type, &value), 0, false),
        };
        ClarificationResponse::Revealed {
            text,
            keyword: value,
            attempts,
            fell_back,
        }
    }
}
