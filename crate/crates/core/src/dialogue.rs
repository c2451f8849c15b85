//! Per-instance dialogue state and the events recorded while it evolves.

use serde::{Deserialize, Serialize};

use crate::bio::SlotBinding;
use crate::labels::{ConditionLabel, ScopeLabel};
use crate::registry::DomainRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    System,
    /// The simulated user's answer to a clarification question.
    Clarification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    Intent,
    Scope,
    Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// One trace record body. The harness adds the instance id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Turn(Turn),
    Slu {
        phase: String,
        intents: Vec<String>,
        slots: SlotBinding,
    },
    Domain {
        domain: DomainRef,
        /// Intents that mapped to a different domain than the chosen one.
        conflicts: Vec<String>,
    },
    Detect {
        clause: Clause,
        intent: Option<bool>,
        scope: Vec<ScopeLabel>,
        condition: Vec<ConditionLabel>,
    },
    Clarify {
        clause: Clause,
        request: serde_json::Value,
        revealed: bool,
        /// Simulator rendering attempts (dynamic mode).
        attempts: u32,
        fell_back: bool,
    },
    Suppressed {
        clause: Clause,
    },
    Attribution {
        slot_type: String,
        counts: Vec<(String, usize)>,
    },
    Scope {
        resolved: SlotBinding,
        outstanding: Vec<ScopeLabel>,
    },
    Retrieval {
        summary: Option<String>,
        method: String,
        captions: Vec<String>,
        scores: Vec<f64>,
    },
    SqlAttempt {
        attempt: usize,
        sql: String,
        verdict: String,
        result_kind: String,
        rows: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DialogueState {
    pub turns: Vec<Turn>,
    /// Current slot beliefs.
    pub slots: SlotBinding,
    pub intents: Vec<String>,
    pub events: Vec<Event>,
}

impl DialogueState {
    pub fn new(question: &str) -> Self {
        let mut ds = Self::default();
        ds.say(Speaker::User, question);
        ds
    }

    pub fn say(&mut self, speaker: Speaker, text: impl Into<String>) {
        let turn = Turn {
            speaker,
            text: text.into(),
        };
        self.events.push(Event::Turn(turn.clone()));
        self.turns.push(turn);
    }

    pub fn record(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn question(&self) -> &str {
        self.turns.first().map(|t| t.text.as_str()).unwrap_or("")
    }

    /// Everything the user side said, in order.
    pub fn user_text(&self) -> String {
        self.turns
            .iter()
            .filter(|t| t.speaker != Speaker::System && !t.text.is_empty())
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The whole conversation as `role: text` lines.
    pub fn transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| {
                let who = match t.speaker {
                    Speaker::User | Speaker::Clarification => "user",
                    Speaker::System => "assistant",
                };
                format!("{who}: {}", t.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}
