//! Underspecified tabular question answering with clarification dialogues.

pub mod bio;
pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod evalharness;
pub mod genpipe;
pub mod instance;
pub mod labels;
pub mod llm;
pub mod registry;
pub mod retrieval;
pub mod scope;
pub mod seed;
pub mod simulator;
pub mod slu;
pub mod sqlgen;
pub mod templates;
pub mod text;
