//! Reward search: provider client, prompts, evolution operators, the staged
//! pipeline and its reports.

pub mod config;
pub mod evolve;
pub mod llm;
pub mod orchestrator;
pub mod prompts;
pub mod report;
