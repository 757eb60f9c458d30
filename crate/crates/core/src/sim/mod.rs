//! Discrete-time 2D crowd-navigation environment.

mod agent;
mod config;
pub mod controllers;
mod env;
mod episode;
mod frame;
pub mod orca;
pub mod records;
mod scenario;
pub mod social_force;

use thiserror::Error;

pub use agent::{integrate, step_robot, AgentState};
pub use config::{WorkspaceConfig, MAX_HUMANS};
pub use env::Env;
pub use episode::{finish_episode, run_episode, Episode, RobotPolicy};
pub use frame::{classify_frame, predict_humans, Frame, Status};
pub use orca::orca_velocity;
pub use scenario::{generate_scenario, generate_scenario_with, GoalSwitch, Scenario};
pub use social_force::{social_force_velocity, SocialForceParams};

/// Double-precision agent used by the simulator.
pub type Agent = AgentState<f64>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("malformed action {0}")]
    MalformedAction(String),
    #[error("invalid workspace config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("scenario generation failed for seed {seed} index {index}: could not place human {human} after 1000 attempts")]
    ScenarioGeneration { seed: u64, index: u64, human: usize },
    #[error("invalid scenario {id}: {reason}")]
    InvalidScenario { id: String, reason: String },
    #[error("reward evaluation failed: {0}")]
    RewardEval(String),
    #[error("record format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
