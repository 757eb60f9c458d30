use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::sim::{Episode, Scenario, Status};
use crate::stats::{average_ranks_by, RankVector};

/// Per-frame ordering key for one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RulesKey {
    /// Reached the goal at this step (≤ f).
    Succeeded(usize),
    /// Still running; progress toward the goal in metres.
    Running(f64),
    /// Collided at this step (≤ f).
    Collided(usize),
}

impl RulesKey {
    pub fn class(self) -> u8 {
        match self {
            RulesKey::Succeeded(_) => 2,
            RulesKey::Running(_) => 1,
            RulesKey::Collided(_) => 0,
        }
    }
}

/// `Less` when `a` ranks ahead of `b`: success over running over collision;
/// earlier success, more progress, later collision.
pub fn compare_rules(a: RulesKey, b: RulesKey) -> Ordering {
    use RulesKey::*;
    match (a, b) {
        (Succeeded(x), Succeeded(y)) => x.cmp(&y),
        (Running(x), Running(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Collided(x), Collided(y)) => y.cmp(&x),
        _ => b.class().cmp(&a.class()),
    }
}

/// Key of `episode` at frame `f`; frames past the end use the terminal state.
/// Only steps ≤ f are consulted.
pub fn rules_key(scenario: &Scenario, episode: &Episode, f: usize) -> RulesKey {
    let last = episode.len() - 1;
    let frame = &episode.frames[f.min(last)];
    match frame.status {
        Status::Success => RulesKey::Succeeded(frame.t),
        Status::Collision => RulesKey::Collided(frame.t),
        Status::Running | Status::Timeout => {
            let g = scenario.robot_goal;
            RulesKey::Running(episode.frames[0].robot.pos.dist(g) - frame.robot.pos.dist(g))
        }
    }
}

pub fn rules_rank_keys(keys: &[RulesKey]) -> RankVector {
    average_ranks_by(keys.len(), |a, b| compare_rules(keys[a], keys[b]))
}

pub fn rules_rank(scenario: &Scenario, episodes: &[Episode], f: usize) -> RankVector {
    let keys: Vec<RulesKey> = episodes.iter().map(|e| rules_key(scenario, e, f)).collect();
    rules_rank_keys(&keys)
}
