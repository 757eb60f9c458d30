//! Stage I screening data: scenarios with behaviourally diverse robot
//! trajectories, and the rules-based per-frame ranking.

mod rules;
mod store;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rules::{compare_rules, rules_key, rules_rank, rules_rank_keys, RulesKey};
pub use store::{load_dataset, save_dataset, DATASET_SCHEMA};

use crate::rng::{self, digest_hex};
use crate::sim::controllers::ControllerKind;
use crate::sim::{generate_scenario, run_episode, Episode, Scenario, SimError, Status, WorkspaceConfig};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid dataset config `{key}`: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("dataset integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Number of scenarios, M.
    pub scenarios: usize,
    /// Trajectories per scenario, N_traj.
    pub trajectories: usize,
    /// Cap on frames scored per scenario.
    pub max_frames: usize,
    pub seed: u64,
    /// Fraction of scenarios that should contain both a success and a
    /// collision; below it the set is regenerated under a derived seed.
    pub min_coverage: f64,
    pub max_regenerations: usize,
    pub roster: Vec<ControllerKind>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scenarios: 100,
            trajectories: 10,
            max_frames: 200,
            seed: 0,
            min_coverage: 0.8,
            max_regenerations: 4,
            roster: ControllerKind::roster(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |key, reason: &str| Err(DatasetError::InvalidConfig { key, reason: reason.into() });
        if self.scenarios < 2 {
            return bad("scenarios", "M must be >= 2");
        }
        if self.trajectories < 2 {
            return bad("trajectories", "N_traj must be >= 2");
        }
        if self.max_frames < 1 {
            return bad("max_frames", "must be >= 1");
        }
        if self.roster.is_empty() {
            return bad("roster", "needs at least one controller");
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad("min_coverage", "must lie in [0, 1]");
        }
        Ok(())
    }

    /// Controller used for trajectory `k` of every scenario.
    pub fn controller(&self, k: usize) -> ControllerKind {
        self.roster[k % self.roster.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub scenario: Scenario,
    pub episodes: Vec<Episode>,
    pub controllers: Vec<String>,
    /// Frames scored for this scenario, F_j.
    pub frames: usize,
}

impl ScenarioEntry {
    pub fn has_success(&self) -> bool {
        self.episodes.iter().any(|e| e.outcome == Status::Success)
    }

    pub fn has_collision(&self) -> bool {
        self.episodes.iter().any(|e| e.outcome == Status::Collision)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub seed: u64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub scenarios: usize,
    pub trajectories: usize,
    pub max_frames: usize,
    pub requested_seed: u64,
    /// Seed the stored set was generated from.
    pub seed: u64,
    pub attempts: Vec<Attempt>,
    pub roster: Vec<ControllerKind>,
    pub env: WorkspaceConfig,
    pub env_digest: String,
    pub frames: Vec<usize>,
    pub coverage: f64,
    pub content_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub env: WorkspaceConfig,
    pub entries: Vec<ScenarioEntry>,
    pub manifest: DatasetManifest,
}

impl TrajectoryDataset {
    pub fn content_hash(&self) -> &str {
        &self.manifest.content_hash
    }

    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|e| e.frames).sum()
    }
}

/// F_j: frames 1..=F_j are scored, F_j = min(longest - 1, cap), at least 1.
pub fn frame_count(episodes: &[Episode], cap: usize) -> usize {
    let longest = episodes.iter().map(Episode::len).max().unwrap_or(1);
    longest.saturating_sub(1).clamp(1, cap.max(1))
}

pub fn env_digest(env: &WorkspaceConfig) -> String {
    digest_hex(serde_json::to_string(env).expect("config serializes").as_bytes())
}

/// Fraction of scenarios containing both a success and a collision.
pub fn coverage(entries: &[ScenarioEntry]) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let hit = entries.iter().filter(|e| e.has_success() && e.has_collision()).count();
    hit as f64 / entries.len() as f64
}

/// Hash over everything that determines the dataset's content.
pub(crate) fn hash_entries(env: &WorkspaceConfig, entries: &[ScenarioEntry]) -> String {
    type Runs<'a> = Vec<(&'a [crate::Vec2], Status, usize)>;
    #[derive(Serialize)]
    struct Canon<'a> {
        env: &'a WorkspaceConfig,
        scenarios: Vec<(&'a Scenario, &'a [String], Runs<'a>)>,
    }
    let canon = Canon {
        env,
        scenarios: entries
            .iter()
            .map(|e| {
                let eps = e.episodes.iter().map(|ep| (&ep.actions[..], ep.outcome, ep.len())).collect();
                (&e.scenario, &e.controllers[..], eps)
            })
            .collect(),
    };
    digest_hex(serde_json::to_string(&canon).expect("dataset serializes").as_bytes())
}

fn build_entries(env: &WorkspaceConfig, dcfg: &DatasetConfig, seed: u64) -> Result<Vec<ScenarioEntry>, DatasetError> {
    (0..dcfg.scenarios)
        .into_par_iter()
        .map(|j| {
            let scenario = generate_scenario(env, seed, j as u64)?;
            let mut episodes = Vec::with_capacity(dcfg.trajectories);
            let mut controllers = Vec::with_capacity(dcfg.trajectories);
            for k in 0..dcfg.trajectories {
                let kind = dcfg.controller(k);
                let mut policy = kind.build();
                let mut r = rng::stream(seed, "dataset-episode", &[j as u64, k as u64]);
                episodes.push(run_episode(&scenario, policy.as_mut(), None, env, &mut r)?);
                controllers.push(policy.name());
            }
            let frames = frame_count(&episodes, dcfg.max_frames);
            Ok(ScenarioEntry { scenario, episodes, controllers, frames })
        })
        .collect()
}

/// Simulates every roster controller in M generated scenarios.
///
/// If fewer than `min_coverage` of the scenarios contain both a success and
/// a collision, the whole set is regenerated from a derived seed; all
/// attempts are listed in the manifest and the best one is kept.
pub fn build_dataset(env: &WorkspaceConfig, dcfg: &DatasetConfig) -> Result<TrajectoryDataset, DatasetError> {
    env.validate()?;
    dcfg.validate()?;
    let mut attempts = Vec::new();
    let mut best: Option<(u64, Vec<ScenarioEntry>, f64)> = None;
    for attempt in 0..=dcfg.max_regenerations {
        let seed = if attempt == 0 { dcfg.seed } else { rng::derive_seed(dcfg.seed, "dataset-regenerate", &[attempt as u64]) };
        let entries = build_entries(env, dcfg, seed)?;
        let cov = coverage(&entries);
        attempts.push(Attempt { seed, coverage: cov });
        if best.as_ref().is_none_or(|b| cov > b.2) {
            best = Some((seed, entries, cov));
        }
        if cov >= dcfg.min_coverage {
            break;
        }
    }
    let (seed, entries, cov) = best.expect("at least one attempt");
    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA.into(),
        scenarios: dcfg.scenarios,
        trajectories: dcfg.trajectories,
        max_frames: dcfg.max_frames,
        requested_seed: dcfg.seed,
        seed,
        attempts,
        roster: dcfg.roster.clone(),
        env: env.clone(),
        env_digest: env_digest(env),
        frames: entries.iter().map(|e| e.frames).collect(),
        coverage: cov,
        content_hash: hash_entries(env, &entries),
    };
    Ok(TrajectoryDataset { env: env.clone(), entries, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m: usize, n: usize) -> DatasetConfig {
        DatasetConfig { scenarios: m, trajectories: n, seed: 5, max_regenerations: 0, ..Default::default() }
    }

    #[test]
    fn cardinality_contract() {
        let ds = build_dataset(&WorkspaceConfig::default(), &small(2, 3)).unwrap();
        assert_eq!(ds.entries.len(), 2);
        for e in &ds.entries {
            assert_eq!(e.episodes.len(), 3);
            assert_eq!(e.controllers, vec!["straight", "orca_t1_s1", "social_force"]);
            assert!(e.episodes.iter().all(|ep| ep.len() >= 2));
        }
    }

    #[test]
    fn same_seed_same_hash() {
        let env = WorkspaceConfig::default();
        let a = build_dataset(&env, &small(3, 4)).unwrap();
        let b = build_dataset(&env, &small(3, 4)).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = build_dataset(&env, &DatasetConfig { seed: 6, ..small(3, 4) }).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(build_dataset(&WorkspaceConfig::default(), &small(1, 3)).is_err());
        assert!(build_dataset(&WorkspaceConfig::default(), &small(3, 1)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = build_dataset(&WorkspaceConfig::default(), &small(2, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn frame_count_is_capped() {
        let ds = build_dataset(&WorkspaceConfig::default(), &DatasetConfig { max_frames: 20, ..small(2, 4) }).unwrap();
        assert!(ds.entries.iter().all(|e| e.frames <= 20 && e.frames >= 1));
    }
}
