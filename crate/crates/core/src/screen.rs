//! Stage I: rank-correlation screening of reward programs against the
//! rules ranking on a fixed trajectory dataset.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{rules_rank, ScenarioEntry, TrajectoryDataset};
use crate::lang::{eval_reward, EvalContext, EvalError, RewardProgram};
use crate::sim::{Episode, Scenario, WorkspaceConfig};
use crate::stats::{descending_ranks, spearman, RankVector};
use crate::Vec2;

/// Score given to candidates that fail to parse or evaluate.
pub const SENTINEL_SCORE: f64 = -2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Score {
    pub program_id: String,
    pub score: f64,
    pub per_scenario: Vec<f64>,
    pub frames: usize,
    pub invalid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl Stage1Score {
    pub fn invalid(program_id: impl Into<String>, diagnostic: impl Into<String>) -> Self {
        Self {
            program_id: program_id.into(),
            score: SENTINEL_SCORE,
            per_scenario: Vec::new(),
            frames: 0,
            invalid: true,
            diagnostic: Some(diagnostic.into()),
        }
    }
}

/// Per-frame rewards for t = 0..=upto. Past the episode's end the terminal
/// frame is re-scored with its position repeated, so the shaping term is 0.
pub fn frame_rewards(
    program: &RewardProgram,
    scenario: &Scenario,
    episode: &Episode,
    upto: usize,
    cfg: &WorkspaceConfig,
) -> Result<Vec<f64>, EvalError> {
    let positions = episode.positions();
    let last = episode.len() - 1;
    let mut out = Vec::with_capacity(upto + 1);
    for t in 0..=upto.min(last) {
        let ctx = EvalContext::new(&episode.frames[t], scenario, &positions[..=t], cfg);
        out.push(eval_reward(program, &ctx)?);
    }
    if upto > last {
        let mut held: Vec<Vec2> = positions.clone();
        held.push(positions[last]);
        let ctx = EvalContext::new(&episode.frames[last], scenario, &held, cfg);
        let r = eval_reward(program, &ctx)?;
        out.resize(upto + 1, r);
    }
    Ok(out)
}

/// Running sums of `frame_rewards`, index f = Σ_{t≤f}.
pub fn cumulative_rewards(
    program: &RewardProgram,
    scenario: &Scenario,
    episode: &Episode,
    upto: usize,
    cfg: &WorkspaceConfig,
) -> Result<Vec<f64>, EvalError> {
    let mut acc = 0.0;
    Ok(frame_rewards(program, scenario, episode, upto, cfg)?
        .into_iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect())
}

/// Trajectories ranked by cumulative reward through frame `f`, highest first.
pub fn reward_rank(
    program: &RewardProgram,
    scenario: &Scenario,
    episodes: &[Episode],
    f: usize,
    cfg: &WorkspaceConfig,
) -> Result<RankVector, EvalError> {
    let sums = episodes
        .iter()
        .map(|e| cumulative_rewards(program, scenario, e, f, cfg).map(|c| c[f]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(descending_ranks(&sums))
}

/// Mean over frames 1..=F_j of the rules/reward rank correlation.
pub fn score_scenario(program: &RewardProgram, entry: &ScenarioEntry, cfg: &WorkspaceConfig) -> Result<f64, EvalError> {
    let f_max = entry.frames;
    let sums = entry
        .episodes
        .iter()
        .map(|e| cumulative_rewards(program, &entry.scenario, e, f_max, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    let mut column = vec![0.0; sums.len()];
    for f in 1..=f_max {
        for (c, s) in column.iter_mut().zip(&sums) {
            *c = s[f];
        }
        let rules = rules_rank(&entry.scenario, &entry.episodes, f);
        let reward = descending_ranks(&column);
        total += spearman(&rules.0, &reward.0).expect("N_traj >= 2");
    }
    Ok(total / f_max as f64)
}

/// Dataset-level alignment score in [-1, 1], or the sentinel when any
/// frame fails to evaluate.
pub fn score_stage1(program_id: &str, program: &RewardProgram, dataset: &TrajectoryDataset) -> Stage1Score {
    let per: Result<Vec<f64>, EvalError> =
        dataset.entries.par_iter().map(|e| score_scenario(program, e, &dataset.env)).collect();
    match per {
        Ok(per_scenario) => {
            // Fixed summation order, by scenario index.
            let score = per_scenario.iter().sum::<f64>() / per_scenario.len() as f64;
            Stage1Score {
                program_id: program_id.into(),
                score,
                per_scenario,
                frames: dataset.total_frames(),
                invalid: false,
                diagnostic: None,
            }
        }
        Err(e) => Stage1Score::invalid(program_id, format!("evaluation failed: {e}")),
    }
}

/// Best first; invalid candidates last; ties by id.
pub fn rank_population(scores: &[Stage1Score]) -> Vec<String> {
    let mut order: Vec<&Stage1Score> = scores.iter().collect();
    order.sort_by(|a, b| {
        a.invalid
            .cmp(&b.invalid)
            .then_with(|| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal))
            .then_with(|| a.program_id.cmp(&b.program_id))
    });
    order.into_iter().map(|s| s.program_id.clone()).collect()
}
