//! Episode outcome metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::sim::{run_episode, Episode, Frame, RobotPolicy, Scenario, SimError, Status, WorkspaceConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTuple {
    pub sr: f64,
    pub cr: f64,
    pub tr: f64,
    /// Mean time to goal in seconds over successful episodes; `None` when none succeeded.
    pub nt: Option<f64>,
    pub pl: f64,
    pub itr: f64,
    pub sd: f64,
    pub episodes: usize,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no episodes to evaluate")]
    Empty,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// What the metrics need from one episode, so frames can be dropped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub outcome: Status,
    /// Index of the terminal frame.
    pub steps: usize,
    pub path_length: f64,
    pub intrusions: usize,
    pub running_frames: usize,
    pub mean_clearance: f64,
}

/// True when the robot disc overlaps any visible human's forecast disc.
pub fn frame_intrudes(frame: &Frame) -> bool {
    let r0 = frame.robot.radius;
    frame.visible.iter().zip(&frame.predicted).any(|(&h, row)| {
        let reach = r0 + frame.all_humans[h].radius;
        row.iter().any(|p| p.dist(frame.robot.pos) < reach)
    })
}

/// Clearance to the nearest visible human, or the sensing range when none is visible.
pub fn frame_clearance(frame: &Frame, cfg: &WorkspaceConfig) -> f64 {
    frame.min_visible_clearance().unwrap_or(cfg.sense_range).min(cfg.sense_range)
}

pub fn summarize(ep: &Episode, cfg: &WorkspaceConfig) -> EpisodeSummary {
    let running: Vec<&Frame> = ep.frames.iter().filter(|f| f.status == Status::Running).collect();
    let clearance: f64 = ep.frames.iter().map(|f| frame_clearance(f, cfg)).sum::<f64>() / ep.frames.len() as f64;
    EpisodeSummary {
        outcome: ep.outcome,
        steps: ep.last().t,
        path_length: ep.path_length,
        intrusions: running.iter().filter(|f| frame_intrudes(f)).count(),
        running_frames: running.len(),
        mean_clearance: clearance,
    }
}

/// Aggregates summaries. Rates are episode fractions; ITR pools all
/// non-terminal frames.
pub fn aggregate(summaries: &[EpisodeSummary], cfg: &WorkspaceConfig) -> Result<MetricsTuple, MetricsError> {
    if summaries.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = summaries.len() as f64;
    let count = |s: Status| summaries.iter().filter(|e| e.outcome == s).count();
    let successes: Vec<&EpisodeSummary> = summaries.iter().filter(|e| e.outcome == Status::Success).collect();
    let sr = successes.len() as f64 / n;
    let cr = count(Status::Collision) as f64 / n;
    let running: usize = summaries.iter().map(|e| e.running_frames).sum();
    let intrusions: usize = summaries.iter().map(|e| e.intrusions).sum();
    Ok(MetricsTuple {
        sr,
        cr,
        tr: 1.0 - sr - cr,
        nt: (!successes.is_empty())
            .then(|| successes.iter().map(|e| e.steps as f64 * cfg.dt).sum::<f64>() / successes.len() as f64),
        pl: summaries.iter().map(|e| e.path_length).sum::<f64>() / n,
        itr: if running == 0 { 0.0 } else { intrusions as f64 / running as f64 },
        sd: summaries.iter().map(|e| e.mean_clearance).sum::<f64>() / n,
        episodes: summaries.len(),
    })
}

pub fn metrics_from_episodes(episodes: &[Episode], cfg: &WorkspaceConfig) -> Result<MetricsTuple, MetricsError> {
    let s: Vec<EpisodeSummary> = episodes.iter().map(|e| summarize(e, cfg)).collect();
    aggregate(&s, cfg)
}

/// Runs one fresh controller per scenario (in parallel) and summarizes.
/// Episode `i` draws from stream `(seed, "evaluate", i)`.
pub fn evaluate_summaries<P, F>(make: F, scenarios: &[Scenario], cfg: &WorkspaceConfig, seed: u64) -> Result<Vec<EpisodeSummary>, MetricsError>
where
    P: RobotPolicy,
    F: Fn() -> P + Sync,
{
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, sc)| {
            let mut policy = make();
            let mut r = rng::stream(seed, "evaluate", &[i as u64]);
            let ep = run_episode(sc, &mut policy, None, cfg, &mut r)?;
            Ok(summarize(&ep, cfg))
        })
        .collect()
}

pub fn evaluate_controller<P, F>(make: F, scenarios: &[Scenario], cfg: &WorkspaceConfig, seed: u64) -> Result<MetricsTuple, MetricsError>
where
    P: RobotPolicy,
    F: Fn() -> P + Sync,
{
    if scenarios.is_empty() {
        return Err(MetricsError::Empty);
    }
    aggregate(&evaluate_summaries(make, scenarios, cfg, seed)?, cfg)
}
