use serde::{Deserialize, Serialize};

use super::{Env, Frame, Scenario, SimError, Status, WorkspaceConfig};
use crate::lang::{eval_reward, EvalContext, RewardProgram};
use crate::rng::StreamRng;
use crate::Vec2;

/// A robot controller: maps the current observation to a velocity command.
pub trait RobotPolicy {
    fn name(&self) -> String;

    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, rng: &mut StreamRng) -> Vec2;
}

impl<F> RobotPolicy for F
where
    F: FnMut(&Frame, &Scenario, &WorkspaceConfig) -> Vec2,
{
    fn name(&self) -> String {
        "scripted".into()
    }

    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, _rng: &mut StreamRng) -> Vec2 {
        self(frame, scenario, cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scenario_id: String,
    pub frames: Vec<Frame>,
    pub actions: Vec<Vec2>,
    pub outcome: Status,
    pub success_step: Option<usize>,
    pub collision_step: Option<usize>,
    pub path_length: f64,
    /// Per-frame rewards (one per frame) when a program was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<f64>>,
    /// Set when the episode was cut short by a faulty policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.frames.iter().map(|f| f.robot.pos).collect()
    }

    pub fn last(&self) -> &Frame {
        self.frames.last().expect("episodes are nonempty")
    }
}

/// Assembles an episode record from recorded frames.
pub fn finish_episode(scenario: &Scenario, frames: Vec<Frame>, actions: Vec<Vec2>, diagnostic: Option<String>) -> Episode {
    let last = frames.last().expect("at least the initial frame");
    let outcome = last.status;
    let step = last.t;
    let path_length = frames.windows(2).map(|w| w[1].robot.pos.dist(w[0].robot.pos)).sum();
    Episode {
        scenario_id: scenario.id.clone(),
        success_step: (outcome == Status::Success).then_some(step),
        collision_step: (outcome == Status::Collision).then_some(step),
        frames,
        actions,
        outcome,
        path_length,
        rewards: None,
        diagnostic,
    }
}

/// Runs `policy` in `scenario` until the first terminal status.
///
/// With a reward program, every frame (including the initial one) is scored
/// against the trajectory prefix that ends at it.
pub fn run_episode(
    scenario: &Scenario,
    policy: &mut dyn RobotPolicy,
    reward: Option<&RewardProgram>,
    cfg: &WorkspaceConfig,
    rng: &mut StreamRng,
) -> Result<Episode, SimError> {
    let mut env = Env::new(cfg, scenario);
    let mut frames = vec![env.frame().clone()];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut diagnostic = None;

    let score = |env: &Env, rewards: &mut Vec<f64>| -> Result<(), SimError> {
        if let Some(program) = reward {
            let ctx = EvalContext::new(env.frame(), scenario, env.positions(), cfg);
            let r = eval_reward(program, &ctx).map_err(|e| SimError::RewardEval(e.to_string()))?;
            rewards.push(r);
        }
        Ok(())
    };
    score(&env, &mut rewards)?;

    while !env.done() {
        let action = policy.act(env.frame(), scenario, cfg, rng);
        if !action.is_finite() {
            diagnostic = Some(format!("policy {} emitted non-finite action {:?}", policy.name(), action));
            env.abort();
            frames.last_mut().expect("initial frame").status = Status::Collision;
            break;
        }
        env.step(action)?;
        actions.push(action);
        frames.push(env.frame().clone());
        score(&env, &mut rewards)?;
    }

    let mut ep = finish_episode(scenario, frames, actions, diagnostic);
    if reward.is_some() {
        ep.rewards = Some(rewards);
    }
    Ok(ep)
}
