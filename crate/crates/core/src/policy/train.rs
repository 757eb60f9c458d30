use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{extract_into, feature_dim};
use super::network::{Activations, PolicyParams};
use super::update::{clip_grad_norm, compute_update, log_prob, Adam, LossStats, LossWeights, Objective, Transition};
use crate::lang::{eval_reward, EvalContext, RewardProgram};
use crate::rng::{self, StreamRng};
use crate::sim::{generate_scenario, Env, SimError, Status, WorkspaceConfig};
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    A2c,
    Ppo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    /// Gradient steps for a2c, environment steps for ppo.
    pub steps: usize,
    pub n_step: usize,
    pub n_envs: usize,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub step_size: f64,
    pub max_grad_norm: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub rollout: usize,
    pub k_nearest: usize,
    pub hidden: usize,
    /// Overrides the workspace horizon during training when set.
    pub horizon: Option<usize>,
    /// Environment steps between log records.
    pub log_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::A2c,
            steps: 2000,
            n_step: 5,
            n_envs: 8,
            gamma: 0.99,
            entropy_coef: 0.01,
            value_coef: 0.5,
            step_size: 3e-4,
            max_grad_norm: 0.5,
            clip: 0.2,
            gae_lambda: 0.95,
            epochs: 4,
            minibatch: 64,
            rollout: 2048,
            k_nearest: 5,
            hidden: 64,
            horizon: None,
            log_interval: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stage II proxy: a2c, width 64, short horizon.
    pub fn proxy(steps: usize, seed: u64) -> Self {
        Self { algo: Algo::A2c, steps, hidden: 64, horizon: Some(100), seed, ..Self::default() }
    }

    /// Stage III full trainer: ppo, width 256.
    pub fn full(steps: usize, seed: u64) -> Self {
        Self { algo: Algo::Ppo, steps, hidden: 256, horizon: None, seed, log_interval: 2048, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.n_step == 0 || self.n_envs == 0 || self.hidden == 0 || self.epochs == 0 || self.log_interval == 0 {
            return bad("n_step, n_envs, hidden, epochs and log_interval must be positive");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma must lie in [0, 1) and gae_lambda in [0, 1]");
        }
        if !(self.step_size > 0.0 && self.max_grad_norm > 0.0) {
            return bad("step_size and max_grad_norm must be positive");
        }
        if self.algo == Algo::Ppo && (self.minibatch < 2 || self.rollout < self.n_envs) {
            return bad("ppo needs minibatch >= 2 and rollout >= n_envs");
        }
        if self.horizon == Some(0) {
            return bad("horizon must be >= 1");
        }
        Ok(())
    }

    pub fn env_config(&self, env: &WorkspaceConfig) -> WorkspaceConfig {
        let mut cfg = env.clone();
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        cfg
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("reward program failed at training step {step}: {message}")]
    Reward { step: usize, message: String },
    #[error("non-finite parameters after update {0}")]
    Diverged(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub env_steps: usize,
    pub updates: usize,
    /// Episodes finished since the previous record.
    pub episodes: usize,
    /// Undiscounted episode return, averaged over those episodes.
    pub mean_return: Option<f64>,
    pub mean_length: Option<f64>,
    pub success_rate: Option<f64>,
    pub loss: LossStats,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub env_steps: usize,
    pub updates: usize,
    pub episodes: usize,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("log records serialize"));
            s.push('\n');
        }
        s
    }
}

struct Slot {
    env: Env,
    ret: f64,
}

struct Step {
    obs: Vec<f64>,
    action: [f64; 2],
    log_prob: f64,
    value: f64,
    reward: f64,
    /// Episode ended here; the reward already includes any bootstrap for a timeout.
    done: bool,
}

struct Runner<'a> {
    program: &'a RewardProgram,
    tc: &'a TrainConfig,
    cfg: WorkspaceConfig,
    scenario_seed: u64,
    next_scenario: u64,
    slots: Vec<Slot>,
    rng: StreamRng,
    obs_buf: Vec<f64>,
    act: Activations<f64>,
    env_steps: usize,
    // Interval accumulators.
    finished: Vec<(f64, usize, bool)>,
}

impl<'a> Runner<'a> {
    fn new(program: &'a RewardProgram, tc: &'a TrainConfig, cfg: WorkspaceConfig) -> Result<Self, TrainError> {
        let mut r = Self {
            program,
            tc,
            cfg,
            scenario_seed: rng::derive_seed(tc.seed, "train-scenarios", &[]),
            next_scenario: 0,
            slots: Vec::new(),
            rng: rng::stream(tc.seed, "train-actions", &[]),
            obs_buf: Vec::new(),
            act: Activations::default(),
            env_steps: 0,
            finished: Vec::new(),
        };
        for _ in 0..tc.n_envs {
            let env = r.fresh_env()?;
            r.slots.push(Slot { env, ret: 0.0 });
        }
        Ok(r)
    }

    fn fresh_env(&mut self) -> Result<Env, TrainError> {
        let sc = generate_scenario(&self.cfg, self.scenario_seed, self.next_scenario)?;
        self.next_scenario += 1;
        Ok(Env::new(&self.cfg, &sc))
    }

    fn observe(&mut self, i: usize) -> Vec<f64> {
        extract_into(self.slots[i].env.frame(), self.tc.k_nearest, &self.cfg, &mut self.obs_buf);
        self.obs_buf.clone()
    }

    fn value_of(&mut self, params: &PolicyParams<f64>, i: usize) -> f64 {
        let obs = self.observe(i);
        params.forward_cached(&obs, &mut self.act).value
    }

    fn reward(&self, i: usize) -> Result<f64, TrainError> {
        let env = &self.slots[i].env;
        let ctx = EvalContext::new(env.frame(), env.scenario(), env.positions(), &self.cfg);
        eval_reward(self.program, &ctx).map_err(|e| TrainError::Reward { step: self.env_steps, message: e.to_string() })
    }

    /// Advances environment `i` one step with a sampled action.
    fn step_env(&mut self, params: &PolicyParams<f64>, i: usize) -> Result<Step, TrainError> {
        let obs = self.observe(i);
        let out = params.forward_cached(&obs, &mut self.act);
        let e0: f64 = StandardNormal.sample(&mut self.rng);
        let e1: f64 = StandardNormal.sample(&mut self.rng);
        let action = [out.mean.x + out.log_std[0].exp() * e0, out.mean.y + out.log_std[1].exp() * e1];
        let lp = log_prob(action, out.mean, out.log_std);
        let cmd = Vec2::new(action[0], action[1]).clamp_norm(self.cfg.v_max);

        self.slots[i].env.step(cmd)?;
        self.env_steps += 1;
        let mut reward = self.reward(i)?;
        self.slots[i].ret += reward;
        let status = self.slots[i].env.frame().status;
        let done = status.is_terminal();
        if done {
            if status == Status::Timeout {
                reward += self.tc.gamma * self.value_of(params, i);
            }
            let len = self.slots[i].env.frame().t;
            self.finished.push((self.slots[i].ret, len, status == Status::Success));
            let env = self.fresh_env()?;
            self.slots[i] = Slot { env, ret: 0.0 };
        }
        Ok(Step { obs, action, log_prob: lp, value: out.value, reward, done })
    }

    /// Collects `len` steps from every environment; `steps[t][i]`.
    fn collect(&mut self, params: &PolicyParams<f64>, len: usize) -> Result<(Vec<Vec<Step>>, Vec<f64>), TrainError> {
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let mut row = Vec::with_capacity(self.slots.len());
            for i in 0..self.slots.len() {
                row.push(self.step_env(params, i)?);
            }
            steps.push(row);
        }
        let last: Vec<f64> = (0..self.slots.len()).map(|i| self.value_of(params, i)).collect();
        Ok((steps, last))
    }

    fn take_record(&mut self, updates: usize, loss: LossStats) -> LogRecord {
        let n = self.finished.len();
        let mean = |f: &dyn Fn(&(f64, usize, bool)) -> f64| (n > 0).then(|| self.finished.iter().map(f).sum::<f64>() / n as f64);
        let rec = LogRecord {
            env_steps: self.env_steps,
            updates,
            episodes: n,
            mean_return: mean(&|e| e.0),
            mean_length: mean(&|e| e.1 as f64),
            success_rate: mean(&|e| if e.2 { 1.0 } else { 0.0 }),
            loss,
        };
        self.finished.clear();
        rec
    }
}

/// n-step bootstrapped returns, or generalized advantages when `lambda` is
/// given. Returns `(advantages, returns)` flattened time-major.
fn targets(steps: &[Vec<Step>], last: &[f64], gamma: f64, lambda: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let t_len = steps.len();
    let n = last.len();
    let mut adv = vec![0.0; t_len * n];
    let mut ret = vec![0.0; t_len * n];
    for i in 0..n {
        let mut next_value = last[i];
        let mut running = match lambda {
            Some(_) => 0.0,
            None => last[i],
        };
        for t in (0..t_len).rev() {
            let s = &steps[t][i];
            let live = if s.done { 0.0 } else { 1.0 };
            match lambda {
                Some(l) => {
                    let delta = s.reward + gamma * next_value * live - s.value;
                    running = delta + gamma * l * live * running;
                    adv[t * n + i] = running;
                    ret[t * n + i] = running + s.value;
                }
                None => {
                    running = s.reward + gamma * running * live;
                    ret[t * n + i] = running;
                    adv[t * n + i] = running - s.value;
                }
            }
            next_value = s.value;
        }
    }
    (adv, ret)
}

fn transitions(steps: Vec<Vec<Step>>, adv: &[f64], ret: &[f64]) -> Vec<Transition<f64>> {
    steps
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(k, s)| Transition { obs: s.obs, action: s.action, advantage: adv[k], ret: ret[k], old_log_prob: s.log_prob })
        .collect()
}

fn apply(params: &mut PolicyParams<f64>, opt: &mut Adam<f64>, mut grad: Vec<f64>, tc: &TrainConfig, update: usize) -> Result<(), TrainError> {
    clip_grad_norm(&mut grad, tc.max_grad_norm);
    opt.step(&mut params.data, &grad);
    params.clamp_log_std();
    if !params.is_finite() {
        return Err(TrainError::Diverged(update));
    }
    Ok(())
}

/// Fresh initialization of the network `train_policy` would start from.
pub fn initial_params(tc: &TrainConfig, env: &WorkspaceConfig) -> PolicyParams<f64> {
    let mut r = rng::stream(tc.seed, "policy-init", &[]);
    PolicyParams::init(feature_dim(tc.k_nearest), tc.hidden, env.v_max, &mut r)
}

/// Trains a policy from scratch against `program`. Deterministic in
/// `(program, tc, env)`.
pub fn train_policy(program: &RewardProgram, tc: &TrainConfig, env: &WorkspaceConfig) -> Result<(PolicyParams<f64>, TrainLog), TrainError> {
    tc.validate()?;
    let cfg = tc.env_config(env);
    cfg.validate()?;
    let mut params = initial_params(tc, &cfg);
    let mut log = TrainLog::default();
    if tc.steps == 0 {
        return Ok((params, log));
    }
    let mut opt = Adam::new(params.len(), tc.step_size);
    let mut runner = Runner::new(program, tc, cfg)?;
    let mut next_log = tc.log_interval;
    let mut updates = 0usize;
    let mut last_loss = LossStats::default();

    match tc.algo {
        Algo::A2c => {
            let w = LossWeights { objective: Objective::PolicyGradient, value_coef: tc.value_coef, entropy_coef: tc.entropy_coef };
            while updates < tc.steps {
                let (steps, last) = runner.collect(&params, tc.n_step)?;
                let (adv, ret) = targets(&steps, &last, tc.gamma, None);
                let batch = transitions(steps, &adv, &ret);
                let (grad, stats) = compute_update(&params, &batch, &w);
                updates += 1;
                apply(&mut params, &mut opt, grad, tc, updates)?;
                last_loss = stats;
                if runner.env_steps >= next_log || updates == tc.steps {
                    log.records.push(runner.take_record(updates, last_loss));
                    next_log = runner.env_steps + tc.log_interval;
                }
            }
        }
        Algo::Ppo => {
            let w = LossWeights { objective: Objective::Clipped { clip: tc.clip }, value_coef: tc.value_coef, entropy_coef: tc.entropy_coef };
            let per_env = (tc.rollout / tc.n_envs).max(1);
            let mut iteration = 0u64;
            while runner.env_steps < tc.steps {
                let remaining = tc.steps - runner.env_steps;
                let len = per_env.min(remaining.div_ceil(tc.n_envs));
                let (steps, last) = runner.collect(&params, len)?;
                let (adv, ret) = targets(&steps, &last, tc.gamma, Some(tc.gae_lambda));
                let batch = transitions(steps, &adv, &ret);
                let mut order: Vec<usize> = (0..batch.len()).collect();
                for epoch in 0..tc.epochs {
                    let mut r = rng::stream(tc.seed, "ppo-minibatch", &[iteration, epoch as u64]);
                    order.shuffle(&mut r);
                    for chunk in order.chunks(tc.minibatch) {
                        if chunk.len() < 2 {
                            continue;
                        }
                        let mut mb: Vec<Transition<f64>> = chunk.iter().map(|&k| batch[k].clone()).collect();
                        normalize_advantages(&mut mb);
                        let (grad, stats) = compute_update(&params, &mb, &w);
                        updates += 1;
                        apply(&mut params, &mut opt, grad, tc, updates)?;
                        last_loss = stats;
                    }
                }
                iteration += 1;
                if runner.env_steps >= next_log || runner.env_steps >= tc.steps {
                    log.records.push(runner.take_record(updates, last_loss));
                    next_log = runner.env_steps + tc.log_interval;
                }
            }
        }
    }
    log.env_steps = runner.env_steps;
    log.updates = updates;
    log.episodes = runner.next_scenario as usize - runner.slots.len();
    Ok((params, log))
}

fn normalize_advantages(mb: &mut [Transition<f64>]) {
    let n = mb.len() as f64;
    let mean = mb.iter().map(|t| t.advantage).sum::<f64>() / n;
    let var = mb.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    for t in mb {
        t.advantage = (t.advantage - mean) / sd;
    }
}
