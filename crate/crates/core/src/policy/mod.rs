//! Feature extraction, the Gaussian policy network and its trainers.

mod features;
mod network;
mod train;
mod update;

#[cfg(test)]
mod tests;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{extract_features, extract_into, feature_dim, HUMAN_FEATURES, ROBOT_FEATURES};
pub use network::{param_count, tensor_shapes, Activations, PolicyOutput, PolicyParams, LOG_STD_MAX, LOG_STD_MIN};
pub use train::{initial_params, train_policy, Algo, LogRecord, TrainConfig, TrainError, TrainLog};
pub use update::{batch_loss, clip_grad_norm, compute_update, entropy, log_prob, Adam, LossStats, LossWeights, Objective, Transition};

use crate::metrics::{evaluate_controller, MetricsError, MetricsTuple};
use crate::rng::StreamRng;
use crate::sim::{Frame, RobotPolicy, Scenario, WorkspaceConfig};
use crate::Vec2;

/// Double-precision network used by training and evaluation.
pub type Network = PolicyParams<f64>;

/// Deterministic controller that executes the policy mean.
#[derive(Clone, Debug)]
pub struct MeanPolicy<'a> {
    pub params: &'a Network,
    pub k_nearest: usize,
    buf: Vec<f64>,
}

impl<'a> MeanPolicy<'a> {
    pub fn new(params: &'a Network, k_nearest: usize) -> Self {
        Self { params, k_nearest, buf: Vec::new() }
    }
}

impl RobotPolicy for MeanPolicy<'_> {
    fn name(&self) -> String {
        "policy_mean".into()
    }

    fn act(&mut self, frame: &Frame, _: &Scenario, cfg: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        extract_into(frame, self.k_nearest, cfg, &mut self.buf);
        self.params.forward(&self.buf).mean.clamp_norm(cfg.v_max)
    }
}

/// Metrics of the mean policy over `scenarios`, one episode each.
pub fn evaluate_policy(params: &Network, k_nearest: usize, scenarios: &[Scenario], cfg: &WorkspaceConfig) -> Result<MetricsTuple, MetricsError> {
    evaluate_controller(|| MeanPolicy::new(params, k_nearest), scenarios, cfg, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub shape: [usize; 2],
}

/// On-disk parameter file: a shape manifest plus the flat tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub schema: String,
    pub input: usize,
    pub hidden: usize,
    pub v_max: f64,
    pub digest: String,
    pub tensors: Vec<TensorShape>,
    pub data: Vec<f64>,
}

pub const PARAMS_SCHEMA: &str = "forge.policy.v1";

impl Network {
    pub fn to_file(&self) -> ParamsFile {
        ParamsFile {
            schema: PARAMS_SCHEMA.into(),
            input: self.input,
            hidden: self.hidden,
            v_max: self.v_max,
            digest: self.digest(),
            tensors: tensor_shapes(self.input, self.hidden)
                .iter()
                .map(|&(n, r, c)| TensorShape { name: n.into(), shape: [r, c] })
                .collect(),
            data: self.data.clone(),
        }
    }

    pub fn from_file(f: ParamsFile) -> Result<Self, String> {
        if f.schema != PARAMS_SCHEMA {
            return Err(format!("unexpected schema {}", f.schema));
        }
        if f.data.len() != param_count(f.input, f.hidden) {
            return Err(format!("expected {} parameters, found {}", param_count(f.input, f.hidden), f.data.len()));
        }
        let p = Self { input: f.input, hidden: f.hidden, v_max: f.v_max, data: f.data };
        if !p.is_finite() {
            return Err("non-finite parameter".into());
        }
        if p.digest() != f.digest {
            return Err("digest mismatch".into());
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, serde_json::to_vec(&self.to_file())?)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let f: ParamsFile = serde_json::from_slice(&fs::read(path)?)?;
        Self::from_file(f).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
