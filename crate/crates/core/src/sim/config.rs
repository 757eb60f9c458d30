use serde::{Deserialize, Serialize};

use super::SimError;

/// Environment parameters for one simulated workspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub width: f64,
    pub height: f64,
    /// Seconds per step.
    pub dt: f64,
    /// Episode horizon in steps.
    pub horizon: usize,
    pub v_max: f64,
    pub robot_radius: f64,
    pub eps_goal: f64,
    pub sense_range: f64,
    pub gamma: f64,
    pub human_count: usize,
    pub randomize: bool,
    pub human_vmax_range: [f64; 2],
    pub human_radius_range: [f64; 2],
    pub prediction_steps: usize,
    pub seed: u64,
    /// ORCA time horizon for humans, seconds.
    pub orca_tau: f64,
    pub neighbor_cutoff: f64,
    /// Radius of the crossing circle used for placement.
    pub circle_radius: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            width: 12.0,
            height: 12.0,
            dt: 0.25,
            horizon: 200,
            v_max: 1.0,
            robot_radius: 0.3,
            eps_goal: 0.3,
            sense_range: 5.0,
            gamma: 0.99,
            human_count: 5,
            randomize: true,
            human_vmax_range: [0.5, 1.5],
            human_radius_range: [0.3, 0.5],
            prediction_steps: 5,
            seed: 0,
            orca_tau: 5.0,
            neighbor_cutoff: 10.0,
            circle_radius: 4.0,
        }
    }
}

pub const MAX_HUMANS: usize = 20;

impl WorkspaceConfig {
    // Negated comparisons so that NaN fails too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |key: &str, reason: &str| {
            Err(SimError::InvalidConfig { key: key.to_string(), reason: reason.to_string() })
        };
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("width/height", "must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt", "must be > 0");
        }
        if self.horizon < 1 {
            return bad("horizon", "must be >= 1");
        }
        if !(self.v_max > 0.0) {
            return bad("v_max", "must be > 0");
        }
        if !(self.robot_radius > 0.0) {
            return bad("robot_radius", "must be > 0");
        }
        if !(self.eps_goal > 0.0) {
            return bad("eps_goal", "must be > 0");
        }
        if !(self.sense_range > 0.0) {
            return bad("sense_range", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if self.human_count > MAX_HUMANS {
            return bad("human_count", "must be <= 20");
        }
        for (key, r) in [("human_vmax_range", self.human_vmax_range), ("human_radius_range", self.human_radius_range)] {
            if !(r[0] <= r[1] && r[0] > 0.0) {
                return bad(key, "must be a nonempty positive range with low <= high");
            }
        }
        if self.prediction_steps < 1 {
            return bad("prediction_steps", "must be >= 1");
        }
        if !(self.orca_tau > 0.0) {
            return bad("orca_tau", "must be > 0");
        }
        if !(self.neighbor_cutoff > 0.0) {
            return bad("neighbor_cutoff", "must be > 0");
        }
        let margin = self.circle_radius + super::scenario::RADIAL_JITTER + self.human_radius_range[1];
        if !(self.circle_radius > 0.0) || 2.0 * margin > self.width.min(self.height) {
            return bad("circle_radius", "placement circle must fit inside the workspace");
        }
        Ok(())
    }

    pub fn center(&self) -> crate::Vec2 {
        crate::Vec2::new(self.width / 2.0, self.height / 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        WorkspaceConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_gamma() {
        let cfg = WorkspaceConfig { gamma: 1.0, ..Default::default() };
        match cfg.validate() {
            Err(SimError::InvalidConfig { key, .. }) => assert_eq!(key, "gamma"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
