use serde::{Deserialize, Serialize};

use super::{Agent, AgentState, WorkspaceConfig};
use crate::geom::Vector2;
use crate::scalar::Scalar;
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    Collision,
    Timeout,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }
}

/// Snapshot of the world at step `t`.
///
/// All humans are retained for simulation and collision checks; `visible`
/// indexes the ones inside the sensing range, which is all a policy sees.
/// `predicted[i]` holds the constant-velocity forecast for `visible[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub robot: Agent,
    pub all_humans: Vec<Agent>,
    pub visible: Vec<usize>,
    pub predicted: Vec<Vec<Vec2>>,
    pub status: Status,
}

impl Frame {
    /// Builds a frame, computing visibility and forecasts.
    pub fn observe(t: usize, robot: Agent, all_humans: Vec<Agent>, status: Status, cfg: &WorkspaceConfig) -> Self {
        let visible: Vec<usize> = all_humans
            .iter()
            .enumerate()
            .filter(|(_, h)| h.pos.dist(robot.pos) <= cfg.sense_range)
            .map(|(i, _)| i)
            .collect();
        let shown: Vec<Agent> = visible.iter().map(|&i| all_humans[i].clone()).collect();
        let predicted = predict_humans(&shown, cfg.prediction_steps, cfg.dt);
        Self { t, robot, all_humans, visible, predicted, status }
    }

    /// Humans inside the sensing range.
    pub fn humans(&self) -> impl ExactSizeIterator<Item = &Agent> + '_ {
        self.visible.iter().map(move |&i| &self.all_humans[i])
    }

    /// Smallest clearance `dist - r_h` to a visible human, or `None`.
    pub fn min_visible_clearance(&self) -> Option<f64> {
        self.humans().map(|h| h.pos.dist(self.robot.pos) - h.radius).reduce(f64::min)
    }
}

/// Terminal classification for a robot state at step `t`. Collision takes
/// precedence over success, which takes precedence over timeout.
pub fn classify_frame(robot: &Agent, humans: &[Agent], goal: Vec2, t: usize, cfg: &WorkspaceConfig) -> Status {
    let collided = humans.iter().any(|h| robot.pos.dist(h.pos) <= robot.radius + h.radius);
    if collided {
        Status::Collision
    } else if robot.pos.dist(goal) <= cfg.eps_goal {
        Status::Success
    } else if t + 1 >= cfg.horizon {
        Status::Timeout
    } else {
        Status::Running
    }
}

/// Constant-velocity forecasts: row `h`, column `k-1` is `p_h + k dt v_h`.
pub fn predict_humans<T: Scalar>(humans: &[AgentState<T>], k: usize, dt: T) -> Vec<Vec<Vector2<T>>> {
    humans
        .iter()
        .map(|h| (1..=k).map(|step| h.pos + h.vel * (T::from_usize_lossy(step) * dt)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64, y: f64, r: f64) -> Agent {
        Agent::at_rest(Vec2::new(x, y), Vec2::new(0.0, 0.0), r, 1.0)
    }

    #[test]
    fn collision_threshold_is_inclusive() {
        let cfg = WorkspaceConfig::default();
        let s = classify_frame(&at(0.0, 0.0, 0.3), &[at(0.5, 0.0, 0.3)], Vec2::new(5.0, 5.0), 0, &cfg);
        assert_eq!(s, Status::Collision);
    }

    #[test]
    fn success_inside_goal_threshold() {
        let cfg = WorkspaceConfig::default();
        let s = classify_frame(&at(0.0, 0.0, 0.3), &[], Vec2::new(0.1, 0.0), 3, &cfg);
        assert_eq!(s, Status::Success);
    }

    #[test]
    fn collision_beats_success() {
        let cfg = WorkspaceConfig::default();
        let s = classify_frame(&at(0.0, 0.0, 0.3), &[at(0.2, 0.0, 0.3)], Vec2::new(0.1, 0.0), 0, &cfg);
        assert_eq!(s, Status::Collision);
    }

    #[test]
    fn timeout_at_last_step() {
        let cfg = WorkspaceConfig::default();
        let far = Vec2::new(9.0, 9.0);
        assert_eq!(classify_frame(&at(0.0, 0.0, 0.3), &[], far, cfg.horizon - 1, &cfg), Status::Timeout);
        assert_eq!(classify_frame(&at(0.0, 0.0, 0.3), &[], far, cfg.horizon - 2, &cfg), Status::Running);
    }

    #[test]
    fn constant_velocity_prediction() {
        let mut h = at(0.0, 0.0, 0.3);
        h.vel = Vec2::new(1.0, 0.0);
        let p = predict_humans(&[h], 2, 0.25);
        assert_eq!(p, vec![vec![Vec2::new(0.25, 0.0), Vec2::new(0.5, 0.0)]]);

        let still = at(2.0, 3.0, 0.3);
        let p = predict_humans(&[still], 4, 0.25);
        assert!(p[0].iter().all(|&q| q == Vec2::new(2.0, 3.0)));
    }

    #[test]
    fn prediction_grid_matches_rowwise_oracle() {
        let mut a = at(1.0, 2.0, 0.3);
        a.vel = Vec2::new(-0.5, 0.25);
        let mut b = at(-3.0, 0.5, 0.4);
        b.vel = Vec2::new(0.0, 1.5);
        let grid = predict_humans(&[a.clone(), b.clone()], 3, 0.25);
        for (row, h) in grid.iter().zip([&a, &b]) {
            for (k, p) in row.iter().enumerate() {
                let s = 0.25 * (k + 1) as f64;
                assert_eq!(p.x, h.pos.x + s * h.vel.x);
                assert_eq!(p.y, h.pos.y + s * h.vel.y);
            }
        }
    }

    #[test]
    fn visibility_respects_sense_range() {
        let cfg = WorkspaceConfig::default();
        let f = Frame::observe(0, at(0.0, 0.0, 0.3), vec![at(4.0, 0.0, 0.3), at(6.0, 0.0, 0.3)], Status::Running, &cfg);
        assert_eq!(f.visible, vec![0]);
        assert_eq!(f.predicted.len(), 1);
        assert_eq!(f.predicted[0].len(), cfg.prediction_steps);
    }
}
