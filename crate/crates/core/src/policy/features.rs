use crate::scalar::Scalar;
use crate::sim::{Frame, WorkspaceConfig};

/// Robot block width: goal offset (2), goal distance (1), velocity (2).
pub const ROBOT_FEATURES: usize = 5;
/// Per-human block width: offset (2), relative velocity (2), gap (1).
pub const HUMAN_FEATURES: usize = 5;

pub fn feature_dim(k_nearest: usize) -> usize {
    ROBOT_FEATURES + HUMAN_FEATURES * k_nearest
}

/// Fixed-width observation vector for the policy.
///
/// Humans are the `k_nearest` closest visible ones, nearest first (ties by
/// index). Missing slots hold `(0, 0, 0, 0, R_sense)`.
pub fn extract_features<T: Scalar>(frame: &Frame, k_nearest: usize, cfg: &WorkspaceConfig) -> Vec<T> {
    let mut out = Vec::with_capacity(feature_dim(k_nearest));
    extract_into(frame, k_nearest, cfg, &mut out);
    out
}

pub fn extract_into<T: Scalar>(frame: &Frame, k_nearest: usize, cfg: &WorkspaceConfig, out: &mut Vec<T>) {
    out.clear();
    let robot = &frame.robot;
    let to_goal = robot.goal - robot.pos;
    out.extend([to_goal.x, to_goal.y, to_goal.norm(), robot.vel.x, robot.vel.y].map(T::lit));

    let mut near: Vec<(f64, usize)> = frame.visible.iter().map(|&i| (frame.all_humans[i].pos.dist(robot.pos), i)).collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for slot in 0..k_nearest {
        match near.get(slot) {
            Some(&(d, i)) => {
                let h = &frame.all_humans[i];
                let dp = h.pos - robot.pos;
                let dv = h.vel - robot.vel;
                out.extend([dp.x, dp.y, dv.x, dv.y, d - (robot.radius + h.radius)].map(T::lit));
            }
            None => out.extend([0.0, 0.0, 0.0, 0.0, cfg.sense_range].map(T::lit)),
        }
    }
}
