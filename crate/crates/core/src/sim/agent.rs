use serde::{Deserialize, Serialize};

use super::{SimError, WorkspaceConfig};
use crate::geom::Vector2;
use crate::scalar::Scalar;

/// Disc agent: the robot or a human.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState<T> {
    pub pos: Vector2<T>,
    pub vel: Vector2<T>,
    pub radius: T,
    pub goal: Vector2<T>,
    pub pref_speed: T,
}

impl<T: Scalar> AgentState<T> {
    pub fn at_rest(pos: Vector2<T>, goal: Vector2<T>, radius: T, pref_speed: T) -> Self {
        Self { pos, vel: Vector2::zero(), radius, goal, pref_speed }
    }

    /// Velocity toward the goal at preferred speed, slowing to land exactly
    /// on the goal within one step of length `dt`.
    pub fn preferred_velocity(&self, dt: T) -> Vector2<T> {
        let to_goal = self.goal - self.pos;
        let d = to_goal.norm();
        if d <= T::zero() {
            return Vector2::zero();
        }
        let speed = self.pref_speed.min(d / dt);
        to_goal * (speed / d)
    }
}

/// First-order holonomic integration with radial clamping to `v_max`.
pub fn integrate<T: Scalar>(
    state: &AgentState<T>,
    action: Vector2<T>,
    v_max: T,
    dt: T,
) -> Result<AgentState<T>, SimError> {
    if !action.is_finite() {
        return Err(SimError::MalformedAction(format!("({:?}, {:?})", action.x, action.y)));
    }
    let a = action.clamp_norm(v_max);
    Ok(AgentState { pos: state.pos + a * dt, vel: a, ..state.clone() })
}

/// Robot step under the workspace kinematics.
pub fn step_robot(state: &super::Agent, action: crate::Vec2, cfg: &WorkspaceConfig) -> Result<super::Agent, SimError> {
    integrate(state, action, cfg.v_max, cfg.dt)
}
