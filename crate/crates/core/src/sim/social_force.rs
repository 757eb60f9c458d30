//! Helbing-style social force controller, used as a robot baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Vector2;
use crate::rng;
use crate::scalar::Scalar;

use super::AgentState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialForceParams<T> {
    /// Relaxation time toward the preferred velocity, seconds.
    pub relax_time: T,
    /// Repulsion strength A.
    pub strength: T,
    /// Repulsion range B, meters.
    pub range: T,
}

impl<T: Scalar> Default for SocialForceParams<T> {
    fn default() -> Self {
        Self { relax_time: T::lit(0.5), strength: T::lit(2.0), range: T::lit(0.3) }
    }
}

impl<T: Scalar> SocialForceParams<T> {
    /// Wider, stronger repulsion for a robot among humans that do not yield.
    pub fn robot() -> Self {
        Self { relax_time: T::lit(0.5), strength: T::lit(5.0), range: T::lit(1.0) }
    }
}

/// Unit vector pointing from `from` to `to`; coincident points get a
/// direction drawn from a stream keyed by `(agent_index, neighbor_index)`.
fn repulsion_dir<T: Scalar>(from: Vector2<T>, to: Vector2<T>, agent_index: u64, neighbor_index: u64) -> Vector2<T> {
    let d = to - from;
    let n = d.norm();
    if n > T::epsilon() {
        return d / n;
    }
    let mut r = rng::stream(agent_index, "social-force-coincident", &[neighbor_index]);
    let angle: f64 = r.random_range(0.0..std::f64::consts::TAU);
    Vector2::new(T::lit(angle.cos()), T::lit(angle.sin()))
}

/// Acceleration = relaxation toward the preferred velocity plus exponential
/// repulsion from each neighbour; the returned velocity is one Euler step of
/// length `dt`, clamped to the agent's preferred speed.
pub fn social_force_velocity<T: Scalar>(
    agent: &AgentState<T>,
    neighbors: &[AgentState<T>],
    params: &SocialForceParams<T>,
    dt: T,
    agent_index: u64,
) -> Vector2<T> {
    let mut acc = (agent.preferred_velocity(dt) - agent.vel) / params.relax_time;
    for (j, other) in neighbors.iter().enumerate() {
        let d = agent.pos.dist(other.pos);
        let n = repulsion_dir(other.pos, agent.pos, agent_index, j as u64);
        let mag = params.strength * ((agent.radius + other.radius - d) / params.range).exp();
        acc += n * mag;
    }
    (agent.vel + acc * dt).clamp_norm(agent.pref_speed)
}
