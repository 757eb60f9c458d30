//! Optimal reciprocal collision avoidance for disc agents.
//!
//! Half-plane construction and the incremental 2D linear programs follow the
//! classic RVO2 formulation: each neighbour contributes one ORCA line, the
//! velocity closest to the preferred velocity inside all half-planes and the
//! speed disc is selected, and an infeasible program falls back to the
//! velocity minimising the largest constraint violation.

use crate::geom::Vector2;
use crate::scalar::Scalar;

use super::AgentState;

/// Directed line; the permitted half-plane lies to the left of `direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line<T> {
    pub point: Vector2<T>,
    pub direction: Vector2<T>,
}

fn eps<T: Scalar>() -> T {
    T::lit(1e-5)
}

/// Builds the ORCA half-plane induced on `agent` by `other`, with each side
/// taking half the responsibility.
pub fn orca_line<T: Scalar>(agent: &AgentState<T>, other: &AgentState<T>, tau: T, dt: T) -> Line<T> {
    orca_line_with(agent, other, tau, dt, T::lit(0.5))
}

/// As [`orca_line`], with `agent` taking the given share of the avoidance
/// (1 when the other side does not react).
pub fn orca_line_with<T: Scalar>(agent: &AgentState<T>, other: &AgentState<T>, tau: T, dt: T, share: T) -> Line<T> {
    let rel_pos = other.pos - agent.pos;
    let rel_vel = agent.vel - other.vel;
    let dist_sq = rel_pos.norm_sq();
    let combined = agent.radius + other.radius;
    let combined_sq = combined * combined;

    let (direction, u) = if dist_sq > combined_sq {
        let inv_tau = T::one() / tau;
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < T::zero() && dot1 * dot1 > combined_sq * w_len_sq {
            // Project on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            (Vector2::new(unit_w.y, -unit_w.x), unit_w * (combined * inv_tau - w_len))
        } else {
            // Project on the nearer leg.
            let leg = (dist_sq - combined_sq).sqrt();
            let direction = if rel_pos.det(w) > T::zero() {
                Vector2::new(
                    rel_pos.x * leg - rel_pos.y * combined,
                    rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vector2::new(
                    rel_pos.x * leg + rel_pos.y * combined,
                    -rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            };
            let dot2 = rel_vel.dot(direction);
            (direction, direction * dot2 - rel_vel)
        }
    } else {
        // Already overlapping: resolve within one time step.
        let inv_dt = T::one() / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > T::epsilon() {
            w / w_len
        } else if rel_pos.norm() > T::epsilon() {
            -rel_pos.normalized()
        } else {
            Vector2::new(T::one(), T::zero())
        };
        (Vector2::new(unit_w.y, -unit_w.x), unit_w * (combined * inv_dt - w_len))
    };

    Line { point: agent.vel + u * share, direction }
}

/// Optimises along line `line_no` subject to the earlier lines and the speed disc.
fn linear_program1<T: Scalar>(
    lines: &[Line<T>],
    line_no: usize,
    radius: T,
    opt: Vector2<T>,
    direction_opt: bool,
    result: &mut Vector2<T>,
) -> bool {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < T::zero() {
        return false;
    }
    let sqrt_disc = disc.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denom = line.direction.det(other.direction);
        let numer = other.direction.det(line.point - other.point);
        if denom.abs() <= eps() {
            if numer < T::zero() {
                return false;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= T::zero() {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    *result = if direction_opt {
        if opt.dot(line.direction) > T::zero() {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t_left
        }
    } else {
        let t = line.direction.dot(opt - line.point);
        if t < t_left {
            line.point + line.direction * t_left
        } else if t > t_right {
            line.point + line.direction * t_right
        } else {
            line.point + line.direction * t
        }
    };
    true
}

/// Returns the index of the first line that could not be satisfied, or
/// `lines.len()` on success.
fn linear_program2<T: Scalar>(
    lines: &[Line<T>],
    radius: T,
    opt: Vector2<T>,
    direction_opt: bool,
    result: &mut Vector2<T>,
) -> usize {
    *result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if lines[i].direction.det(lines[i].point - *result) > T::zero() {
            let fallback = *result;
            if !linear_program1(lines, i, radius, opt, direction_opt, result) {
                *result = fallback;
                return i;
            }
        }
    }
    lines.len()
}

/// Minimises the maximum violation over lines `begin..`.
fn linear_program3<T: Scalar>(lines: &[Line<T>], begin: usize, radius: T, result: &mut Vector2<T>) {
    let half = T::lit(0.5);
    let mut distance = T::zero();
    for i in begin..lines.len() {
        if lines[i].direction.det(lines[i].point - *result) > distance {
            let mut projected = Vec::with_capacity(i);
            for j in 0..i {
                let det = lines[i].direction.det(lines[j].direction);
                let point = if det.abs() <= eps() {
                    if lines[i].direction.dot(lines[j].direction) > T::zero() {
                        continue;
                    }
                    (lines[i].point + lines[j].point) * half
                } else {
                    lines[i].point
                        + lines[i].direction * (lines[j].direction.det(lines[i].point - lines[j].point) / det)
                };
                let direction = (lines[j].direction - lines[i].direction).normalized();
                projected.push(Line { point, direction });
            }
            let fallback = *result;
            let opt = Vector2::new(-lines[i].direction.y, lines[i].direction.x);
            if linear_program2(&projected, radius, opt, true, result) < projected.len() {
                *result = fallback;
            }
            distance = lines[i].direction.det(lines[i].point - *result);
        }
    }
}

/// Solves the half-plane program for `preferred` inside a disc of `max_speed`.
pub fn solve<T: Scalar>(lines: &[Line<T>], max_speed: T, preferred: Vector2<T>) -> Vector2<T> {
    let mut result = Vector2::zero();
    let fail = linear_program2(lines, max_speed, preferred, false, &mut result);
    if fail < lines.len() {
        linear_program3(lines, fail, max_speed, &mut result);
    }
    result.clamp_norm(max_speed)
}

/// Collision-avoiding velocity for `agent` among `neighbors` (which must not
/// include the agent itself) with time horizon `tau`.
pub fn orca_velocity<T: Scalar>(agent: &AgentState<T>, neighbors: &[AgentState<T>], tau: T, dt: T) -> Vector2<T> {
    orca_velocity_with(agent, neighbors, tau, dt, T::lit(0.5))
}

/// [`orca_velocity`] with a configurable avoidance share.
pub fn orca_velocity_with<T: Scalar>(
    agent: &AgentState<T>,
    neighbors: &[AgentState<T>],
    tau: T,
    dt: T,
    share: T,
) -> Vector2<T> {
    let preferred = agent.preferred_velocity(dt);
    if neighbors.is_empty() {
        return preferred.clamp_norm(agent.pref_speed);
    }
    let lines: Vec<Line<T>> = neighbors.iter().map(|n| orca_line_with(agent, n, tau, dt, share)).collect();
    solve(&lines, agent.pref_speed, preferred)
}
