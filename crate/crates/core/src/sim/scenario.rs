use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, SimError, WorkspaceConfig};
use crate::rng::{self, StreamRng};
use crate::Vec2;

/// Humans are placed within this radial band around the crossing circle.
pub const RADIAL_JITTER: f64 = 0.75;
const ROBOT_GOAL_JITTER: f64 = 0.1;
const HUMAN_GOAL_JITTER: f64 = 0.3;
const MAX_REJECTIONS: usize = 1000;
/// Extra clearance kept between human goals and the robot's endpoints, so
/// no human parks where the robot has to be.
pub const ENDPOINT_MARGIN: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSwitch {
    pub human: usize,
    pub step: usize,
    pub goal: Vec2,
}

/// One navigation instance: robot start/goal plus the initial crowd and
/// everything drawn while randomizing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub index: u64,
    pub robot_start: Vec2,
    pub robot_goal: Vec2,
    pub human_inits: Vec<Agent>,
    pub goal_switches: Vec<GoalSwitch>,
}

impl Scenario {
    /// A scenario with explicit geometry, used for scripted tests and tools.
    pub fn custom(id: impl Into<String>, robot_start: Vec2, robot_goal: Vec2, human_inits: Vec<Agent>) -> Self {
        Self { id: id.into(), seed: 0, index: 0, robot_start, robot_goal, human_inits, goal_switches: Vec::new() }
    }

    pub fn robot_init(&self, cfg: &WorkspaceConfig) -> Agent {
        Agent::at_rest(self.robot_start, self.robot_goal, cfg.robot_radius, cfg.v_max)
    }

    /// Checks placement invariants.
    pub fn validate(&self, cfg: &WorkspaceConfig) -> Result<(), SimError> {
        let fail = |reason: String| Err(SimError::InvalidScenario { id: self.id.clone(), reason });
        if self.robot_start == self.robot_goal {
            return fail("start equals goal".into());
        }
        let inside = |p: Vec2| p.x >= 0.0 && p.y >= 0.0 && p.x <= cfg.width && p.y <= cfg.height;
        if !inside(self.robot_start) || !inside(self.robot_goal) {
            return fail("robot start/goal outside workspace".into());
        }
        for (i, h) in self.human_inits.iter().enumerate() {
            if !inside(h.pos) {
                return fail(format!("human {i} outside workspace"));
            }
            if h.pos.dist(self.robot_start) <= h.radius + cfg.robot_radius {
                return fail(format!("human {i} overlaps the robot"));
            }
            for (j, g) in self.human_inits.iter().enumerate().skip(i + 1) {
                if h.pos.dist(g.pos) <= h.radius + g.radius {
                    return fail(format!("humans {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }
}

fn on_circle(center: Vec2, radius: f64, angle: f64) -> Vec2 {
    center + Vec2::new(angle.cos(), angle.sin()) * radius
}

fn uniform(r: &mut StreamRng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        r.random_range(range[0]..range[1])
    }
}

/// Circle-crossing scenario drawn from the `(seed, "scenario", index)` stream.
pub fn generate_scenario(cfg: &WorkspaceConfig, seed: u64, index: u64) -> Result<Scenario, SimError> {
    let mut r = rng::stream(seed, "scenario", &[index]);
    generate_scenario_with(cfg, &mut r, seed, index)
}

pub fn generate_scenario_with(
    cfg: &WorkspaceConfig,
    r: &mut StreamRng,
    seed: u64,
    index: u64,
) -> Result<Scenario, SimError> {
    let center = cfg.center();
    let radius = cfg.circle_radius;
    let theta = r.random_range(0.0..TAU);
    let robot_start = on_circle(center, radius, theta);
    let robot_goal = on_circle(center, radius, theta + PI + r.random_range(-ROBOT_GOAL_JITTER..ROBOT_GOAL_JITTER));

    let mid = |range: [f64; 2]| 0.5 * (range[0] + range[1]);
    let mut humans: Vec<Agent> = Vec::with_capacity(cfg.human_count);
    for i in 0..cfg.human_count {
        let (h_radius, h_speed) = if cfg.randomize {
            (uniform(r, cfg.human_radius_range), uniform(r, cfg.human_vmax_range))
        } else {
            (mid(cfg.human_radius_range), mid(cfg.human_vmax_range))
        };
        let mut placed = None;
        for _ in 0..MAX_REJECTIONS {
            let phi = r.random_range(0.0..TAU);
            let rho = radius + r.random_range(-RADIAL_JITTER..RADIAL_JITTER);
            let pos = on_circle(center, rho, phi);
            let goal = on_circle(center, radius, phi + PI + r.random_range(-HUMAN_GOAL_JITTER..HUMAN_GOAL_JITTER));
            let keep_out = h_radius + cfg.robot_radius + cfg.eps_goal + ENDPOINT_MARGIN;
            let clear_robot = pos.dist(robot_start) > h_radius + cfg.robot_radius
                && pos.dist(robot_goal) > keep_out
                && goal.dist(robot_goal) > keep_out
                && goal.dist(robot_start) > keep_out;
            let clear_humans = humans.iter().all(|h| pos.dist(h.pos) > h_radius + h.radius);
            let inside = pos.x - h_radius >= 0.0
                && pos.y - h_radius >= 0.0
                && pos.x + h_radius <= cfg.width
                && pos.y + h_radius <= cfg.height;
            if clear_robot && clear_humans && inside {
                placed = Some(Agent::at_rest(pos, goal, h_radius, h_speed));
                break;
            }
        }
        match placed {
            Some(h) => humans.push(h),
            None => return Err(SimError::ScenarioGeneration { seed, index, human: i }),
        }
    }

    let mut goal_switches = Vec::new();
    if cfg.randomize {
        let lo = (0.25 * cfg.horizon as f64).ceil() as usize;
        let hi = ((0.75 * cfg.horizon as f64).floor() as usize).max(lo);
        for (human, h) in humans.iter().enumerate() {
            if r.random_bool(0.5) {
                let step = r.random_range(lo..=hi);
                let keep_out = h.radius + cfg.robot_radius + cfg.eps_goal + ENDPOINT_MARGIN;
                let mut goal = on_circle(center, radius, r.random_range(0.0..TAU));
                for _ in 0..MAX_REJECTIONS {
                    if goal.dist(robot_goal) > keep_out && goal.dist(robot_start) > keep_out {
                        break;
                    }
                    goal = on_circle(center, radius, r.random_range(0.0..TAU));
                }
                goal_switches.push(GoalSwitch { human, step, goal });
            }
        }
    }

    Ok(Scenario {
        id: format!("s{seed:x}-{index}"),
        seed,
        index,
        robot_start,
        robot_goal,
        human_inits: humans,
        goal_switches,
    })
}
