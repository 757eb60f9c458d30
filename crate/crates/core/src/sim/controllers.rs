//! Scripted robot controllers: baselines and the behaviour roster used to
//! build screening datasets.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::orca::orca_velocity_with;
use super::social_force::{social_force_velocity, SocialForceParams};
use super::{Agent, Frame, RobotPolicy, Scenario, WorkspaceConfig};
use crate::rng::StreamRng;
use crate::Vec2;

fn robot_agent(frame: &Frame, goal: Vec2, cfg: &WorkspaceConfig) -> Agent {
    Agent { goal, pref_speed: cfg.v_max, ..frame.robot.clone() }
}

fn toward(frame: &Frame, goal: Vec2, cfg: &WorkspaceConfig) -> Vec2 {
    robot_agent(frame, goal, cfg).preferred_velocity(cfg.dt)
}

/// Heads straight for the goal at full speed.
#[derive(Clone, Copy, Debug, Default)]
pub struct StraightLine;

impl RobotPolicy for StraightLine {
    fn name(&self) -> String {
        "straight".into()
    }
    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        toward(frame, scenario.robot_goal, cfg)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Stop;

impl RobotPolicy for Stop {
    fn name(&self) -> String {
        "stop".into()
    }
    fn act(&mut self, _: &Frame, _: &Scenario, _: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        Vec2::zero()
    }
}

/// ORCA over the visible humans. `share` is the robot's part of each
/// avoidance manoeuvre: 0.5 assumes reciprocation, 1 assumes none.
#[derive(Clone, Copy, Debug)]
pub struct OrcaRobot {
    pub tau: f64,
    pub share: f64,
}

impl Default for OrcaRobot {
    fn default() -> Self {
        Self { tau: 5.0, share: 0.5 }
    }
}

impl RobotPolicy for OrcaRobot {
    fn name(&self) -> String {
        format!("orca_t{}_s{}", self.tau, self.share)
    }
    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        let me = robot_agent(frame, scenario.robot_goal, cfg);
        let neighbors: Vec<Agent> = frame.humans().cloned().collect();
        orca_velocity_with(&me, &neighbors, self.tau, cfg.dt, self.share)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SocialForceRobot {
    pub params: SocialForceParams<f64>,
}

impl Default for SocialForceRobot {
    fn default() -> Self {
        Self { params: SocialForceParams::robot() }
    }
}

impl RobotPolicy for SocialForceRobot {
    fn name(&self) -> String {
        "social_force".into()
    }
    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        let me = robot_agent(frame, scenario.robot_goal, cfg);
        let neighbors: Vec<Agent> = frame.humans().cloned().collect();
        social_force_velocity(&me, &neighbors, &self.params, cfg.dt, 0)
    }
}

/// Straight-line command plus isotropic Gaussian velocity noise.
#[derive(Clone, Copy, Debug)]
pub struct NoisyStraight {
    pub sigma: f64,
}

impl RobotPolicy for NoisyStraight {
    fn name(&self) -> String {
        format!("noisy_straight_{}", self.sigma)
    }
    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, rng: &mut StreamRng) -> Vec2 {
        let noise = Normal::new(0.0, self.sigma).expect("sigma > 0");
        let v = toward(frame, scenario.robot_goal, cfg) + Vec2::new(noise.sample(rng), noise.sample(rng));
        v.clamp_norm(cfg.v_max)
    }
}

/// Correlated random walk: heading diffuses, speed redrawn each step.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomWalk {
    heading: Option<f64>,
}

impl RobotPolicy for RandomWalk {
    fn name(&self) -> String {
        "random_walk".into()
    }
    fn act(&mut self, frame: &Frame, _: &Scenario, cfg: &WorkspaceConfig, rng: &mut StreamRng) -> Vec2 {
        if frame.t == 0 {
            self.heading = None;
        }
        let turn = Normal::new(0.0, 0.5).expect("valid");
        let heading = match self.heading {
            None => rng.random_range(0.0..std::f64::consts::TAU),
            Some(h) => h + turn.sample(rng),
        };
        self.heading = Some(heading);
        let speed = rng.random_range(0.0..cfg.v_max);
        Vec2::new(heading.cos(), heading.sin()) * speed
    }
}

/// Passes through a lateral waypoint beside the straight path, then heads to the goal.
#[derive(Clone, Copy, Debug)]
pub struct Detour {
    /// +1 for left of the start→goal direction, -1 for right.
    pub side: f64,
    pub offset: f64,
    reached: bool,
}

impl Detour {
    pub fn new(side: f64, offset: f64) -> Self {
        Self { side, offset, reached: false }
    }

    fn waypoint(&self, scenario: &Scenario) -> Vec2 {
        let mid = (scenario.robot_start + scenario.robot_goal) * 0.5;
        let dir = (scenario.robot_goal - scenario.robot_start).normalized();
        mid + dir.perp() * (self.side * self.offset)
    }
}

impl RobotPolicy for Detour {
    fn name(&self) -> String {
        if self.side > 0.0 { "detour_left".into() } else { "detour_right".into() }
    }
    fn act(&mut self, frame: &Frame, scenario: &Scenario, cfg: &WorkspaceConfig, _: &mut StreamRng) -> Vec2 {
        if frame.t == 0 {
            self.reached = false;
        }
        let wp = self.waypoint(scenario);
        if !self.reached && frame.robot.pos.dist(wp) <= cfg.v_max * cfg.dt {
            self.reached = true;
        }
        let target = if self.reached { scenario.robot_goal } else { wp };
        let v = (target - frame.robot.pos).normalized() * cfg.v_max;
        if self.reached { toward(frame, target, cfg) } else { v }
    }
}

/// Serializable controller identity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ControllerKind {
    Straight,
    Orca { tau: f64, share: f64 },
    SocialForce,
    NoisyStraight { sigma: f64 },
    RandomWalk,
    Stop,
    Detour { side: f64, offset: f64 },
}

impl ControllerKind {
    pub fn build(self) -> Box<dyn RobotPolicy + Send> {
        match self {
            Self::Straight => Box::new(StraightLine),
            Self::Orca { tau, share } => Box::new(OrcaRobot { tau, share }),
            Self::SocialForce => Box::new(SocialForceRobot::default()),
            Self::NoisyStraight { sigma } => Box::new(NoisyStraight { sigma }),
            Self::RandomWalk => Box::new(RandomWalk::default()),
            Self::Stop => Box::new(Stop),
            Self::Detour { side, offset } => Box::new(Detour::new(side, offset)),
        }
    }

    pub fn name(self) -> String {
        self.build().name()
    }

    /// Behaviour roster cycled to fill `N_traj` dataset trajectories.
    pub fn roster() -> Vec<ControllerKind> {
        vec![
            Self::Straight,
            Self::Orca { tau: 1.0, share: 1.0 },
            Self::SocialForce,
            Self::NoisyStraight { sigma: 0.1 },
            Self::NoisyStraight { sigma: 0.3 },
            Self::RandomWalk,
            Self::Stop,
            Self::Detour { side: 1.0, offset: 4.0 },
            Self::Detour { side: -1.0, offset: 4.0 },
            Self::Orca { tau: 5.0, share: 0.5 },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sim::{run_episode, Status};

    #[test]
    fn detour_passes_its_waypoint() {
        let cfg = WorkspaceConfig { human_count: 0, ..Default::default() };
        let sc = Scenario::custom("d", Vec2::new(2.0, 6.0), Vec2::new(10.0, 6.0), vec![]);
        let mut r = rng::stream(1, "t", &[]);
        let mut ctl = Detour::new(1.0, 2.0);
        let ep = run_episode(&sc, &mut ctl, None, &cfg, &mut r).unwrap();
        assert_eq!(ep.outcome, Status::Success);
        let closest = ep.frames.iter().map(|f| f.robot.pos.dist(Vec2::new(6.0, 8.0))).fold(f64::INFINITY, f64::min);
        assert!(closest <= 0.25 + 1e-9);
        assert!(ep.path_length > 8.0);
    }

    #[test]
    fn controllers_respect_speed_cap() {
        let cfg = WorkspaceConfig::default();
        let sc = crate::sim::generate_scenario(&cfg, 4, 0).unwrap();
        for kind in ControllerKind::roster() {
            let mut r = rng::stream(1, "t", &[]);
            let mut ctl = kind.build();
            let ep = run_episode(&sc, ctl.as_mut(), None, &cfg, &mut r).unwrap();
            for w in ep.frames.windows(2) {
                assert!(w[1].robot.pos.dist(w[0].robot.pos) <= cfg.v_max * cfg.dt + 1e-12);
            }
        }
    }
}
