use super::orca::orca_velocity;
use super::{classify_frame, integrate, Agent, Frame, Scenario, SimError, Status, WorkspaceConfig};
use crate::Vec2;

/// Stepping simulator for one scenario. Humans follow ORCA among
/// themselves and never react to the robot.
#[derive(Clone, Debug)]
pub struct Env {
    cfg: WorkspaceConfig,
    scenario: Scenario,
    humans: Vec<Agent>,
    positions: Vec<Vec2>,
    frame: Frame,
}

impl Env {
    pub fn new(cfg: &WorkspaceConfig, scenario: &Scenario) -> Self {
        let robot = scenario.robot_init(cfg);
        let humans = scenario.human_inits.clone();
        let status = classify_frame(&robot, &humans, scenario.robot_goal, 0, cfg);
        let positions = vec![robot.pos];
        let frame = Frame::observe(0, robot, humans.clone(), status, cfg);
        Self { cfg: cfg.clone(), scenario: scenario.clone(), humans, positions, frame }
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn cfg(&self) -> &WorkspaceConfig {
        &self.cfg
    }

    /// Robot positions from step 0 through the current step.
    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    pub fn done(&self) -> bool {
        self.frame.status.is_terminal()
    }

    /// Advances one step. Human velocities are computed from the pre-step
    /// state, so every agent moves simultaneously.
    pub fn step(&mut self, action: Vec2) -> Result<&Frame, SimError> {
        let cfg = &self.cfg;
        let t = self.frame.t;
        let robot = integrate(&self.frame.robot, action, cfg.v_max, cfg.dt)?;

        for switch in &self.scenario.goal_switches {
            if switch.step == t {
                if let Some(h) = self.humans.get_mut(switch.human) {
                    h.goal = switch.goal;
                }
            }
        }
        let cutoff_sq = cfg.neighbor_cutoff * cfg.neighbor_cutoff;
        let mut neighbors = Vec::with_capacity(self.humans.len());
        let velocities: Vec<Vec2> = (0..self.humans.len())
            .map(|i| {
                neighbors.clear();
                let me = &self.humans[i];
                neighbors.extend(
                    self.humans
                        .iter()
                        .enumerate()
                        .filter(|&(j, o)| j != i && (o.pos - me.pos).norm_sq() <= cutoff_sq)
                        .map(|(_, o)| o.clone()),
                );
                orca_velocity(me, &neighbors, cfg.orca_tau, cfg.dt)
            })
            .collect();
        for (h, v) in self.humans.iter_mut().zip(velocities) {
            h.vel = v;
            h.pos += v * cfg.dt;
        }

        let t = t + 1;
        let status = classify_frame(&robot, &self.humans, self.scenario.robot_goal, t, cfg);
        self.positions.push(robot.pos);
        self.frame = Frame::observe(t, robot, self.humans.clone(), status, cfg);
        Ok(&self.frame)
    }

    /// Marks the current frame as a failed terminal state after a policy fault.
    pub(crate) fn abort(&mut self) {
        self.frame.status = Status::Collision;
    }
}
