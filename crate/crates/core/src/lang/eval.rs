use super::ast::{AggKind, BinOp};
use super::check::{Builtin, Node, Type};
use super::error::EvalError;
use super::RewardProgram;
use crate::sim::{Agent, Frame, Scenario, Status, WorkspaceConfig};
use crate::Vec2;

pub const DIV_FLOOR: f64 = 1e-9;
pub const LOG_FLOOR: f64 = 1e-9;
pub const EXP_CAP: f64 = 50.0;
pub const OUTPUT_BOUND: f64 = 1e6;

/// Everything a reward program may read at one frame.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub frame: &'a Frame,
    pub scenario: &'a Scenario,
    /// Robot positions from step 0 through the current frame.
    pub prefix: &'a [Vec2],
    pub cfg: &'a WorkspaceConfig,
}

impl<'a> EvalContext<'a> {
    /// # Panics
    /// If `prefix` is empty.
    pub fn new(frame: &'a Frame, scenario: &'a Scenario, prefix: &'a [Vec2], cfg: &'a WorkspaceConfig) -> Self {
        assert!(!prefix.is_empty(), "trajectory prefix must be nonempty");
        Self { frame, scenario, prefix, cfg }
    }

    pub fn robot_pos(&self) -> Vec2 {
        self.frame.robot.pos
    }

    /// Position one step back, or the current one at t = 0.
    pub fn robot_prev_pos(&self) -> Vec2 {
        let n = self.prefix.len();
        if n >= 2 {
            self.prefix[n - 2]
        } else {
            self.prefix[0]
        }
    }

    pub fn reached_goal(&self) -> bool {
        self.robot_pos().dist(self.scenario.robot_goal) <= self.cfg.eps_goal
    }

    pub fn collided(&self) -> bool {
        let r = &self.frame.robot;
        self.frame.all_humans.iter().any(|h| r.pos.dist(h.pos) <= r.radius + h.radius)
    }

    fn human(&self, slot: usize) -> &Agent {
        &self.frame.all_humans[self.frame.visible[slot]]
    }
}

#[derive(Clone, Copy, Debug)]
enum Val {
    S(f64),
    B(bool),
    V(Vec2),
    H(usize),
}

impl Val {
    fn s(self) -> f64 {
        match self {
            Val::S(x) => x,
            _ => unreachable!("type-checked"),
        }
    }
    fn b(self) -> bool {
        match self {
            Val::B(x) => x,
            _ => unreachable!("type-checked"),
        }
    }
    fn v(self) -> Vec2 {
        match self {
            Val::V(x) => x,
            _ => unreachable!("type-checked"),
        }
    }
    fn h(self) -> usize {
        match self {
            Val::H(x) => x,
            _ => unreachable!("type-checked"),
        }
    }
}

/// Guarded division: the divisor's magnitude is floored, keeping its sign.
pub fn guarded_div(a: f64, b: f64) -> f64 {
    let b = if b.abs() < DIV_FLOOR { DIV_FLOOR.copysign(b) } else { b };
    a / b
}

pub fn guarded_log(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

pub fn guarded_exp(x: f64) -> f64 {
    x.min(EXP_CAP).exp()
}

fn finite(x: f64, op: &str) -> Result<Val, EvalError> {
    if x.is_finite() {
        Ok(Val::S(x))
    } else {
        Err(EvalError { op: op.into() })
    }
}

fn finite_v(v: Vec2, op: &str) -> Result<Val, EvalError> {
    if v.is_finite() {
        Ok(Val::V(v))
    } else {
        Err(EvalError { op: op.into() })
    }
}

struct Machine<'c, 'a> {
    ctx: &'c EvalContext<'a>,
    lets: Vec<Val>,
    humans: Vec<usize>,
}

/// Scores one frame. The result is finite and within `±OUTPUT_BOUND`;
/// a non-finite intermediate is reported as an error.
pub fn eval_reward(program: &RewardProgram, ctx: &EvalContext) -> Result<f64, EvalError> {
    let compiled = program.compiled();
    let mut m = Machine { ctx, lets: Vec::with_capacity(compiled.lets.len()), humans: Vec::new() };
    for node in &compiled.lets {
        let v = m.eval(node)?;
        m.lets.push(v);
    }
    let out = m.eval(&compiled.body)?.s();
    Ok(out.clamp(-OUTPUT_BOUND, OUTPUT_BOUND))
}

impl Machine<'_, '_> {
    fn eval(&mut self, node: &Node) -> Result<Val, EvalError> {
        match node {
            Node::Num(x) => Ok(Val::S(*x)),
            Node::Bool(b) => Ok(Val::B(*b)),
            Node::Let(i) => Ok(self.lets[*i]),
            Node::Human(d) => Ok(Val::H(self.humans[*d])),
            Node::Neg(a) => match self.eval(a)? {
                Val::S(x) => Ok(Val::S(-x)),
                Val::V(v) => Ok(Val::V(-v)),
                _ => unreachable!("type-checked"),
            },
            Node::Not(a) => Ok(Val::B(!self.eval(a)?.b())),
            Node::And(a, b) => Ok(Val::B(self.eval(a)?.b() && self.eval(b)?.b())),
            Node::Or(a, b) => Ok(Val::B(self.eval(a)?.b() || self.eval(b)?.b())),
            Node::Cmp(op, a, b) => {
                let (l, r) = (self.eval(a)?, self.eval(b)?);
                let out = match (op, l, r) {
                    (BinOp::Eq, Val::B(x), Val::B(y)) => x == y,
                    (BinOp::Ne, Val::B(x), Val::B(y)) => x != y,
                    (op, l, r) => {
                        let (x, y) = (l.s(), r.s());
                        match op {
                            BinOp::Lt => x < y,
                            BinOp::Le => x <= y,
                            BinOp::Gt => x > y,
                            BinOp::Ge => x >= y,
                            BinOp::Eq => x == y,
                            BinOp::Ne => x != y,
                            _ => unreachable!("type-checked"),
                        }
                    }
                };
                Ok(Val::B(out))
            }
            Node::Arith(op, lt, rt, a, b) => {
                let (l, r) = (self.eval(a)?, self.eval(b)?);
                match (op, lt, rt) {
                    (_, Type::Scalar, Type::Scalar) => {
                        let (x, y) = (l.s(), r.s());
                        match op {
                            BinOp::Add => finite(x + y, "+"),
                            BinOp::Sub => finite(x - y, "-"),
                            BinOp::Mul => finite(x * y, "*"),
                            _ => finite(guarded_div(x, y), "/"),
                        }
                    }
                    (BinOp::Add, ..) => finite_v(l.v() + r.v(), "+"),
                    (BinOp::Sub, ..) => finite_v(l.v() - r.v(), "-"),
                    (BinOp::Mul, Type::Vec2, _) => finite_v(l.v() * r.s(), "*"),
                    (BinOp::Mul, ..) => finite_v(r.v() * l.s(), "*"),
                    _ => {
                        let s = r.s();
                        let v = l.v();
                        finite_v(Vec2::new(guarded_div(v.x, s), guarded_div(v.y, s)), "/")
                    }
                }
            }
            Node::If(branches, other) => {
                for (c, v) in branches {
                    if self.eval(c)?.b() {
                        return self.eval(v);
                    }
                }
                self.eval(other)
            }
            Node::Pow(base, n) => {
                let x = self.eval(base)?.s();
                finite(x.powi(*n as i32), "pow")
            }
            Node::Agg(kind, body) => {
                let count = self.ctx.frame.visible.len();
                let mut acc: Option<f64> = match kind {
                    AggKind::Min => None,
                    AggKind::Sum => Some(0.0),
                };
                for slot in 0..count {
                    self.humans.push(slot);
                    let v = self.eval(body);
                    self.humans.pop();
                    let v = v?.s();
                    acc = Some(match (kind, acc) {
                        (AggKind::Min, Some(a)) => a.min(v),
                        (AggKind::Min, None) => v,
                        (AggKind::Sum, a) => a.unwrap_or(0.0) + v,
                    });
                }
                let empty = match kind {
                    AggKind::Min => self.ctx.cfg.sense_range,
                    AggKind::Sum => 0.0,
                };
                finite(acc.unwrap_or(empty), kind.name())
            }
            Node::Call(f, args) => self.call(*f, args),
        }
    }

    fn call(&mut self, f: Builtin, args: &[Node]) -> Result<Val, EvalError> {
        let ctx = self.ctx;
        let mut vals = [Val::S(0.0); 3];
        for (slot, a) in vals.iter_mut().zip(args) {
            *slot = self.eval(a)?;
        }
        let [a, b, c] = vals;
        match f {
            Builtin::Div => finite(guarded_div(a.s(), b.s()), "div"),
            Builtin::Min => Ok(Val::S(a.s().min(b.s()))),
            Builtin::Max => Ok(Val::S(a.s().max(b.s()))),
            Builtin::Abs => Ok(Val::S(a.s().abs())),
            Builtin::Clamp => {
                let (lo, hi) = (b.s().min(c.s()), b.s().max(c.s()));
                Ok(Val::S(a.s().clamp(lo, hi)))
            }
            Builtin::Exp => finite(guarded_exp(a.s()), "exp"),
            Builtin::Log => finite(guarded_log(a.s()), "log"),
            Builtin::Sqrt => Ok(Val::S(a.s().max(0.0).sqrt())),
            Builtin::Tanh => Ok(Val::S(a.s().tanh())),
            Builtin::Dist => finite(a.v().dist(b.v()), "dist"),
            Builtin::Norm => finite(a.v().norm(), "norm"),
            Builtin::Dot => finite(a.v().dot(b.v()), "dot"),
            Builtin::Sub => finite_v(a.v() - b.v(), "sub"),
            Builtin::RobotPos => Ok(Val::V(ctx.robot_pos())),
            Builtin::RobotPrevPos => Ok(Val::V(ctx.robot_prev_pos())),
            Builtin::RobotVel => Ok(Val::V(ctx.frame.robot.vel)),
            Builtin::RobotRadius => Ok(Val::S(ctx.frame.robot.radius)),
            Builtin::Start => Ok(Val::V(ctx.scenario.robot_start)),
            Builtin::Goal => Ok(Val::V(ctx.scenario.robot_goal)),
            Builtin::GoalDist => finite(a.v().dist(ctx.scenario.robot_goal), "goal_dist"),
            Builtin::StepIndex => Ok(Val::S(ctx.frame.t as f64)),
            Builtin::Horizon => Ok(Val::S(ctx.cfg.horizon as f64)),
            Builtin::ReachedGoal => Ok(Val::B(ctx.reached_goal())),
            Builtin::Collided => Ok(Val::B(ctx.collided())),
            Builtin::TimedOut => Ok(Val::B(ctx.frame.status == Status::Timeout)),
            Builtin::CountWithin => {
                let r = a.s();
                let p = ctx.robot_pos();
                Ok(Val::S(ctx.frame.humans().filter(|h| h.pos.dist(p) <= r).count() as f64))
            }
            Builtin::HPos => Ok(Val::V(ctx.human(a.h()).pos)),
            Builtin::HVel => Ok(Val::V(ctx.human(a.h()).vel)),
            Builtin::HRadius => Ok(Val::S(ctx.human(a.h()).radius)),
            Builtin::Predicted => {
                let slot = a.h();
                let row = &ctx.frame.predicted[slot];
                if row.is_empty() {
                    return Ok(Val::V(ctx.human(slot).pos));
                }
                let k = b.s().round().clamp(1.0, row.len() as f64) as usize;
                Ok(Val::V(row[k - 1]))
            }
        }
    }
}
