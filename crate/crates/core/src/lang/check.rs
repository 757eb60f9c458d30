use std::collections::HashMap;
use std::fmt;

use super::ast::{AggKind, BinOp, Expr, ExprKind, Program, UnOp};
use super::error::{ErrorCategory, ParseError, Pos};
use super::Limits;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Type {
    Scalar,
    Bool,
    Vec2,
    Human,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::Scalar => "scalar",
            Type::Bool => "bool",
            Type::Vec2 => "vec2",
            Type::Human => "human",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Div,
    Min,
    Max,
    Abs,
    Clamp,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Dist,
    Norm,
    Dot,
    Sub,
    RobotPos,
    RobotPrevPos,
    RobotVel,
    RobotRadius,
    Start,
    Goal,
    GoalDist,
    StepIndex,
    Horizon,
    ReachedGoal,
    Collided,
    TimedOut,
    CountWithin,
    HPos,
    HVel,
    HRadius,
    Predicted,
}

use Type::{Bool as B, Human as H, Scalar as S, Vec2 as V};

/// Name, parameter types and result type of every fixed-arity built-in.
const SIGNATURES: &[(&str, Builtin, &[Type], Type)] = &[
    ("div", Builtin::Div, &[S, S], S),
    ("min", Builtin::Min, &[S, S], S),
    ("max", Builtin::Max, &[S, S], S),
    ("abs", Builtin::Abs, &[S], S),
    ("clamp", Builtin::Clamp, &[S, S, S], S),
    ("exp", Builtin::Exp, &[S], S),
    ("log", Builtin::Log, &[S], S),
    ("sqrt", Builtin::Sqrt, &[S], S),
    ("tanh", Builtin::Tanh, &[S], S),
    ("dist", Builtin::Dist, &[V, V], S),
    ("norm", Builtin::Norm, &[V], S),
    ("dot", Builtin::Dot, &[V, V], S),
    ("sub", Builtin::Sub, &[V, V], V),
    ("robot_pos", Builtin::RobotPos, &[], V),
    ("robot_prev_pos", Builtin::RobotPrevPos, &[], V),
    ("robot_vel", Builtin::RobotVel, &[], V),
    ("robot_radius", Builtin::RobotRadius, &[], S),
    ("start", Builtin::Start, &[], V),
    ("goal", Builtin::Goal, &[], V),
    ("step_index", Builtin::StepIndex, &[], S),
    ("horizon", Builtin::Horizon, &[], S),
    ("reached_goal", Builtin::ReachedGoal, &[], B),
    ("collided", Builtin::Collided, &[], B),
    ("timed_out", Builtin::TimedOut, &[], B),
    ("count_within", Builtin::CountWithin, &[S], S),
    ("h_pos", Builtin::HPos, &[H], V),
    ("h_vel", Builtin::HVel, &[H], V),
    ("h_radius", Builtin::HRadius, &[H], S),
    ("predicted", Builtin::Predicted, &[H, S], V),
];

pub const MAX_POW: u32 = 8;

/// Every callable name, for prompts and diagnostics.
pub fn builtin_names() -> Vec<&'static str> {
    let mut names: Vec<&str> = SIGNATURES.iter().map(|s| s.0).collect();
    names.extend(["goal_dist", "pow", "min_over_humans", "sum_over_humans"]);
    names
}

/// Validated, slot-resolved form used by the evaluator.
#[derive(Clone, Debug)]
pub enum Node {
    Num(f64),
    Bool(bool),
    Let(usize),
    Human(usize),
    Neg(Box<Node>),
    Not(Box<Node>),
    Arith(BinOp, Type, Type, Box<Node>, Box<Node>),
    Cmp(BinOp, Box<Node>, Box<Node>),
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    If(Vec<(Node, Node)>, Box<Node>),
    Call(Builtin, Vec<Node>),
    Pow(Box<Node>, u32),
    Agg(AggKind, Box<Node>),
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub lets: Vec<Node>,
    pub body: Node,
}

struct Checker {
    lets: HashMap<String, (usize, Type)>,
    binders: Vec<String>,
}

fn err(pos: Pos, cat: ErrorCategory, msg: impl Into<String>) -> ParseError {
    ParseError::new(pos, cat, msg)
}

fn mismatch(pos: Pos, msg: impl Into<String>) -> ParseError {
    err(pos, ErrorCategory::TypeMismatch, msg)
}

/// Enforces the size limits, then type-checks and resolves names.
pub fn check(prog: &Program, limits: &Limits) -> Result<Compiled, ParseError> {
    let nodes = prog.node_count();
    if nodes > limits.max_nodes {
        return Err(err(
            prog.body.pos,
            ErrorCategory::LimitExceeded,
            format!("program has {nodes} nodes, limit is {}", limits.max_nodes),
        ));
    }
    for b in &prog.lets {
        depth_check(&b.value, 0, limits.max_aggregation_depth)?;
    }
    depth_check(&prog.body, 0, limits.max_aggregation_depth)?;

    let mut c = Checker { lets: HashMap::new(), binders: Vec::new() };
    let mut lets = Vec::new();
    for b in &prog.lets {
        if c.lets.contains_key(&b.name) {
            return Err(err(b.pos, ErrorCategory::Syntax, format!("`{}` is already bound", b.name)));
        }
        if is_reserved(&b.name) {
            return Err(err(b.pos, ErrorCategory::Syntax, format!("`{}` is a built-in name", b.name)));
        }
        let (node, ty) = c.expr(&b.value)?;
        if ty == Type::Human {
            return Err(mismatch(b.value.pos, format!("`{}` cannot hold a human outside an aggregation", b.name)));
        }
        c.lets.insert(b.name.clone(), (lets.len(), ty));
        lets.push(node);
    }
    let (body, ty) = c.expr(&prog.body)?;
    if ty != Type::Scalar {
        return Err(mismatch(prog.body.pos, format!("program must produce a scalar, found {ty}")));
    }
    Ok(Compiled { lets, body })
}

fn is_reserved(name: &str) -> bool {
    builtin_names().contains(&name)
}

fn depth_check(e: &Expr, depth: usize, max: usize) -> Result<(), ParseError> {
    let depth = match e.kind {
        ExprKind::Aggregate(kind, ..) => {
            if depth + 1 > max {
                return Err(err(
                    e.pos,
                    ErrorCategory::LimitExceeded,
                    format!("`{}` nested {} deep, limit is {max}", kind.name(), depth + 1),
                ));
            }
            depth + 1
        }
        _ => depth,
    };
    e.children().try_for_each(|c| depth_check(c, depth, max))
}

impl Checker {
    fn expr(&mut self, e: &Expr) -> Result<(Node, Type), ParseError> {
        match &e.kind {
            ExprKind::Num(v) => Ok((Node::Num(*v), Type::Scalar)),
            ExprKind::Bool(b) => Ok((Node::Bool(*b), Type::Bool)),
            ExprKind::Var(name) => {
                if let Some(depth) = self.binders.iter().rposition(|b| b == name) {
                    return Ok((Node::Human(depth), Type::Human));
                }
                if let Some(&(slot, ty)) = self.lets.get(name) {
                    return Ok((Node::Let(slot), ty));
                }
                let hint = if is_reserved(name) { format!("; call it as `{name}(...)`") } else { String::new() };
                Err(err(e.pos, ErrorCategory::UnknownIdentifier, format!("unknown variable `{name}`{hint}")))
            }
            ExprKind::Unary(UnOp::Neg, a) => {
                let (n, ty) = self.expr(a)?;
                match ty {
                    Type::Scalar | Type::Vec2 => Ok((Node::Neg(Box::new(n)), ty)),
                    _ => Err(mismatch(e.pos, format!("cannot negate a {ty}"))),
                }
            }
            ExprKind::Unary(UnOp::Not, a) => {
                let n = self.expect(a, Type::Bool, "operand of `not`")?;
                Ok((Node::Not(Box::new(n)), Type::Bool))
            }
            ExprKind::Binary(op, a, b) => self.binary(e.pos, *op, a, b),
            ExprKind::If(branches, other) => {
                let mut out = Vec::new();
                let mut result: Option<Type> = None;
                for (cond, value) in branches {
                    let c = self.expect(cond, Type::Bool, "condition")?;
                    let (v, ty) = self.expr(value)?;
                    self.branch_type(&mut result, ty, value.pos)?;
                    out.push((c, v));
                }
                let (o, ty) = self.expr(other)?;
                self.branch_type(&mut result, ty, other.pos)?;
                Ok((Node::If(out, Box::new(o)), result.expect("at least one branch")))
            }
            ExprKind::Call(name, args) => self.call(e.pos, name, args),
            ExprKind::Aggregate(kind, var, body) => {
                if self.lets.contains_key(var) || is_reserved(var) {
                    return Err(err(e.pos, ErrorCategory::Syntax, format!("binder `{var}` shadows an existing name")));
                }
                self.binders.push(var.clone());
                let body = self.expect(body, Type::Scalar, &format!("body of `{}`", kind.name()));
                self.binders.pop();
                Ok((Node::Agg(*kind, Box::new(body?)), Type::Scalar))
            }
        }
    }

    fn branch_type(&self, result: &mut Option<Type>, ty: Type, pos: Pos) -> Result<(), ParseError> {
        if ty == Type::Human {
            return Err(mismatch(pos, "a conditional cannot produce a human"));
        }
        match result {
            None => *result = Some(ty),
            Some(r) if *r != ty => {
                return Err(mismatch(pos, format!("branches disagree: {r} vs {ty}")));
            }
            _ => {}
        }
        Ok(())
    }

    fn expect(&mut self, e: &Expr, want: Type, what: &str) -> Result<Node, ParseError> {
        let (n, ty) = self.expr(e)?;
        if ty != want {
            return Err(mismatch(e.pos, format!("{what} must be {want}, found {ty}")));
        }
        Ok(n)
    }

    fn binary(&mut self, pos: Pos, op: BinOp, a: &Expr, b: &Expr) -> Result<(Node, Type), ParseError> {
        match op {
            BinOp::And | BinOp::Or => {
                let l = self.expect(a, Type::Bool, &format!("left operand of `{}`", op.symbol()))?;
                let r = self.expect(b, Type::Bool, &format!("right operand of `{}`", op.symbol()))?;
                let n = if op == BinOp::And { Node::And(Box::new(l), Box::new(r)) } else { Node::Or(Box::new(l), Box::new(r)) };
                Ok((n, Type::Bool))
            }
            BinOp::Eq | BinOp::Ne => {
                let (l, lt) = self.expr(a)?;
                let (r, rt) = self.expr(b)?;
                if lt != rt || !matches!(lt, Type::Scalar | Type::Bool) {
                    return Err(mismatch(pos, format!("cannot compare {lt} with {rt} using `{}`", op.symbol())));
                }
                Ok((Node::Cmp(op, Box::new(l), Box::new(r)), Type::Bool))
            }
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                let l = self.expect(a, Type::Scalar, &format!("left operand of `{}`", op.symbol()))?;
                let r = self.expect(b, Type::Scalar, &format!("right operand of `{}`", op.symbol()))?;
                Ok((Node::Cmp(op, Box::new(l), Box::new(r)), Type::Bool))
            }
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                let (l, lt) = self.expr(a)?;
                let (r, rt) = self.expr(b)?;
                let out = match (op, lt, rt) {
                    (_, Type::Scalar, Type::Scalar) => Type::Scalar,
                    (BinOp::Add | BinOp::Sub, Type::Vec2, Type::Vec2) => Type::Vec2,
                    (BinOp::Mul, Type::Vec2, Type::Scalar) | (BinOp::Mul, Type::Scalar, Type::Vec2) => Type::Vec2,
                    (BinOp::Div, Type::Vec2, Type::Scalar) => Type::Vec2,
                    _ => return Err(mismatch(pos, format!("`{}` is not defined for {lt} and {rt}", op.symbol()))),
                };
                Ok((Node::Arith(op, lt, rt, Box::new(l), Box::new(r)), out))
            }
        }
    }

    fn call(&mut self, pos: Pos, name: &str, args: &[Expr]) -> Result<(Node, Type), ParseError> {
        match name {
            "goal_dist" => {
                let p = match args {
                    [] => Node::Call(Builtin::RobotPos, vec![]),
                    [p] => self.expect(p, Type::Vec2, "argument of `goal_dist`")?,
                    _ => return Err(mismatch(pos, format!("`goal_dist` takes 0 or 1 arguments, got {}", args.len()))),
                };
                return Ok((Node::Call(Builtin::GoalDist, vec![p]), Type::Scalar));
            }
            "pow" => {
                let [base, exp] = args else {
                    return Err(mismatch(pos, format!("`pow` takes 2 arguments, got {}", args.len())));
                };
                let base = self.expect(base, Type::Scalar, "base of `pow`")?;
                let n = match exp.kind {
                    ExprKind::Num(v) if v >= 0.0 && v <= MAX_POW as f64 && v.fract() == 0.0 => v as u32,
                    _ => {
                        return Err(mismatch(
                            exp.pos,
                            format!("exponent of `pow` must be an integer literal in 0..={MAX_POW}"),
                        ))
                    }
                };
                return Ok((Node::Pow(Box::new(base), n), Type::Scalar));
            }
            _ => {}
        }
        if AggKind::from_name(name).is_some() {
            return Err(err(pos, ErrorCategory::Syntax, format!("`{name}` needs a binder: `{name}(h: ...)`")));
        }
        let Some(&(_, builtin, params, ret)) = SIGNATURES.iter().find(|s| s.0 == name) else {
            let hint = if self.lets.contains_key(name) { "; it is a variable, not a function" } else { "" };
            return Err(err(pos, ErrorCategory::UnknownIdentifier, format!("unknown function `{name}`{hint}")));
        };
        if params.len() != args.len() {
            return Err(mismatch(pos, format!("`{name}` takes {} arguments, got {}", params.len(), args.len())));
        }
        let mut nodes = Vec::with_capacity(args.len());
        for (i, (arg, &want)) in args.iter().zip(params).enumerate() {
            nodes.push(self.expect(arg, want, &format!("argument {} of `{name}`", i + 1))?);
        }
        Ok((Node::Call(builtin, nodes), ret))
    }
}
