//! Structural edits on programs, driven by a keyed RNG.
//!
//! Used by the offline generator and as the fallback when a generated
//! candidate cannot be parsed.

use rand::Rng;

use super::ast::{BinOp, Expr, ExprKind, Program};
use super::parser::parse_syntax;
use super::{seed_program, Provenance, RewardProgram};
use crate::rng::StreamRng;

/// Shaping terms an edit may add, each roughly O(1) in magnitude.
pub const TERM_LIBRARY: &[&str] = &[
    "goal_dist(robot_prev_pos()) - goal_dist(robot_pos())",
    "min(min_over_humans(q: dist(robot_pos(), h_pos(q)) - h_radius(q) - robot_radius()), 1)",
    "-exp(-2 * min_over_humans(q: dist(predicted(q, 2), robot_pos()) - h_radius(q) - robot_radius()))",
    "-count_within(1.5)",
    "-1",
    "-goal_dist() / horizon()",
];

const SCALES: &[f64] = &[0.5, 0.8, 1.25, 2.0];
const WEIGHTS: &[f64] = &[0.05, 0.1, 0.2, 0.5, 1.0];
const ATTEMPTS: usize = 8;

fn pick<'a, T>(rng: &mut StreamRng, xs: &'a [T]) -> &'a T {
    &xs[rng.random_range(0..xs.len())]
}

fn term(rng: &mut StreamRng) -> Expr {
    parse_syntax(pick(rng, TERM_LIBRARY)).expect("library terms parse").body
}

/// Rounds to six significant digits so edited sources stay readable.
fn tidy(v: f64) -> f64 {
    format!("{v:.5e}").parse().unwrap_or(v)
}

/// The sub-expression holding dense shaping: the `else` arm of a top-level
/// conditional, otherwise the whole expression.
fn shaping_mut(e: &mut Expr) -> &mut Expr {
    if !matches!(e.kind, ExprKind::If(..)) {
        return e;
    }
    match &mut e.kind {
        ExprKind::If(_, other) => other,
        _ => unreachable!(),
    }
}

fn shaping(e: &Expr) -> &Expr {
    match &e.kind {
        ExprKind::If(_, other) => other,
        _ => e,
    }
}

/// Literal slots eligible for rescaling (pow exponents excluded).
fn literals_mut<'a>(e: &'a mut Expr, out: &mut Vec<&'a mut f64>) {
    match &mut e.kind {
        ExprKind::Num(v) => out.push(v),
        ExprKind::Bool(_) | ExprKind::Var(_) => {}
        ExprKind::Unary(_, a) => literals_mut(a, out),
        ExprKind::Binary(_, a, b) => {
            literals_mut(a, out);
            literals_mut(b, out);
        }
        ExprKind::If(branches, other) => {
            for (c, v) in branches {
                literals_mut(c, out);
                literals_mut(v, out);
            }
            literals_mut(other, out);
        }
        ExprKind::Call(name, args) => {
            let take = if name == "pow" { 1 } else { args.len() };
            args.iter_mut().take(take).for_each(|a| literals_mut(a, out));
        }
        ExprKind::Aggregate(_, _, body) => literals_mut(body, out),
    }
}

fn scale_constant(p: &mut Program, rng: &mut StreamRng) -> bool {
    let mut slots = Vec::new();
    for b in &mut p.lets {
        literals_mut(&mut b.value, &mut slots);
    }
    literals_mut(&mut p.body, &mut slots);
    let slots: Vec<&mut f64> = slots.into_iter().filter(|v| **v != 0.0).collect();
    if slots.is_empty() {
        return false;
    }
    let i = rng.random_range(0..slots.len());
    let factor = *pick(rng, SCALES);
    let mut slots = slots;
    *slots[i] = tidy(*slots[i] * factor);
    true
}

fn add_term(p: &mut Program, rng: &mut StreamRng) -> bool {
    let w = *pick(rng, WEIGHTS);
    let t = term(rng);
    let target = shaping_mut(&mut p.body);
    let old = std::mem::replace(target, Expr::num(0.0));
    *target = Expr::bin(BinOp::Add, old, Expr::bin(BinOp::Mul, Expr::num(w), t));
    true
}

fn drop_term(p: &mut Program, rng: &mut StreamRng) -> bool {
    let target = shaping_mut(&mut p.body);
    let ExprKind::Binary(BinOp::Add | BinOp::Sub, a, b) = &target.kind else {
        return false;
    };
    let keep = if rng.random_bool(0.5) { a.as_ref().clone() } else { b.as_ref().clone() };
    *target = keep;
    true
}

fn edit(p: &mut Program, rng: &mut StreamRng) -> bool {
    match rng.random_range(0..10) {
        0..=4 => scale_constant(p, rng),
        5..=8 => add_term(p, rng),
        _ => drop_term(p, rng),
    }
}

/// One random structural edit; the result always validates.
pub fn mutate(parent: &RewardProgram, rng: &mut StreamRng) -> RewardProgram {
    let parents = vec![parent.hash()];
    for _ in 0..ATTEMPTS {
        let mut ast = parent.ast().clone();
        if !edit(&mut ast, rng) {
            continue;
        }
        if let Ok(p) = RewardProgram::from_ast(ast, parent.limits(), Provenance::Mutation, parents.clone()) {
            if p.hash() != parent.hash() {
                return p;
            }
        }
    }
    parent.clone().with_origin(Provenance::Mutation, parents)
}

/// Keeps `a`'s terminal structure and mixes the shaping parts of both.
pub fn crossover(a: &RewardProgram, b: &RewardProgram, rng: &mut StreamRng) -> RewardProgram {
    let parents = vec![a.hash(), b.hash()];
    let ea = a.ast().inline_lets();
    let eb = b.ast().inline_lets();
    let sa = shaping(&ea).clone();
    let sb = shaping(&eb).clone();
    let mut body = ea.clone();
    *shaping_mut(&mut body) = if rng.random_bool(0.5) {
        sb
    } else {
        Expr::bin(BinOp::Add, Expr::bin(BinOp::Mul, Expr::num(0.5), sa), Expr::bin(BinOp::Mul, Expr::num(0.5), sb))
    };
    let ast = Program { lets: Vec::new(), body };
    match RewardProgram::from_ast(ast, a.limits(), Provenance::Crossover, parents.clone()) {
        Ok(p) => p,
        Err(_) => mutate(a, rng).with_origin(Provenance::Crossover, parents),
    }
}

/// A fresh candidate derived from the seed by a few edits.
pub fn restart(rng: &mut StreamRng) -> RewardProgram {
    let mut p = seed_program();
    let edits = rng.random_range(1..=3);
    for _ in 0..edits {
        p = mutate(&p, rng);
    }
    p.with_origin(Provenance::Restart, Vec::new())
}
