//! Reward expression language: a closed, total, deterministic DSL that every
//! candidate reward is written in.

pub mod ast;
mod check;
mod error;
mod eval;
mod lexer;
pub mod mutate;
mod parser;
mod printer;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ast::{AggKind, BinOp, Binding, Expr, ExprKind, Program, UnOp};
pub use check::{builtin_names, Type, MAX_POW};
pub use error::{ErrorCategory, EvalError, ParseError, ParseErrors, Pos};
pub use eval::{eval_reward, guarded_div, guarded_exp, guarded_log, EvalContext, DIV_FLOOR, EXP_CAP, LOG_FLOOR, OUTPUT_BOUND};
pub use printer::{print_expr, print_program};

use crate::rng::digest_hex;

/// EBNF of the language, published in the docs and embedded in prompts.
pub const GRAMMAR: &str = r##"program    = { "let" ident "=" expr ";" } expr ;
expr       = conditional | or_expr ;
conditional= "if" expr "then" expr { "elif" expr "then" expr } "else" expr ;
or_expr    = and_expr { "or" and_expr } ;
and_expr   = not_expr { "and" not_expr } ;
not_expr   = "not" not_expr | comparison ;
comparison = sum [ ( "<" | "<=" | ">" | ">=" | "==" | "!=" ) sum ] ;
sum        = product { ( "+" | "-" ) product } ;
product    = unary { ( "*" | "/" ) unary } ;
unary      = "-" unary | primary ;
primary    = number | "true" | "false" | ident | call | aggregation | "(" expr ")" ;
call       = ident "(" [ expr { "," expr } ] ")" ;
aggregation= ( "min_over_humans" | "sum_over_humans" ) "(" ident ":" expr ")" ;
comment    = "#" { any character except newline } ;

types: scalar, bool, vec2; the aggregation binder has type human.
the program must evaluate to a scalar.

scalar:  div(a,b) min(a,b) max(a,b) abs(x) clamp(x,lo,hi) exp(x) log(x) sqrt(x)
         tanh(x) pow(x,n) with n an integer literal 0..8
vec2:    dist(p,q) norm(p) dot(p,q) sub(p,q); p+q p-q p*s s*p p/s
state:   robot_pos() robot_prev_pos() robot_vel() robot_radius() start() goal()
         goal_dist() goal_dist(p) step_index() horizon()
events:  reached_goal() collided() timed_out()
crowd:   min_over_humans(h: ...) sum_over_humans(h: ...) count_within(r)
         h_pos(h) h_vel(h) h_radius(h) predicted(h,k)
crowd aggregations range over humans inside the sensing range; an empty
min yields the sensing range, an empty sum yields 0; aggregations do not nest.
"/" and div floor |divisor| at 1e-9; log floors its argument at 1e-9;
exp caps its exponent at 50; sqrt clamps negatives to 0."##;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_nodes: usize,
    pub max_aggregation_depth: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_nodes: 512, max_aggregation_depth: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    LlmInitial,
    Mutation,
    Crossover,
    Refinement,
    Restart,
    /// Rule-based edit used after the provider failed to return a valid program.
    Fallback,
}

/// A validated reward program. Immutable; cheap to clone and share.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ProgramRecord", into = "ProgramRecord")]
pub struct RewardProgram {
    source: String,
    ast: Program,
    compiled: Arc<check::Compiled>,
    limits: Limits,
    pub provenance: Provenance,
    pub parents: Vec<String>,
}

impl PartialEq for RewardProgram {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast && self.provenance == other.provenance && self.parents == other.parents
    }
}

#[derive(Serialize, Deserialize)]
struct ProgramRecord {
    source: String,
    provenance: Provenance,
    #[serde(default)]
    parents: Vec<String>,
    #[serde(default)]
    limits: Limits,
}

impl TryFrom<ProgramRecord> for RewardProgram {
    type Error = ParseErrors;

    fn try_from(r: ProgramRecord) -> Result<Self, ParseErrors> {
        let mut p = parse_program(&r.source, r.limits)?;
        p.provenance = r.provenance;
        p.parents = r.parents;
        Ok(p)
    }
}

impl From<RewardProgram> for ProgramRecord {
    fn from(p: RewardProgram) -> Self {
        Self { source: p.source, provenance: p.provenance, parents: p.parents, limits: p.limits }
    }
}

impl RewardProgram {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Program {
        &self.ast
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub(crate) fn compiled(&self) -> &check::Compiled {
        &self.compiled
    }

    /// Pretty-printed source; the basis of the content hash.
    pub fn canonical(&self) -> String {
        print_program(&self.ast)
    }

    /// SHA-256 of the canonical text, lowercase hex.
    pub fn hash(&self) -> String {
        digest_hex(self.canonical().as_bytes())
    }

    pub fn node_count(&self) -> usize {
        self.ast.node_count()
    }

    pub fn with_origin(mut self, provenance: Provenance, parents: Vec<String>) -> Self {
        self.provenance = provenance;
        self.parents = parents;
        self
    }

    /// Validates an AST built in code; the stored source is its canonical print.
    pub fn from_ast(ast: Program, limits: Limits, provenance: Provenance, parents: Vec<String>) -> Result<Self, ParseErrors> {
        let compiled = check::check(&ast, &limits)?;
        let source = print_program(&ast);
        Ok(Self { source, ast, compiled: Arc::new(compiled), limits, provenance, parents })
    }
}

/// Parses and validates `source`. Nothing is evaluated.
pub fn parse_program(source: &str, limits: Limits) -> Result<RewardProgram, ParseErrors> {
    let ast = parser::parse_syntax(source)?;
    let compiled = check::check(&ast, &limits)?;
    Ok(RewardProgram {
        source: source.to_string(),
        ast,
        compiled: Arc::new(compiled),
        limits,
        provenance: Provenance::LlmInitial,
        parents: Vec::new(),
    })
}

pub const SEED_SOURCE: &str = "if reached_goal() then 10\n\
elif collided() then -20\n\
else 2 * (goal_dist(robot_prev_pos()) - goal_dist(robot_pos()))";

/// The hand-written starting reward: terminal bonus and penalty plus
/// progress shaping toward the goal.
pub fn seed_program() -> RewardProgram {
    parse_program(SEED_SOURCE, Limits::default()).expect("seed parses").with_origin(Provenance::Seed, Vec::new())
}
