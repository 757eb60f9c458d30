use serde::{Deserialize, Serialize};

use super::error::Pos;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggKind {
    Min,
    Sum,
}

impl AggKind {
    pub fn name(self) -> &'static str {
        match self {
            AggKind::Min => "min_over_humans",
            AggKind::Sum => "sum_over_humans",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "min_over_humans" => Some(AggKind::Min),
            "sum_over_humans" => Some(AggKind::Sum),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ExprKind {
    Num(f64),
    Bool(bool),
    Var(String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// `if c1 then e1 elif c2 then e2 ... else e`
    If(Vec<(Expr, Expr)>, Box<Expr>),
    Call(String, Vec<Expr>),
    /// `min_over_humans(h: body)`
    Aggregate(AggKind, String, Box<Expr>),
}

/// Expression node. Equality ignores source positions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    #[serde(skip)]
    pub pos: Pos,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use ExprKind::*;
        match (&self.kind, &other.kind) {
            // Bitwise so that -0.0 and 0.0 differ and NaN never appears.
            (Num(a), Num(b)) => a.to_bits() == b.to_bits(),
            (Bool(a), Bool(b)) => a == b,
            (Var(a), Var(b)) => a == b,
            (Unary(o1, a), Unary(o2, b)) => o1 == o2 && a == b,
            (Binary(o1, a1, b1), Binary(o2, a2, b2)) => o1 == o2 && a1 == a2 && b1 == b2,
            (If(b1, e1), If(b2, e2)) => b1 == b2 && e1 == e2,
            (Call(n1, a1), Call(n2, a2)) => n1 == n2 && a1 == a2,
            (Aggregate(k1, v1, b1), Aggregate(k2, v2, b2)) => k1 == k2 && v1 == v2 && b1 == b2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Self { kind, pos: Pos::default() }
    }

    pub fn at(kind: ExprKind, pos: Pos) -> Self {
        Self { kind, pos }
    }

    pub fn num(v: f64) -> Self {
        Self::new(ExprKind::Num(v))
    }

    pub fn var(name: &str) -> Self {
        Self::new(ExprKind::Var(name.into()))
    }

    pub fn call(name: &str, args: Vec<Expr>) -> Self {
        Self::new(ExprKind::Call(name.into(), args))
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Self::new(ExprKind::Binary(op, Box::new(a), Box::new(b)))
    }

    pub fn negate(a: Expr) -> Self {
        Self::new(ExprKind::Unary(UnOp::Neg, Box::new(a)))
    }

    /// Number of nodes in this subtree.
    pub fn node_count(&self) -> usize {
        1 + self.children().map(Expr::node_count).sum::<usize>()
    }

    pub fn children(&self) -> Box<dyn Iterator<Item = &Expr> + '_> {
        match &self.kind {
            ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Var(_) => Box::new(std::iter::empty()),
            ExprKind::Unary(_, a) => Box::new(std::iter::once(a.as_ref())),
            ExprKind::Binary(_, a, b) => Box::new([a.as_ref(), b.as_ref()].into_iter()),
            ExprKind::If(branches, e) => {
                Box::new(branches.iter().flat_map(|(c, v)| [c, v]).chain(std::iter::once(e.as_ref())))
            }
            ExprKind::Call(_, args) => Box::new(args.iter()),
            ExprKind::Aggregate(_, _, body) => Box::new(std::iter::once(body.as_ref())),
        }
    }

    /// Mutable pre-order visit.
    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match &mut self.kind {
            ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Var(_) => {}
            ExprKind::Unary(_, a) => a.walk_mut(f),
            ExprKind::Binary(_, a, b) => {
                a.walk_mut(f);
                b.walk_mut(f);
            }
            ExprKind::If(branches, e) => {
                for (c, v) in branches {
                    c.walk_mut(f);
                    v.walk_mut(f);
                }
                e.walk_mut(f);
            }
            ExprKind::Call(_, args) => args.iter_mut().for_each(|a| a.walk_mut(f)),
            ExprKind::Aggregate(_, _, body) => body.walk_mut(f),
        }
    }

    /// Deepest nesting of aggregations in this subtree.
    pub fn aggregation_depth(&self) -> usize {
        let inner = self.children().map(Expr::aggregation_depth).max().unwrap_or(0);
        match self.kind {
            ExprKind::Aggregate(..) => inner + 1,
            _ => inner,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    pub value: Expr,
    #[serde(skip)]
    pub pos: Pos,
}

/// `let`-bindings followed by the final expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub lets: Vec<Binding>,
    pub body: Expr,
}

impl Program {
    pub fn node_count(&self) -> usize {
        self.lets.iter().map(|b| 1 + b.value.node_count()).sum::<usize>() + self.body.node_count()
    }

    pub fn aggregation_depth(&self) -> usize {
        self.lets.iter().map(|b| b.value.aggregation_depth()).chain([self.body.aggregation_depth()]).max().unwrap_or(0)
    }

    /// Replaces every `let` by substitution into the body.
    pub fn inline_lets(&self) -> Expr {
        let mut body = self.body.clone();
        for b in self.lets.iter().rev() {
            substitute(&mut body, &b.name, &b.value);
        }
        body
    }
}

/// Replaces free occurrences of `name` with `value`, respecting binders.
pub fn substitute(e: &mut Expr, name: &str, value: &Expr) {
    match &mut e.kind {
        ExprKind::Var(v) if v == name => *e = value.clone(),
        ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Var(_) => {}
        ExprKind::Unary(_, a) => substitute(a, name, value),
        ExprKind::Binary(_, a, b) => {
            substitute(a, name, value);
            substitute(b, name, value);
        }
        ExprKind::If(branches, d) => {
            for (c, v) in branches {
                substitute(c, name, value);
                substitute(v, name, value);
            }
            substitute(d, name, value);
        }
        ExprKind::Call(_, args) => args.iter_mut().for_each(|a| substitute(a, name, value)),
        ExprKind::Aggregate(_, var, body) => {
            if var != name {
                substitute(body, name, value);
            }
        }
    }
}
