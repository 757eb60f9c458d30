use super::ast::{AggKind, BinOp, Binding, Expr, ExprKind, Program, UnOp};
use super::error::{ErrorCategory, ParseError, Pos};
use super::lexer::{lex, Tok, Token};

/// Nesting bound that keeps the recursive descent off the stack limit.
const MAX_NESTING: usize = 200;

pub fn parse_syntax(src: &str) -> Result<Program, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser { tokens, i: 0, depth: 0 };
    let prog = p.program()?;
    Ok(prog)
}

struct Parser {
    tokens: Vec<Token>,
    i: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.i].tok
    }

    fn pos(&self) -> Pos {
        self.tokens[self.i].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.i].clone();
        if self.i + 1 < self.tokens.len() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(self.pos(), ErrorCategory::Syntax, msg)
    }

    fn expect(&mut self, tok: Tok, ctx: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.error(format!("expected {} {ctx}, found {}", tok.describe(), self.peek().describe())))
        }
    }

    fn ident(&mut self, ctx: &str) -> Result<(String, Pos), ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let pos = self.pos();
                self.bump();
                Ok((name, pos))
            }
            other => Err(self.error(format!("expected identifier {ctx}, found {}", other.describe()))),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(ParseError::new(
                self.pos(),
                ErrorCategory::LimitExceeded,
                format!("expression nesting deeper than {MAX_NESTING}"),
            ));
        }
        Ok(())
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut lets = Vec::new();
        while *self.peek() == Tok::Let {
            let pos = self.bump().pos;
            let (name, _) = self.ident("after `let`")?;
            self.expect(Tok::Assign, "in let-binding")?;
            let value = self.expr()?;
            self.expect(Tok::Semi, "after let-binding")?;
            lets.push(Binding { name, value, pos });
        }
        let body = self.expr()?;
        if *self.peek() != Tok::Eof {
            return Err(self.error(format!("unexpected {} after final expression", self.peek().describe())));
        }
        Ok(Program { lets, body })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let e = if *self.peek() == Tok::If { self.if_expr() } else { self.or_expr() };
        self.depth -= 1;
        e
    }

    fn if_expr(&mut self) -> Result<Expr, ParseError> {
        let pos = self.bump().pos;
        let mut branches = Vec::new();
        let cond = self.expr()?;
        self.expect(Tok::Then, "after if-condition")?;
        let value = self.expr()?;
        branches.push((cond, value));
        while self.eat(&Tok::Elif) {
            let cond = self.expr()?;
            self.expect(Tok::Then, "after elif-condition")?;
            let value = self.expr()?;
            branches.push((cond, value));
        }
        self.expect(Tok::Else, "to close conditional (every `if` needs an `else`)")?;
        let other = self.expr()?;
        Ok(Expr::at(ExprKind::If(branches, Box::new(other)), pos))
    }

    fn binary_chain(
        &mut self,
        ops: &[(Tok, BinOp)],
        next: fn(&mut Self) -> Result<Expr, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        'outer: loop {
            for (tok, op) in ops {
                if self.peek() == tok {
                    let pos = self.bump().pos;
                    let rhs = next(self)?;
                    lhs = Expr::at(ExprKind::Binary(*op, Box::new(lhs), Box::new(rhs)), pos);
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        self.binary_chain(&[(Tok::Or, BinOp::Or)], Self::and_expr)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        self.binary_chain(&[(Tok::And, BinOp::And)], Self::not_expr)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Not {
            let pos = self.bump().pos;
            self.enter()?;
            let inner = self.not_expr()?;
            self.depth -= 1;
            return Ok(Expr::at(ExprKind::Unary(UnOp::Not, Box::new(inner)), pos));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            Tok::EqEq => BinOp::Eq,
            Tok::NotEq => BinOp::Ne,
            _ => return Ok(lhs),
        };
        let pos = self.bump().pos;
        let rhs = self.add_expr()?;
        if matches!(self.peek(), Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge | Tok::EqEq | Tok::NotEq) {
            return Err(self.error("comparisons do not chain; use `and`"));
        }
        Ok(Expr::at(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos))
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        self.binary_chain(&[(Tok::Plus, BinOp::Add), (Tok::Minus, BinOp::Sub)], Self::mul_expr)
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        self.binary_chain(&[(Tok::Star, BinOp::Mul), (Tok::Slash, BinOp::Div)], Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            let pos = self.bump().pos;
            // A minus directly before a literal is part of the literal.
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::at(ExprKind::Num(-v), pos));
            }
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::at(ExprKind::Unary(UnOp::Neg, Box::new(inner)), pos));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::at(ExprKind::Num(v), pos))
            }
            Tok::True => {
                self.bump();
                Ok(Expr::at(ExprKind::Bool(true), pos))
            }
            Tok::False => {
                self.bump();
                Ok(Expr::at(ExprKind::Bool(false), pos))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "to close parenthesis")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if !self.eat(&Tok::LParen) {
                    return Ok(Expr::at(ExprKind::Var(name), pos));
                }
                if let Some(kind) = AggKind::from_name(&name) {
                    let (var, _) = self.ident(&format!("naming the human in `{name}(h: ...)`"))?;
                    self.expect(Tok::Colon, &format!("after binder in `{name}`"))?;
                    let body = self.expr()?;
                    self.expect(Tok::RParen, &format!("to close `{name}`"))?;
                    return Ok(Expr::at(ExprKind::Aggregate(kind, var, Box::new(body)), pos));
                }
                let mut args = Vec::new();
                if !self.eat(&Tok::RParen) {
                    loop {
                        args.push(self.expr()?);
                        if self.eat(&Tok::Comma) {
                            continue;
                        }
                        self.expect(Tok::RParen, &format!("to close call to `{name}`"))?;
                        break;
                    }
                }
                Ok(Expr::at(ExprKind::Call(name, args), pos))
            }
            other => Err(self.error(format!("expected an expression, found {}", other.describe()))),
        }
    }
}
