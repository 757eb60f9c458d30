use std::fmt::Write;

use super::ast::{Expr, ExprKind, Program, UnOp};

const PREC_IF: u8 = 0;
const PREC_NOT: u8 = 3;
const PREC_UNARY: u8 = 7;
const PREC_ATOM: u8 = 8;

/// Canonical source text. Re-parsing it yields an equal AST.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for b in &p.lets {
        let _ = writeln!(out, "let {} = {};", b.name, print_expr(&b.value));
    }
    out.push_str(&print_expr(&p.body));
    out
}

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, PREC_IF);
    out
}

fn precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Num(v) if v.is_sign_negative() => PREC_UNARY,
        ExprKind::Num(_) | ExprKind::Bool(_) | ExprKind::Var(_) | ExprKind::Call(..) | ExprKind::Aggregate(..) => {
            PREC_ATOM
        }
        ExprKind::Unary(UnOp::Neg, _) => PREC_UNARY,
        ExprKind::Unary(UnOp::Not, _) => PREC_NOT,
        ExprKind::Binary(op, ..) => op.precedence(),
        ExprKind::If(..) => PREC_IF,
    }
}

fn write_expr(out: &mut String, e: &Expr, min_prec: u8) {
    let paren = precedence(e) < min_prec;
    if paren {
        out.push('(');
    }
    match &e.kind {
        ExprKind::Num(v) => {
            let _ = write!(out, "{v}");
        }
        ExprKind::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::Unary(UnOp::Neg, a) => {
            out.push('-');
            // `-2` would read back as a negative literal.
            let need = if matches!(a.kind, ExprKind::Num(_)) { PREC_ATOM + 1 } else { PREC_UNARY };
            write_expr(out, a, need);
        }
        ExprKind::Unary(UnOp::Not, a) => {
            out.push_str("not ");
            write_expr(out, a, PREC_NOT);
        }
        ExprKind::Binary(op, a, b) => {
            let p = op.precedence();
            let left = if op.is_comparison() { p + 1 } else { p };
            write_expr(out, a, left);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, b, p + 1);
        }
        ExprKind::If(branches, other) => {
            for (i, (c, v)) in branches.iter().enumerate() {
                out.push_str(if i == 0 { "if " } else { " elif " });
                write_expr(out, c, PREC_IF + 1);
                out.push_str(" then ");
                write_expr(out, v, PREC_IF + 1);
            }
            out.push_str(" else ");
            write_expr(out, other, PREC_IF);
        }
        ExprKind::Call(name, args) => {
            out.push_str(name);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a, PREC_IF);
            }
            out.push(')');
        }
        ExprKind::Aggregate(kind, var, body) => {
            let _ = write!(out, "{}({var}: ", kind.name());
            write_expr(out, body, PREC_IF);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}
