use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Syntax,
    UnknownIdentifier,
    TypeMismatch,
    LimitExceeded,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Syntax => "syntax",
            Self::UnknownIdentifier => "unknown identifier",
            Self::TypeMismatch => "type mismatch",
            Self::LimitExceeded => "limit exceeded",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("line {pos}: [{category}] {message}")]
pub struct ParseError {
    pub pos: Pos,
    pub category: ErrorCategory,
    pub message: String,
}

impl ParseError {
    pub fn new(pos: Pos, category: ErrorCategory, message: impl Into<String>) -> Self {
        Self { pos, category, message: message.into() }
    }
}

/// All diagnostics for one source text, formatted one per line so the text
/// can be handed back to a generator verbatim.
#[derive(Clone, Debug, PartialEq, Error)]
pub struct ParseErrors(pub Vec<ParseError>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ParseErrors {
    pub fn categories(&self) -> Vec<ErrorCategory> {
        self.0.iter().map(|e| e.category).collect()
    }
}

impl From<ParseError> for ParseErrors {
    fn from(e: ParseError) -> Self {
        Self(vec![e])
    }
}

/// Runtime invariant violation: some intermediate went non-finite.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("non-finite intermediate value in `{op}`")]
pub struct EvalError {
    pub op: String,
}
