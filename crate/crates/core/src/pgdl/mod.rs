//! Policy Graph Description Language: a small declarative language for
//! structured policies, its checker, and its compiler to [`crate::graph`].
//!
//! ```text
//! obs speed
//! param gain = 0.1
//! node error = 0.6 - speed
//! action accelerate = gain * relu(error) clip(0, 1)
//! ```

mod ast;
mod check;
mod compile;
mod lexer;
mod parser;
mod summary;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::{format_number, BinOp, CmpOp, Decl, DeclKind, Expr, ExprKind, Program};
pub use check::check;
pub use compile::{compile, compile_source, CompiledPolicy, ONE_FEATURE};
pub use parser::parse;
pub use summary::render_summary;

/// Operators callable from PGDL, matching the graph's closed operator set.
pub const OPERATOR_NAMES: [&str; 13] = [
    "constant", "sum", "product", "negate", "relu", "abs", "clamp", "min", "max", "select", "square",
    "mean", "stack",
];

/// Unfrozen parameters should start inside `[-PARAM_BOUND, PARAM_BOUND]`.
pub const PARAM_BOUND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Llm,
    Human,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdlSource {
    pub text: String,
    pub origin: Origin,
}

/// 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub column: usize,
}

impl Span {
    pub fn new(line: usize, column: usize) -> Self {
        Self { line, column }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub span: Span,
    pub rule: &'static str,
    pub message: String,
}

impl Diagnostic {
    pub fn error(span: Span, rule: &'static str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, span, rule, message: message.into() }
    }

    pub fn warning(span: Span, rule: &'static str, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, span, rule, message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}[{}]: {}", self.span.line, self.span.column, self.rule, self.message)
    }
}

/// Renders diagnostics one per line.
pub fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

pub mod fixtures {
    //! Hand-written programs used by tests, prompts and examples.

    /// Two-action proportional speed controller with eight learnable weights.
    pub const SPEED_CONTROLLER: &str = include_str!("../../fixtures/pgdl/speed_controller.pgdl");
    /// Lunar-lander controller used as the worked example in restructuring prompts.
    pub const LANDER: &str = include_str!("../../fixtures/pgdl/lander.pgdl");
    /// Lane-keeping, speed-holding racing policy.
    pub const RACING_BASELINE: &str = include_str!("../../fixtures/pgdl/racing_baseline.pgdl");
}
