use std::fmt::{self, Write as _};

use super::Span;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub decls: Vec<Decl>,
    /// Comments after the last declaration.
    pub trailing_comments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decl {
    pub kind: DeclKind,
    pub name: String,
    /// Comments immediately above (or at the end of) the declaration line.
    pub comments: Vec<String>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeclKind {
    Obs { len: Option<usize> },
    Param { value: f64, frozen: bool },
    Node { expr: Expr },
    Action { expr: Expr, clip: (f64, f64) },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Gt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Name(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Only valid as the condition of `select`.
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// Every name referenced, in first-occurrence order.
    pub fn names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let ExprKind::Name(n) = &e.kind {
                if !out.contains(&n.as_str()) {
                    out.push(n.as_str());
                }
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Num(_) | ExprKind::Name(_) => {}
            ExprKind::Neg(e) => e.visit(f),
            ExprKind::Bin(_, a, b) | ExprKind::Cmp(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            ExprKind::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
        }
    }

    fn strip(&mut self) {
        self.span = Span::default();
        match &mut self.kind {
            ExprKind::Num(_) | ExprKind::Name(_) => {}
            ExprKind::Neg(e) => e.strip(),
            ExprKind::Bin(_, a, b) | ExprKind::Cmp(_, a, b) => {
                a.strip();
                b.strip();
            }
            ExprKind::Call(_, args) => args.iter_mut().for_each(Expr::strip),
        }
    }
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, f64, bool)> {
        self.decls.iter().filter_map(|d| match d.kind {
            DeclKind::Param { value, frozen } => Some((d.name.as_str(), value, frozen)),
            _ => None,
        })
    }

    /// Copy with every span reset, for structural comparison.
    pub fn without_spans(&self) -> Program {
        let mut p = self.clone();
        for d in &mut p.decls {
            d.span = Span::default();
            match &mut d.kind {
                DeclKind::Node { expr } | DeclKind::Action { expr, .. } => expr.strip(),
                _ => {}
            }
        }
        p
    }

    /// Replaces parameter values in declaration order.
    pub fn with_param_values(&self, values: &[f64]) -> Program {
        let mut p = self.clone();
        let mut it = values.iter();
        for d in &mut p.decls {
            if let DeclKind::Param { value, .. } = &mut d.kind {
                if let Some(v) = it.next() {
                    *value = *v;
                }
            }
        }
        p
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    format!("{v}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, parent_prec: u8) -> fmt::Result {
    match &e.kind {
        ExprKind::Num(v) => f.write_str(&format_number(*v)),
        ExprKind::Name(n) => f.write_str(n),
        ExprKind::Neg(inner) => {
            f.write_str("-")?;
            write_expr(f, inner, 3)
        }
        ExprKind::Bin(op, a, b) => {
            let p = op.precedence();
            let paren = p < parent_prec;
            if paren {
                f.write_str("(")?;
            }
            write_expr(f, a, p)?;
            write!(f, " {} ", op.symbol())?;
            // Left-associative: a same-precedence right operand needs parentheses.
            write_expr(f, b, p + 1)?;
            if paren {
                f.write_str(")")?;
            }
            Ok(())
        }
        ExprKind::Cmp(op, a, b) => {
            write_expr(f, a, 1)?;
            f.write_str(match op {
                CmpOp::Lt => " < ",
                CmpOp::Gt => " > ",
            })?;
            write_expr(f, b, 1)
        }
        ExprKind::Call(name, args) => {
            write!(f, "{name}(")?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_expr(f, a, 0)?;
            }
            f.write_str(")")
        }
    }
}

impl fmt::Display for Program {
    /// Canonical form: one declaration per line, single spaces around operators,
    /// comments on their own lines above the declaration they describe.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for d in &self.decls {
            for c in &d.comments {
                push_comment(&mut out, c);
            }
            match &d.kind {
                DeclKind::Obs { len: None } => writeln!(out, "obs {}", d.name)?,
                DeclKind::Obs { len: Some(n) } => writeln!(out, "obs {} [{n}]", d.name)?,
                DeclKind::Param { value, frozen } => {
                    write!(out, "param {} = {}", d.name, format_number(*value))?;
                    if *frozen {
                        out.push_str(" frozen");
                    }
                    out.push('\n');
                }
                DeclKind::Node { expr } => writeln!(out, "node {} = {expr}", d.name)?,
                DeclKind::Action { expr, clip } => writeln!(
                    out,
                    "action {} = {expr} clip({}, {})",
                    d.name,
                    format_number(clip.0),
                    format_number(clip.1)
                )?,
            }
        }
        for c in &self.trailing_comments {
            push_comment(&mut out, c);
        }
        f.write_str(&out)
    }
}

fn push_comment(out: &mut String, c: &str) {
    if c.is_empty() {
        out.push_str("#\n");
    } else {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
}
