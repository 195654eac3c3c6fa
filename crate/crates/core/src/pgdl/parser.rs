use std::collections::HashMap;

use super::ast::{BinOp, CmpOp, Decl, DeclKind, Expr, ExprKind, Program};
use super::lexer::{lex, Tok, Token};
use super::{Diagnostic, Span, OPERATOR_NAMES};

const KEYWORDS: [&str; 6] = ["obs", "param", "node", "action", "clip", "frozen"];

#[derive(Clone, Copy, PartialEq)]
enum NameKind {
    Obs,
    Param,
    Node,
    Action,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    diags: Vec<Diagnostic>,
    declared: HashMap<String, (NameKind, Span)>,
}

type PResult<T> = Result<T, Diagnostic>;

/// Parses a program and resolves names. Forward references, duplicates and
/// unknown operators are reported here; shapes and ranges are left to `check`.
pub fn parse(src: &str) -> Result<Program, Vec<Diagnostic>> {
    let (toks, lex_diags) = lex(src);
    let mut p = Parser { toks, pos: 0, diags: lex_diags, declared: HashMap::new() };
    let mut program = Program::default();
    let mut pending_comments: Vec<String> = Vec::new();

    while p.pos < p.toks.len() {
        match p.peek().cloned() {
            Some(Tok::Newline) => {
                p.pos += 1;
            }
            Some(Tok::Comment { text, pragma }) => {
                p.pos += 1;
                if !pragma {
                    pending_comments.push(text);
                }
            }
            _ => match p.statement() {
                Ok(mut decl) => {
                    decl.comments = std::mem::take(&mut pending_comments);
                    if let Some(Tok::Comment { text, pragma: false }) = p.peek().cloned() {
                        decl.comments.push(text);
                        p.pos += 1;
                    }
                    if p.peek() != Some(&Tok::Newline) && p.pos < p.toks.len() {
                        let span = p.span();
                        p.diags.push(Diagnostic::error(span, "syntax", "expected end of line"));
                        p.skip_line();
                    }
                    program.decls.push(decl);
                }
                Err(d) => {
                    p.diags.push(d);
                    pending_comments.clear();
                    p.skip_line();
                }
            },
        }
    }
    program.trailing_comments = pending_comments;

    if p.diags.iter().any(Diagnostic::is_error) {
        p.diags.sort_by_key(|d| d.span);
        Err(p.diags)
    } else {
        Ok(program)
    }
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn span(&self) -> Span {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|t| t.span)
            .unwrap_or_default()
    }

    fn skip_line(&mut self) {
        while let Some(t) = self.peek() {
            let end = *t == Tok::Newline;
            self.pos += 1;
            if end {
                break;
            }
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None | Some(Tok::Newline) => "end of line".into(),
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Number(v)) => format!("number {v}"),
            Some(Tok::Comment { .. }) => "comment".into(),
            Some(t) => format!("`{}`", tok_text(t)),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Span> {
        if self.peek() == Some(&want) {
            let s = self.span();
            self.pos += 1;
            Ok(s)
        } else {
            Err(Diagnostic::error(self.span(), "syntax", format!("expected {what}, found {}", self.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<(String, Span)> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                let span = self.span();
                self.pos += 1;
                Ok((s, span))
            }
            _ => Err(Diagnostic::error(self.span(), "syntax", format!("expected {what}, found {}", self.describe()))),
        }
    }

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => Err(Diagnostic::error(self.span(), "syntax", format!("expected a number, found {}", self.describe()))),
        }
    }

    fn declare(&mut self, name: &str, kind: NameKind, span: Span) -> PResult<()> {
        if KEYWORDS.contains(&name) || OPERATOR_NAMES.contains(&name) {
            return Err(Diagnostic::error(span, "reserved-name", format!("`{name}` is reserved")));
        }
        if let Some((_, prev)) = self.declared.get(name) {
            return Err(Diagnostic::error(
                span,
                "duplicate",
                format!("`{name}` is already declared at line {}", prev.line),
            ));
        }
        self.declared.insert(name.to_string(), (kind, span));
        Ok(())
    }

    fn statement(&mut self) -> PResult<Decl> {
        let start = self.span();
        let (kw, _) = self.ident("a declaration")?;
        match kw.as_str() {
            "obs" => {
                let (name, nspan) = self.ident("an observation name")?;
                let len = if self.peek() == Some(&Tok::LBracket) {
                    self.pos += 1;
                    let span = self.span();
                    let n = match self.peek().cloned() {
                        Some(Tok::Number(v)) if v.fract() == 0.0 && v >= 1.0 => v as usize,
                        _ => return Err(Diagnostic::error(span, "syntax", "expected a positive integer length")),
                    };
                    self.pos += 1;
                    self.expect(Tok::RBracket, "`]`")?;
                    Some(n)
                } else {
                    None
                };
                self.declare(&name, NameKind::Obs, nspan)?;
                Ok(Decl { kind: DeclKind::Obs { len }, name, comments: Vec::new(), span: start })
            }
            "param" => {
                let (name, nspan) = self.ident("a parameter name")?;
                self.expect(Tok::Eq, "`=`")?;
                let value = self.signed_number()?;
                let frozen = if self.peek() == Some(&Tok::Ident("frozen".into())) {
                    self.pos += 1;
                    true
                } else {
                    false
                };
                self.declare(&name, NameKind::Param, nspan)?;
                Ok(Decl { kind: DeclKind::Param { value, frozen }, name, comments: Vec::new(), span: start })
            }
            "node" => {
                let (name, nspan) = self.ident("a node name")?;
                self.expect(Tok::Eq, "`=`")?;
                let expr = self.expr(false)?;
                self.declare(&name, NameKind::Node, nspan)?;
                Ok(Decl { kind: DeclKind::Node { expr }, name, comments: Vec::new(), span: start })
            }
            "action" => {
                let (name, nspan) = self.ident("an action name")?;
                self.expect(Tok::Eq, "`=`")?;
                let expr = self.expr(false)?;
                match self.peek() {
                    Some(Tok::Ident(s)) if s == "clip" => self.pos += 1,
                    _ => {
                        return Err(Diagnostic::error(
                            self.span(),
                            "syntax",
                            format!("expected `clip(lo, hi)` after the action expression, found {}", self.describe()),
                        ))
                    }
                }
                self.expect(Tok::LParen, "`(`")?;
                let lo = self.signed_number()?;
                self.expect(Tok::Comma, "`,`")?;
                let hi = self.signed_number()?;
                self.expect(Tok::RParen, "`)`")?;
                self.declare(&name, NameKind::Action, nspan)?;
                Ok(Decl { kind: DeclKind::Action { expr, clip: (lo, hi) }, name, comments: Vec::new(), span: start })
            }
            other => Err(Diagnostic::error(
                start,
                "syntax",
                format!("unknown declaration `{other}`; expected obs, param, node or action"),
            )),
        }
    }

    /// `allow_cmp` is set only for the first argument of `select`.
    fn expr(&mut self, allow_cmp: bool) -> PResult<Expr> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Gt) => CmpOp::Gt,
            _ => return Ok(lhs),
        };
        if !allow_cmp {
            return Err(Diagnostic::error(self.span(), "syntax", "comparisons are only allowed as the condition of select"));
        }
        self.pos += 1;
        let rhs = self.additive()?;
        let span = lhs.span;
        Ok(Expr::new(ExprKind::Cmp(op, Box::new(lhs), Box::new(rhs)), span))
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Bin(op, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.unary()?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            let span = self.span();
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::new(ExprKind::Neg(Box::new(inner)), span));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(Expr::new(ExprKind::Num(v), span))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr(false)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    if !OPERATOR_NAMES.contains(&name.as_str()) {
                        return Err(Diagnostic::error(
                            span,
                            "unknown-operator",
                            format!("unknown operator `{name}`; available: {}", OPERATOR_NAMES.join(", ")),
                        ));
                    }
                    self.pos += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        loop {
                            let allow_cmp = name == "select" && args.is_empty();
                            args.push(self.expr(allow_cmp)?);
                            if self.peek() == Some(&Tok::Comma) {
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen, "`)` or `,`")?;
                    return Ok(Expr::new(ExprKind::Call(name, args), span));
                }
                match self.declared.get(&name) {
                    Some((NameKind::Action, _)) => Err(Diagnostic::error(
                        span,
                        "unknown-name",
                        format!("`{name}` is an action and cannot be used as an input"),
                    )),
                    Some(_) => Ok(Expr::new(ExprKind::Name(name), span)),
                    None => Err(Diagnostic::error(
                        span,
                        "unknown-name",
                        format!("`{name}` is not declared before this line"),
                    )),
                }
            }
            _ => Err(Diagnostic::error(span, "syntax", format!("expected an expression, found {}", self.describe()))),
        }
    }
}

fn tok_text(t: &Tok) -> &'static str {
    match t {
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::LBracket => "[",
        Tok::RBracket => "]",
        Tok::Comma => ",",
        Tok::Eq => "=",
        Tok::Lt => "<",
        Tok::Gt => ">",
        _ => "?",
    }
}
