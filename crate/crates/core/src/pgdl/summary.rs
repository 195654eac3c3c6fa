use super::ast::{format_number, BinOp, CmpOp, DeclKind, Expr, ExprKind, Program};
use super::compile::CompiledPolicy;

fn spaced(name: &str) -> String {
    name.replace('_', " ")
}

struct Describer<'a> {
    program: &'a Program,
    pending: Vec<&'a str>,
}

impl<'a> Describer<'a> {
    fn wrap(&mut self, e: &'a Expr) -> String {
        let s = self.expr(e);
        match e.kind {
            ExprKind::Bin(..) | ExprKind::Cmp(..) => format!("({s})"),
            _ => s,
        }
    }

    fn list(&mut self, args: &'a [Expr]) -> String {
        args.iter().map(|a| self.wrap(a)).collect::<Vec<_>>().join(", ")
    }

    fn expr(&mut self, e: &'a Expr) -> String {
        match &e.kind {
            ExprKind::Num(v) => format_number(*v),
            ExprKind::Name(n) => match self.program.decl(n).map(|d| &d.kind) {
                Some(DeclKind::Param { value, .. }) => format!("{} ({})", spaced(n), format_number(*value)),
                Some(DeclKind::Node { .. }) => {
                    if !self.pending.contains(&n.as_str()) {
                        self.pending.push(n);
                    }
                    spaced(n)
                }
                _ => spaced(n),
            },
            ExprKind::Neg(inner) => format!("negative {}", self.wrap(inner)),
            ExprKind::Bin(op, a, b) => {
                let word = match op {
                    BinOp::Add => "plus",
                    BinOp::Sub => "minus",
                    BinOp::Mul => "times",
                };
                let (l, r) = if *op == BinOp::Mul {
                    (self.mul_operand(a), self.mul_operand(b))
                } else {
                    let l = self.expr(a);
                    let r = match b.kind {
                        ExprKind::Bin(BinOp::Add | BinOp::Sub, ..) => self.wrap(b),
                        _ => self.expr(b),
                    };
                    (l, r)
                };
                format!("{l} {word} {r}")
            }
            ExprKind::Cmp(op, a, b) => {
                let word = match op {
                    CmpOp::Lt => "is below",
                    CmpOp::Gt => "is above",
                };
                format!("{} {word} {}", self.expr(a), self.expr(b))
            }
            ExprKind::Call(name, args) => match name.as_str() {
                "constant" => self.expr(&args[0]),
                "clamp" => {
                    let x = self.wrap(&args[0]);
                    let lo = self.expr(&args[1]);
                    let hi = self.expr(&args[2]);
                    format!("{x} limited to [{lo}, {hi}]")
                }
                "select" => {
                    let c = self.expr(&args[0]);
                    let t = self.wrap(&args[1]);
                    let f = self.wrap(&args[2]);
                    format!("{t} when {c}, otherwise {f}")
                }
                "abs" => format!("the absolute value of {}", self.wrap(&args[0])),
                "mean" => format!("the mean of {}", self.wrap(&args[0])),
                "negate" => format!("negative {}", self.wrap(&args[0])),
                "min" => format!("the smaller of {}", self.list(args)),
                "max" => format!("the larger of {}", self.list(args)),
                "sum" => format!("the sum of {}", self.list(args)),
                "product" => format!("the product of {}", self.list(args)),
                "stack" => format!("the vector [{}]", self.list(args)),
                other => format!("{other} of {}", self.list(args)),
            },
        }
    }

    fn mul_operand(&mut self, e: &'a Expr) -> String {
        match e.kind {
            ExprKind::Bin(BinOp::Add | BinOp::Sub, ..) => self.wrap(e),
            _ => self.expr(e),
        }
    }
}

/// One sentence per action tracing its dependencies back to observations,
/// naming parameters with their current values.
pub fn render_summary(compiled: &CompiledPolicy) -> String {
    let program = &compiled.program.with_param_values(&compiled.weights.values);
    render_program(program, &compiled.hints)
}

pub(crate) fn render_program(program: &Program, hints: &std::collections::BTreeMap<String, String>) -> String {
    let mut sentences = Vec::new();
    for d in &program.decls {
        let DeclKind::Action { expr, clip } = &d.kind else { continue };
        let mut desc = Describer { program, pending: Vec::new() };
        let mut parts = vec![format!(
            "{} is {}, clipped to [{}, {}]",
            spaced(&d.name),
            desc.expr(expr),
            format_number(clip.0),
            format_number(clip.1)
        )];
        let mut done = 0;
        while done < desc.pending.len() {
            let name = desc.pending[done];
            done += 1;
            if let Some(DeclKind::Node { expr }) = program.decl(name).map(|d| &d.kind) {
                let label = match hints.get(name) {
                    Some(h) => format!("{} ({h})", spaced(name)),
                    None => spaced(name),
                };
                let body = desc.expr(expr);
                parts.push(format!("{label} is {body}"));
            }
        }
        let mut s = parts.join("; ");
        if let Some(first) = s.get(..1) {
            s = first.to_uppercase() + &s[1..];
        }
        s.push('.');
        sentences.push(s);
    }
    sentences.join("\n")
}
