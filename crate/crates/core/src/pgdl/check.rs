use std::collections::HashMap;

use super::ast::{BinOp, DeclKind, Expr, ExprKind, Program};
use super::{Diagnostic, PARAM_BOUND};
use crate::graph::Shape;
use crate::sim::ObservationSchema;

#[derive(Clone, Copy)]
enum Binding {
    Param,
    /// Shape and whether the value depends on some observation.
    Value(Shape, bool),
}

/// Inferred shape plus whether the value is built only from numbers and parameters.
#[derive(Clone, Copy)]
struct Ty {
    shape: Shape,
    constant: bool,
}

/// Inclusive argument-count bounds for each operator name.
pub(crate) fn arity(name: &str) -> (usize, usize) {
    match name {
        "constant" | "negate" | "relu" | "abs" | "square" | "mean" => (1, 1),
        "clamp" | "select" => (3, 3),
        "product" | "min" | "max" => (2, usize::MAX),
        _ => (1, usize::MAX),
    }
}

/// Static value of a clamp bound or constant argument: a number or frozen
/// parameter, optionally negated.
pub(crate) fn static_value(e: &Expr, program: &Program, allow_params: bool) -> Option<f64> {
    match &e.kind {
        ExprKind::Num(v) => Some(*v),
        ExprKind::Neg(inner) => static_value(inner, program, allow_params).map(|v| -v),
        ExprKind::Name(n) if allow_params => match program.decl(n)?.kind {
            DeclKind::Param { value, frozen: true } => Some(value),
            _ => None,
        },
        _ => None,
    }
}

struct Checker<'a> {
    program: &'a Program,
    env: HashMap<&'a str, Binding>,
    diags: Vec<Diagnostic>,
}

/// Collects every shape, arity, range and binding problem without stopping at the first.
pub fn check(program: &Program, schema: &ObservationSchema) -> Vec<Diagnostic> {
    let mut c = Checker { program, env: HashMap::new(), diags: Vec::new() };
    for d in &program.decls {
        match &d.kind {
            DeclKind::Obs { len } => {
                let shape = len.map_or(Shape::Scalar, Shape::Vector);
                if !schema.open {
                    match schema.get(&d.name) {
                        None => c.diags.push(Diagnostic::error(
                            d.span,
                            "unknown-observation",
                            format!("`{}` is not an observation of this task", d.name),
                        )),
                        Some(entry) if entry.len != *len => c.diags.push(Diagnostic::error(
                            d.span,
                            "observation-shape",
                            format!(
                                "`{}` has shape {}, declared as {shape}",
                                d.name,
                                entry.len.map_or(Shape::Scalar, Shape::Vector)
                            ),
                        )),
                        Some(_) => {}
                    }
                }
                c.env.insert(&d.name, Binding::Value(shape, true));
            }
            DeclKind::Param { value, frozen } => {
                if !frozen && value.abs() > PARAM_BOUND {
                    c.diags.push(Diagnostic::warning(
                        d.span,
                        "param-bound",
                        format!("`{}` starts at {value}, outside [-{PARAM_BOUND}, {PARAM_BOUND}]; mark it frozen or rescale", d.name),
                    ));
                }
                c.env.insert(&d.name, Binding::Param);
            }
            DeclKind::Node { expr } => {
                let shape = c.infer(expr).map_or(Shape::Scalar, |t| t.shape);
                let observed = c.observed(expr);
                c.env.insert(&d.name, Binding::Value(shape, observed));
            }
            DeclKind::Action { expr, clip } => {
                if let Some(t) = c.infer(expr) {
                    if !t.shape.is_scalar() {
                        c.diags.push(Diagnostic::error(
                            expr.span,
                            "shape",
                            format!("action `{}` must be a scalar, got {}; reduce it with mean", d.name, t.shape),
                        ));
                    }
                }
                if !c.observed(expr) {
                    c.diags.push(Diagnostic::error(
                        d.span,
                        "unreachable-action",
                        format!("action `{}` does not depend on any observation", d.name),
                    ));
                }
                if !(clip.0 < clip.1) {
                    c.diags.push(Diagnostic::error(d.span, "clip-range", format!("clip({}, {}) is empty", clip.0, clip.1)));
                }
                if !schema.actions.is_empty() {
                    match schema.actions.iter().find(|(n, _)| *n == d.name) {
                        None => c.diags.push(Diagnostic::error(
                            d.span,
                            "unknown-action",
                            format!(
                                "`{}` is not an action of this task; expected one of {}",
                                d.name,
                                schema.actions.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(", ")
                            ),
                        )),
                        Some((_, range)) if *range != *clip => c.diags.push(Diagnostic::error(
                            d.span,
                            "clip-range",
                            format!("`{}` must be clipped to ({}, {})", d.name, range.0, range.1),
                        )),
                        Some(_) => {}
                    }
                }
            }
        }
    }
    c.diags
}

impl Checker<'_> {
    fn observed(&self, e: &Expr) -> bool {
        e.names().iter().any(|n| matches!(self.env.get(n), Some(Binding::Value(_, true))))
    }

    fn err(&mut self, e: &Expr, rule: &'static str, msg: String) -> Option<Ty> {
        self.diags.push(Diagnostic::error(e.span, rule, msg));
        None
    }

    /// Shapes that may be combined elementwise by +, -, sum, min, max, select.
    /// Constants broadcast; a non-constant scalar never mixes with a vector.
    fn additive(&mut self, at: &Expr, tys: &[Ty]) -> Option<Ty> {
        let mut out: Option<Shape> = None;
        for t in tys.iter().filter(|t| !t.constant) {
            out = match out {
                None => Some(t.shape),
                Some(s) if s == t.shape => Some(s),
                Some(s) => {
                    return self.err(
                        at,
                        "shape",
                        format!("cannot combine {s} with {} without a reduction such as mean", t.shape),
                    )
                }
            };
        }
        let constant = tys.iter().all(|t| t.constant);
        let shape = match out {
            Some(s) => s,
            None => tys.iter().map(|t| t.shape).find(|s| !s.is_scalar()).unwrap_or(Shape::Scalar),
        };
        Some(Ty { shape, constant })
    }

    fn multiplicative(&mut self, at: &Expr, tys: &[Ty]) -> Option<Ty> {
        let mut shape = Shape::Scalar;
        for t in tys {
            shape = match (shape, t.shape) {
                (Shape::Scalar, s) | (s, Shape::Scalar) => s,
                (a, b) if a == b => a,
                (a, b) => return self.err(at, "shape", format!("cannot multiply {a} by {b}")),
            };
        }
        Some(Ty { shape, constant: tys.iter().all(|t| t.constant) })
    }

    fn infer(&mut self, e: &Expr) -> Option<Ty> {
        match &e.kind {
            ExprKind::Num(_) => Some(Ty { shape: Shape::Scalar, constant: true }),
            ExprKind::Name(n) => match self.env.get(n.as_str()) {
                Some(Binding::Param) => Some(Ty { shape: Shape::Scalar, constant: true }),
                Some(Binding::Value(shape, _)) => Some(Ty { shape: *shape, constant: false }),
                None => self.err(e, "unknown-name", format!("`{n}` is not declared")),
            },
            ExprKind::Neg(inner) => self.infer(inner),
            ExprKind::Bin(op, a, b) => {
                let (ta, tb) = (self.infer(a), self.infer(b));
                let (ta, tb) = (ta?, tb?);
                match op {
                    BinOp::Mul => self.multiplicative(e, &[ta, tb]),
                    _ => self.additive(e, &[ta, tb]),
                }
            }
            ExprKind::Cmp(..) => self.err(e, "syntax", "comparisons are only allowed as the condition of select".into()),
            ExprKind::Call(name, args) => self.call(e, name, args),
        }
    }

    fn call(&mut self, e: &Expr, name: &str, args: &[Expr]) -> Option<Ty> {
        let (lo, hi) = arity(name);
        if args.len() < lo || args.len() > hi {
            let want = match (lo, hi) {
                (a, b) if a == b => format!("exactly {a}"),
                (a, usize::MAX) => format!("at least {a}"),
                (a, b) => format!("{a} to {b}"),
            };
            // Still look inside the arguments for further problems.
            for a in args {
                if !matches!(a.kind, ExprKind::Cmp(..)) {
                    self.infer(a);
                }
            }
            return self.err(e, "arity", format!("`{name}` takes {want} arguments, got {}", args.len()));
        }
        match name {
            "constant" => {
                if static_value(&args[0], self.program, false).is_none() {
                    return self.err(&args[0], "constant", "constant takes a number literal".into());
                }
                Some(Ty { shape: Shape::Scalar, constant: true })
            }
            "clamp" => {
                let x = self.infer(&args[0]);
                let mut bounds = [0.0; 2];
                for (k, b) in args[1..].iter().enumerate() {
                    match static_value(b, self.program, true) {
                        Some(v) => bounds[k] = v,
                        None => {
                            self.err(b, "clamp-bound", "clamp bounds must be numbers or frozen parameters".into());
                        }
                    }
                }
                if bounds[0] > bounds[1] {
                    self.err(e, "clamp-bound", format!("clamp lower bound {} exceeds upper bound {}", bounds[0], bounds[1]));
                }
                x
            }
            "select" => {
                let cond = match &args[0].kind {
                    ExprKind::Cmp(_, a, b) => {
                        let (ta, tb) = (self.infer(a), self.infer(b));
                        self.additive(&args[0], &[ta?, tb?])
                    }
                    _ => self.infer(&args[0]),
                };
                let (t, f) = (self.infer(&args[1]), self.infer(&args[2]));
                self.additive(e, &[cond?, t?, f?])
            }
            "mean" => {
                let t = self.infer(&args[0])?;
                match t.shape {
                    Shape::Vector(n) if n > 0 => Some(Ty { shape: Shape::Scalar, constant: t.constant }),
                    s => self.err(e, "shape", format!("mean needs a vector, got {s}")),
                }
            }
            "stack" => {
                let tys: Vec<Option<Ty>> = args.iter().map(|a| self.infer(a)).collect();
                let tys: Vec<Ty> = tys.into_iter().collect::<Option<_>>()?;
                if let Some(bad) = tys.iter().find(|t| !t.shape.is_scalar()) {
                    return self.err(e, "shape", format!("stack takes scalars, got {}", bad.shape));
                }
                Some(Ty { shape: Shape::Vector(tys.len()), constant: tys.iter().all(|t| t.constant) })
            }
            "product" => {
                let tys: Vec<Option<Ty>> = args.iter().map(|a| self.infer(a)).collect();
                let tys: Vec<Ty> = tys.into_iter().collect::<Option<_>>()?;
                self.multiplicative(e, &tys)
            }
            "sum" | "min" | "max" => {
                let tys: Vec<Option<Ty>> = args.iter().map(|a| self.infer(a)).collect();
                let tys: Vec<Ty> = tys.into_iter().collect::<Option<_>>()?;
                self.additive(e, &tys)
            }
            _ => self.infer(&args[0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn rules(src: &str, schema: &ObservationSchema) -> Vec<&'static str> {
        check(&parse(src).unwrap(), schema).iter().map(|d| d.rule).collect()
    }

    #[test]
    fn racing_clip_conventions_pass() {
        let src = "obs tile_x [8]\nobs speed\nparam k = 0.3\n\
                   action steer = k * mean(tile_x) clip(-1, 1)\n\
                   action accelerate = 0.5 - speed clip(0, 1)\n\
                   action brake = relu(speed - 0.8) clip(0, 1)\n";
        assert!(rules(src, &ObservationSchema::racing()).is_empty());
    }

    #[test]
    fn wrong_clip_for_a_known_action() {
        let src = "obs speed\naction brake = speed clip(-1, 1)\n";
        assert_eq!(rules(src, &ObservationSchema::racing()), vec!["clip-range"]);
    }

    #[test]
    fn unfrozen_param_out_of_bounds_warns() {
        let d = check(&parse("param a = 0.9\nparam b = 0.9 frozen\n").unwrap(), &ObservationSchema::open());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].rule, "param-bound");
        assert!(!d[0].is_error());
    }

    #[test]
    fn scalar_plus_vector_needs_reduction() {
        let src = "obs v\nobs xs [8]\nnode a = v + xs\nnode b = v + mean(xs)\nnode c = 0.5 + xs\n";
        assert_eq!(rules(src, &ObservationSchema::open()), vec!["shape"]);
    }

    #[test]
    fn all_problems_are_reported() {
        let src = "obs v\nobs xs [8]\nparam p = 0.1\nnode a = relu(v, v)\nnode b = clamp(v, p, 1)\naction c = xs clip(1, 0)\n";
        assert_eq!(rules(src, &ObservationSchema::open()), vec!["arity", "clamp-bound", "shape", "clip-range"]);
    }

    #[test]
    fn unknown_observation_on_closed_schema() {
        assert_eq!(rules("obs altitude\n", &ObservationSchema::racing()), vec!["unknown-observation"]);
        assert_eq!(rules("obs speed [8]\n", &ObservationSchema::racing()), vec!["observation-shape"]);
    }

    #[test]
    fn constant_actions_are_unreachable() {
        let src = "obs v\nparam p = 0.1\nnode k = p + 1\naction a = k clip(0, 1)\naction b = k * v clip(0, 1)\n";
        assert_eq!(rules(src, &ObservationSchema::open()), vec!["unreachable-action"]);
    }
}
