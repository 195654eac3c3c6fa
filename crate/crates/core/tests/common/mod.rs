//! Random program and graph generators plus the reference interpreter shared by
//! the property suites and the acceptance runner.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use structpolicy::graph::{
    backward, evaluate, EdgeWeight, FeatureNode, NodeRef, OpKind, OperatorNode, PolicyStructure, Shape,
    WeightVector, WeightedEdge,
};
use structpolicy::pgdl::{compile_source, BinOp, CmpOp, DeclKind, Expr, ExprKind, Program};
use structpolicy::policy::PolicyModel;
use structpolicy::sim::{
    generate_track, run_rollout, ObservationSchema, ScriptedDriver, StartConfig, DEFAULT_CUTOFF_STEPS, TRACK_TILES,
};
use structpolicy::trainer::{Dataset, DemoSource, Demonstration, Frame, NormalizationSpec};

// ---------------------------------------------------------------------------
// Random well-typed PGDL

#[derive(Clone, Copy, PartialEq)]
enum Ty {
    S,
    V(usize),
}

struct Gen {
    rng: ChaCha8Rng,
    /// Observed or computed values by shape.
    values: Vec<(String, Ty)>,
    params: Vec<String>,
    observed_scalars: Vec<String>,
}

impl Gen {
    fn num(&mut self) -> String {
        let v: f64 = (self.rng.gen_range(-300..=300) as f64) / 100.0;
        if v < 0.0 {
            format!("({v})")
        } else {
            format!("{v}")
        }
    }

    fn constant_scalar(&mut self) -> String {
        if !self.params.is_empty() && self.rng.gen_bool(0.5) {
            self.params.choose(&mut self.rng).unwrap().clone()
        } else {
            self.num()
        }
    }

    fn leaf(&mut self, ty: Ty, depth: u32) -> String {
        let names: Vec<String> = self.values.iter().filter(|(_, t)| *t == ty).map(|(n, _)| n.clone()).collect();
        match ty {
            Ty::S => {
                if !names.is_empty() && self.rng.gen_bool(0.6) {
                    names.choose(&mut self.rng).unwrap().clone()
                } else {
                    self.constant_scalar()
                }
            }
            Ty::V(n) => {
                if !names.is_empty() && (depth == 0 || self.rng.gen_bool(0.7)) {
                    names.choose(&mut self.rng).unwrap().clone()
                } else {
                    let parts: Vec<String> = (0..n).map(|_| self.expr(Ty::S, depth.saturating_sub(1))).collect();
                    format!("stack({})", parts.join(", "))
                }
            }
        }
    }

    fn expr(&mut self, ty: Ty, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.25) {
            return self.leaf(ty, depth);
        }
        let d = depth - 1;
        let choice = self.rng.gen_range(0..12);
        match choice {
            0 | 1 => {
                let op = if choice == 0 { "+" } else { "-" };
                let a = self.expr(ty, d);
                let b = if self.rng.gen_bool(0.5) { self.expr(ty, d) } else { self.constant_scalar() };
                if self.rng.gen_bool(0.5) {
                    format!("({a} {op} {b})")
                } else {
                    format!("({b} {op} {a})")
                }
            }
            2 => {
                let (a, b) = (self.expr(ty, d), self.expr(Ty::S, d));
                format!("({a} * {b})")
            }
            3 => {
                let f = ["relu", "abs", "square", "negate"].choose(&mut self.rng).unwrap();
                format!("{f}({})", self.expr(ty, d))
            }
            4 => format!("-{}", self.leaf(ty, d)),
            5 => {
                let lo: f64 = self.rng.gen_range(-20..=0) as f64 / 10.0;
                let hi = lo + self.rng.gen_range(1..=20) as f64 / 10.0;
                format!("clamp({}, {lo}, {hi})", self.expr(ty, d))
            }
            6 => {
                let f = ["sum", "min", "max"].choose(&mut self.rng).unwrap();
                let n = self.rng.gen_range(1..=3) + usize::from(*f != "sum");
                let args: Vec<String> = (0..n).map(|_| self.expr(ty, d)).collect();
                format!("{f}({})", args.join(", "))
            }
            7 => format!("product({}, {})", self.expr(ty, d), self.expr(Ty::S, d)),
            8 => {
                let cmp = if self.rng.gen_bool(0.5) { "<" } else { ">" };
                let (a, b) = (self.expr(ty, d), self.expr(ty, d));
                format!("select({a} {cmp} {b}, {}, {})", self.expr(ty, d), self.expr(ty, d))
            }
            9 => format!("select({}, {}, {})", self.expr(ty, d), self.expr(ty, d), self.expr(ty, d)),
            _ => match ty {
                Ty::S if choice == 10 => {
                    let n = self.rng.gen_range(2..=3);
                    format!("mean({})", self.expr(Ty::V(n), d))
                }
                Ty::S => format!("constant({})", self.num()),
                Ty::V(n) => {
                    let parts: Vec<String> = (0..n).map(|_| self.expr(Ty::S, d)).collect();
                    format!("stack({})", parts.join(", "))
                }
            },
        }
    }

    fn observed_scalar(&mut self) -> String {
        self.observed_scalars.choose(&mut self.rng).unwrap().clone()
    }
}

/// A random program that passes `check` on the open schema.
pub fn random_program(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        values: Vec::new(),
        params: Vec::new(),
        observed_scalars: Vec::new(),
    };
    let mut out = String::new();
    for i in 0..g.rng.gen_range(1..=3) {
        let name = format!("o{i}");
        if g.rng.gen_bool(0.5) {
            out.push_str(&format!("obs {name}\n"));
            g.observed_scalars.push(name.clone());
            g.values.push((name, Ty::S));
        } else {
            let n = g.rng.gen_range(2..=3);
            out.push_str(&format!("obs {name} [{n}]\n"));
            g.observed_scalars.push(format!("mean({name})"));
            g.values.push((name, Ty::V(n)));
        }
    }
    for i in 0..g.rng.gen_range(0..=3) {
        let name = format!("p{i}");
        let v = g.rng.gen_range(-50..=50) as f64 / 100.0;
        let frozen = if g.rng.gen_bool(0.3) { " frozen" } else { "" };
        out.push_str(&format!("param {name} = {v}{frozen}\n"));
        g.params.push(name);
    }
    for i in 0..g.rng.gen_range(0..=4) {
        let name = format!("n{i}");
        let ty = if g.rng.gen_bool(0.7) { Ty::S } else { Ty::V(g.rng.gen_range(2..=3)) };
        let e = g.expr(ty, 3);
        if g.rng.gen_bool(0.3) {
            out.push_str(&format!("# node {i}\n"));
        }
        out.push_str(&format!("node {name} = {e}\n"));
        g.values.push((name, ty));
    }
    for i in 0..g.rng.gen_range(1..=2) {
        let (e, o) = (g.expr(Ty::S, 3), g.observed_scalar());
        out.push_str(&format!("action a{i} = {e} + {o} clip(-1, 1)\n"));
    }
    out
}

/// Random edits of a valid program: deletions, duplications and character
/// swaps, plus occasional raw noise.
pub fn mangled_program(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut chars: Vec<char> = random_program(seed).chars().collect();
    const NOISE: &[char] = &['(', ')', ',', '#', '=', '[', ']', '\n', '-', '*', '<', '.', 'e', '9', ' ', 'é', '\t', '\0'];
    for _ in 0..rng.gen_range(1..=8) {
        if chars.is_empty() {
            break;
        }
        let i = rng.gen_range(0..chars.len());
        match rng.gen_range(0..4) {
            0 => {
                chars.remove(i);
            }
            1 => chars.insert(i, *NOISE.choose(&mut rng).unwrap()),
            2 => {
                let j = rng.gen_range(0..chars.len());
                chars.swap(i, j);
            }
            _ => {
                let end = (i + rng.gen_range(1..20)).min(chars.len());
                let piece: Vec<char> = chars[i..end].to_vec();
                let at = rng.gen_range(0..=chars.len());
                chars.splice(at..at, piece);
            }
        }
    }
    chars.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Reference interpreter over the syntax tree

/// Evaluates a checked program directly from its syntax tree. Observations are
/// laid out in declaration order. Returns the raw action values, or `None` if
/// a `select` condition sits too close to its switching point for a
/// comparison against another implementation to be meaningful.
pub fn interpret(program: &Program, obs: &[f64]) -> Option<Vec<f64>> {
    let mut env: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut slot = 0;
    let mut actions = Vec::new();
    let mut near_tie = false;
    for d in &program.decls {
        match &d.kind {
            DeclKind::Obs { len } => {
                let n = len.unwrap_or(1);
                env.insert(&d.name, obs[slot..slot + n].to_vec());
                slot += n;
            }
            DeclKind::Param { value, .. } => {
                env.insert(&d.name, vec![*value]);
            }
            DeclKind::Node { expr } => {
                let v = eval_expr(expr, &env, &mut near_tie);
                env.insert(&d.name, v);
            }
            DeclKind::Action { expr, .. } => actions.push(eval_expr(expr, &env, &mut near_tie)[0]),
        }
    }
    (!near_tie).then_some(actions)
}

fn zip(xs: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let n = xs.iter().map(Vec::len).max().unwrap_or(1);
    (0..n)
        .map(|k| {
            let row: Vec<f64> = xs.iter().map(|x| if x.len() == 1 { x[0] } else { x[k] }).collect();
            f(&row)
        })
        .collect()
}

/// Exact zeros are fine: both sides compute them the same way (equal operands,
/// clipped relus). Tiny non-zero margins may flip under reassociation.
fn near_switch(margin: f64) -> bool {
    margin != 0.0 && margin.abs() < 1e-7
}

fn eval_expr(e: &Expr, env: &HashMap<&str, Vec<f64>>, tie: &mut bool) -> Vec<f64> {
    let mut ev = |x: &Expr| eval_expr(x, env, tie);
    match &e.kind {
        ExprKind::Num(v) => vec![*v],
        ExprKind::Name(n) => env[n.as_str()].clone(),
        ExprKind::Neg(x) => ev(x).iter().map(|v| -v).collect(),
        ExprKind::Bin(op, a, b) => {
            let (a, b) = (ev(a), ev(b));
            zip(&[a, b], |r| match op {
                BinOp::Add => r[0] + r[1],
                BinOp::Sub => r[0] - r[1],
                BinOp::Mul => r[0] * r[1],
            })
        }
        ExprKind::Cmp(..) => unreachable!("comparisons only appear inside select"),
        ExprKind::Call(name, args) => {
            let map = |v: Vec<f64>, f: fn(f64) -> f64| v.into_iter().map(f).collect::<Vec<_>>();
            match name.as_str() {
                "constant" => ev(&args[0]),
                "negate" => map(ev(&args[0]), |v| -v),
                "relu" => map(ev(&args[0]), |v| v.max(0.0)),
                "abs" => map(ev(&args[0]), f64::abs),
                "square" => map(ev(&args[0]), |v| v * v),
                "clamp" => {
                    let (x, lo, hi) = (ev(&args[0]), ev(&args[1])[0], ev(&args[2])[0]);
                    x.into_iter().map(|v| v.clamp(lo, hi)).collect()
                }
                "mean" => {
                    let x = ev(&args[0]);
                    vec![x.iter().sum::<f64>() / x.len() as f64]
                }
                "stack" => args.iter().map(|a| ev(a)[0]).collect(),
                "sum" | "min" | "max" | "product" => {
                    let xs: Vec<Vec<f64>> = args.iter().map(&mut ev).collect();
                    zip(&xs, |r| match name.as_str() {
                        "sum" => r.iter().sum(),
                        "product" => r.iter().product(),
                        "min" => r.iter().copied().fold(f64::INFINITY, f64::min),
                        _ => r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    })
                }
                "select" => {
                    let cond: Vec<f64> = match &args[0].kind {
                        ExprKind::Cmp(op, l, r) => {
                            let (l, r) = (ev(l), ev(r));
                            zip(&[l, r], |p| {
                                if near_switch(p[0] - p[1]) {
                                    f64::NAN
                                } else if (*op == CmpOp::Lt && p[0] < p[1]) || (*op == CmpOp::Gt && p[0] > p[1]) {
                                    1.0
                                } else {
                                    -1.0
                                }
                            })
                        }
                        _ => ev(&args[0]).into_iter().map(|c| if near_switch(c) { f64::NAN } else { c }).collect(),
                    };
                    let near = cond.iter().any(|c| c.is_nan());
                    let (t, f) = (ev(&args[1]), ev(&args[2]));
                    if near {
                        *tie = true;
                    }
                    zip(&[cond, t, f], |r| if r[0] > 0.0 { r[1] } else { r[2] })
                }
                other => panic!("operator {other} is not in the closed set"),
            }
        }
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// Random graphs around one operator kind

pub const OP_KINDS: [&str; 13] =
    ["constant", "sum", "product", "negate", "relu", "abs", "clamp", "min", "max", "select", "square", "mean", "stack"];

pub struct OpGraph {
    pub structure: PolicyStructure,
    pub weights: WeightVector,
    pub observation: Vec<f64>,
    /// Index of the operator under test.
    pub op: usize,
}

/// Observation layout: scalar at 0, three-vector at 1..4, scalar at 4.
pub fn random_op_graph(kind: &str, seed: u64) -> OpGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = vec![
        FeatureNode::observed("x0", Shape::Scalar, vec![0]),
        FeatureNode::observed("v", Shape::Vector(3), vec![1, 2, 3]),
        FeatureNode::observed("x1", Shape::Scalar, vec![4]),
    ];
    let mut operators = Vec::new();
    let mut edges = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let learnable = |rng: &mut ChaCha8Rng, weights: &mut Vec<f64>| {
        // Occasionally share an existing weight between edges.
        if !weights.is_empty() && rng.gen_bool(0.15) {
            EdgeWeight::Learnable(rng.gen_range(0..weights.len()))
        } else {
            weights.push(rng.gen_range(-1.5..1.5));
            EdgeWeight::Learnable(weights.len() - 1)
        }
    };
    let scalar = |rng: &mut ChaCha8Rng| NodeRef::Feature(if rng.gen_bool(0.5) { 0 } else { 2 });
    let any = |rng: &mut ChaCha8Rng| NodeRef::Feature(rng.gen_range(0..3));

    let op = match kind {
        "constant" => OpKind::Constant(rng.gen_range(-2.0..2.0)),
        "sum" => OpKind::Sum,
        "product" => OpKind::Product,
        "negate" => OpKind::Negate,
        "relu" => OpKind::Relu,
        "abs" => OpKind::Abs,
        "clamp" => {
            let lo = rng.gen_range(-1.5..0.5);
            OpKind::Clamp { lo, hi: lo + rng.gen_range(0.2..2.0) }
        }
        "min" => OpKind::Min,
        "max" => OpKind::Max,
        "select" => OpKind::Select,
        "square" => OpKind::Square,
        "mean" => OpKind::Mean,
        "stack" => OpKind::Stack,
        other => panic!("unknown operator {other}"),
    };
    let sources: Vec<NodeRef> = match op {
        OpKind::Constant(_) => vec![],
        OpKind::Mean => vec![NodeRef::Feature(1)],
        OpKind::Stack => (0..rng.gen_range(2..=4)).map(|_| scalar(&mut rng)).collect(),
        OpKind::Select => (0..3).map(|_| any(&mut rng)).collect(),
        OpKind::Sum | OpKind::Product | OpKind::Min | OpKind::Max => {
            let lo = if matches!(op, OpKind::Sum) { 1 } else { 2 };
            (0..rng.gen_range(lo..=4)).map(|_| any(&mut rng)).collect()
        }
        _ => vec![any(&mut rng)],
    };
    let target = operators.len();
    operators.push(OperatorNode::new(op));
    for s in &sources {
        let w = learnable(&mut rng, &mut weights);
        edges.push(WeightedEdge::new(*s, NodeRef::Operator(target), w));
    }
    let shapes: Vec<Shape> = sources
        .iter()
        .map(|s| match s {
            NodeRef::Feature(1) => Shape::Vector(3),
            _ => Shape::Scalar,
        })
        .collect();
    let out_shape = match op {
        OpKind::Constant(_) | OpKind::Mean => Shape::Scalar,
        OpKind::Stack => Shape::Vector(sources.len()),
        _ if shapes.iter().any(|s| !s.is_scalar()) => Shape::Vector(3),
        _ => Shape::Scalar,
    };
    features.push(FeatureNode::latent("out", out_shape));
    let w = learnable(&mut rng, &mut weights);
    edges.push(WeightedEdge::new(NodeRef::Operator(target), NodeRef::Feature(3), w));

    let mut scalar_out = 3;
    if !out_shape.is_scalar() {
        operators.push(OperatorNode::new(OpKind::Mean));
        let w = learnable(&mut rng, &mut weights);
        edges.push(WeightedEdge::new(NodeRef::Feature(3), NodeRef::Operator(1), w));
        features.push(FeatureNode::latent("out_mean", Shape::Scalar));
        edges.push(WeightedEdge::new(NodeRef::Operator(1), NodeRef::Feature(4), EdgeWeight::Fixed(1.0)));
        scalar_out = 4;
    }
    let head = operators.len();
    operators.push(OperatorNode::new(OpKind::Sum));
    let w = learnable(&mut rng, &mut weights);
    edges.push(WeightedEdge::new(NodeRef::Feature(scalar_out), NodeRef::Operator(head), w));
    let w = learnable(&mut rng, &mut weights);
    edges.push(WeightedEdge::new(NodeRef::Feature(2), NodeRef::Operator(head), w));
    let action = features.len();
    features.push(FeatureNode::action("a", None));
    let w = learnable(&mut rng, &mut weights);
    edges.push(WeightedEdge::new(NodeRef::Operator(head), NodeRef::Feature(action), w));

    let observation = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    OpGraph { structure: PolicyStructure::new(features, operators, edges), weights: WeightVector::new(weights), observation, op: target }
}

/// Distance of the operator under test from its nearest non-smooth point.
pub fn kink_distance(g: &OpGraph) -> f64 {
    let (_, trace) = evaluate(&g.structure, &g.weights, &g.observation).expect("graph evaluates");
    let op = g.structure.operators()[g.op].op;
    let ins: Vec<&Vec<f64>> = g.structure.inputs_of(NodeRef::Operator(g.op)).iter().map(|&e| &trace.edge_values[e]).collect();
    let at = |x: &Vec<f64>, k: usize| if x.len() == 1 { x[0] } else { x[k] };
    let n = ins.iter().map(|x| x.len()).max().unwrap_or(1);
    let mut d = f64::INFINITY;
    for k in 0..n {
        match op {
            OpKind::Relu | OpKind::Abs => d = d.min(at(ins[0], k).abs()),
            OpKind::Clamp { lo, hi } => d = d.min((at(ins[0], k) - lo).abs()).min((at(ins[0], k) - hi).abs()),
            OpKind::Select => d = d.min(at(ins[0], k).abs()),
            OpKind::Min | OpKind::Max => {
                for i in 0..ins.len() {
                    for j in i + 1..ins.len() {
                        d = d.min((at(ins[i], k) - at(ins[j], k)).abs());
                    }
                }
            }
            _ => {}
        }
    }
    d
}

/// Largest relative disagreement between reverse-mode and central differences.
pub fn gradient_error(g: &OpGraph) -> f64 {
    let (_, trace) = evaluate(&g.structure, &g.weights, &g.observation).expect("graph evaluates");
    let grad = backward(&g.structure, &g.weights, &trace, &[1.0]).expect("backward runs");
    let f = |w: &WeightVector| evaluate(&g.structure, w, &g.observation).unwrap().0[0];
    let mut worst: f64 = 0.0;
    for i in 0..g.weights.len() {
        let h = 1e-6 * g.weights.values[i].abs().max(1.0);
        let (mut up, mut down) = (g.weights.clone(), g.weights.clone());
        up.values[i] += h;
        down.values[i] -= h;
        let fd = (f(&up) - f(&down)) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

// ---------------------------------------------------------------------------
// Training data

pub const SPEED_PROGRAM: &str = "\
obs speed
param target = 0.3
param gain = 1.5 frozen
action accelerate = gain * relu(target - speed) clip(0, 1)
action brake = gain * relu(speed - target) clip(0, 1)
";

pub fn speed_norm() -> NormalizationSpec {
    NormalizationSpec { center: vec![0.0], half_range: vec![100.0] }
}

pub fn speed_model(target: f64) -> PolicyModel {
    let (mut c, _) = compile_source(SPEED_PROGRAM, &ObservationSchema::open()).unwrap();
    c.weights.values[0] = target;
    PolicyModel::Structured(Box::new(c))
}

/// 2000 frames labelled by the same controller with its target at 60.
pub fn speed_demos() -> Demonstration {
    let truth = speed_model(0.6);
    let names = vec!["accelerate".to_string(), "brake".to_string()];
    let cols = truth.columns(&names);
    let frames = (0..2000)
        .map(|i| {
            let speed = 120.0 * i as f64 / 1999.0;
            let action = truth.act(&speed_norm().normalize(&[speed]), &cols).unwrap();
            Frame { obs: vec![speed], action }
        })
        .collect();
    Demonstration::new("speed", DemoSource::Policy, names, frames)
}

pub fn scripted_dataset() -> Dataset {
    let demos: Vec<Demonstration> = (0..4)
        .map(|seed| {
            let track = generate_track(seed, TRACK_TILES).unwrap();
            let rec = run_rollout(&ScriptedDriver::default(), &track, &StartConfig::nominal(), None, DEFAULT_CUTOFF_STEPS)
                .unwrap();
            Demonstration::from_rollout(format!("s{seed}"), DemoSource::Human, &rec)
        })
        .collect();
    Dataset::from_demos(&demos, &NormalizationSpec::racing()).unwrap()
}

