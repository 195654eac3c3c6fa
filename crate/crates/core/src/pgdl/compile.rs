use std::collections::{BTreeMap, HashMap};

use super::ast::{BinOp, CmpOp, DeclKind, Expr, ExprKind, Program};
use super::check::{check, static_value};
use super::{parse, Diagnostic, Span};
use crate::graph::validate::op_shape;
use crate::graph::{
    EdgeWeight, FeatureNode, NodeRef, OpKind, OperatorNode, PolicyStructure, Shape, WeightVector,
    WeightedEdge,
};
use crate::sim::ObservationSchema;

/// Name of the shared constant-one feature used for biases inside operators.
pub const ONE_FEATURE: &str = "#one";

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledPolicy {
    pub program: Program,
    pub structure: PolicyStructure,
    pub weights: WeightVector,
    pub param_names: Vec<String>,
    /// Comment text attached to declarations, keyed by feature name.
    pub hints: BTreeMap<String, String>,
}

impl CompiledPolicy {
    /// Canonical PGDL with parameters set to `weights`.
    pub fn to_source(&self, weights: &WeightVector) -> String {
        self.program.with_param_values(&weights.values).to_string()
    }
}

/// Parses, checks and compiles in one go. Warnings are returned alongside the result.
pub fn compile_source(
    src: &str,
    schema: &ObservationSchema,
) -> Result<(CompiledPolicy, Vec<Diagnostic>), Vec<Diagnostic>> {
    let program = parse(src)?;
    compile(&program, schema)
}

pub fn compile(
    program: &Program,
    schema: &ObservationSchema,
) -> Result<(CompiledPolicy, Vec<Diagnostic>), Vec<Diagnostic>> {
    let diags = check(program, schema);
    if diags.iter().any(Diagnostic::is_error) {
        return Err(diags);
    }
    let mut b = Builder::new(program);
    let mut next_slot = 0usize;
    let mut hints = BTreeMap::new();
    for d in &program.decls {
        b.decl = d.name.clone();
        b.anon = 0;
        if !d.comments.is_empty() {
            hints.insert(d.name.clone(), d.comments.join(" "));
        }
        match &d.kind {
            DeclKind::Obs { len } => {
                let shape = len.map_or(Shape::Scalar, Shape::Vector);
                let binding = match schema.get(&d.name) {
                    Some(entry) if !schema.open => entry.indices.clone(),
                    _ => {
                        let n = shape.len();
                        next_slot += n;
                        (next_slot - n..next_slot).collect()
                    }
                };
                let f = b.feature(FeatureNode::observed(d.name.clone(), shape, binding));
                b.names.insert(d.name.clone(), f);
            }
            DeclKind::Param { .. } => {}
            DeclKind::Node { expr } => {
                let terms = b.lower(expr);
                let f = b.feature(FeatureNode::latent(d.name.clone(), Shape::Scalar));
                b.connect_terms(terms, NodeRef::Feature(f));
                b.features[f].shape = b.incoming_shape(f);
                b.names.insert(d.name.clone(), f);
            }
            DeclKind::Action { expr, clip } => {
                let terms = b.lower(expr);
                let f = b.feature(FeatureNode::action(d.name.clone(), Some(*clip)));
                b.connect_terms(terms, NodeRef::Feature(f));
            }
        }
    }
    let structure = PolicyStructure::new(b.features, b.operators, b.edges);
    let bad = structure.validate();
    if !bad.is_empty() {
        return Err(bad
            .into_iter()
            .map(|s| Diagnostic::error(Span::default(), s.rule.id(), s.to_string()))
            .collect());
    }
    let (values, frozen): (Vec<f64>, Vec<bool>) = program.params().map(|(_, v, f)| (v, f)).unzip();
    let param_names = program.params().map(|(n, _, _)| n.to_string()).collect();
    Ok((
        CompiledPolicy {
            program: program.clone(),
            structure,
            weights: WeightVector::with_frozen(values, frozen),
            param_names,
            hints,
        },
        diags,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Src {
    Node(NodeRef),
    /// The constant 1.
    One,
}

/// Edge multiplier: an optional learnable parameter times a fixed scale.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Coef {
    param: Option<usize>,
    scale: f64,
}

impl Coef {
    const UNIT: Coef = Coef { param: None, scale: 1.0 };

    fn fits_one_edge(self) -> bool {
        self.param.is_none() || self.scale == 1.0
    }

    fn weight(self) -> EdgeWeight {
        match self.param {
            Some(p) => EdgeWeight::Learnable(p),
            None => EdgeWeight::Fixed(self.scale),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    src: Src,
    coef: Coef,
}

/// Lowers expressions to weighted sums of node outputs, inserting operators and
/// latent features so the graph stays bipartite and each edge carries one weight.
struct Builder<'a> {
    program: &'a Program,
    features: Vec<FeatureNode>,
    operators: Vec<OperatorNode>,
    edges: Vec<WeightedEdge>,
    names: HashMap<String, usize>,
    params: HashMap<String, usize>,
    one: Option<usize>,
    decl: String,
    anon: usize,
}

impl<'a> Builder<'a> {
    fn new(program: &'a Program) -> Self {
        let params = program.params().enumerate().map(|(i, (n, _, _))| (n.to_string(), i)).collect();
        Self {
            program,
            features: Vec::new(),
            operators: Vec::new(),
            edges: Vec::new(),
            names: HashMap::new(),
            params,
            one: None,
            decl: String::new(),
            anon: 0,
        }
    }

    fn feature(&mut self, f: FeatureNode) -> usize {
        self.features.push(f);
        self.features.len() - 1
    }

    fn operator(&mut self, op: OpKind) -> usize {
        self.operators.push(OperatorNode::new(op));
        self.operators.len() - 1
    }

    fn edge(&mut self, src: NodeRef, dst: NodeRef, w: EdgeWeight) {
        self.edges.push(WeightedEdge::new(src, dst, w));
    }

    fn anon_latent(&mut self, shape: Shape) -> usize {
        self.anon += 1;
        let name = format!("{}#{}", self.decl, self.anon);
        self.feature(FeatureNode::latent(name, shape))
    }

    fn one_feature(&mut self) -> usize {
        if let Some(f) = self.one {
            return f;
        }
        let c = self.operator(OpKind::Constant(1.0));
        let f = self.feature(FeatureNode::latent(ONE_FEATURE, Shape::Scalar));
        self.edge(NodeRef::Operator(c), NodeRef::Feature(f), EdgeWeight::Fixed(1.0));
        self.one = Some(f);
        f
    }

    fn shape_of(&self, n: NodeRef) -> Shape {
        match n {
            NodeRef::Feature(f) => self.features[f].shape,
            NodeRef::Operator(p) => {
                let ins: Vec<Shape> = self
                    .edges
                    .iter()
                    .filter(|e| e.target == n)
                    .map(|e| self.shape_of(e.source))
                    .collect();
                op_shape(self.operators[p].op, &ins).unwrap_or(Shape::Scalar)
            }
        }
    }

    fn incoming_shape(&self, f: usize) -> Shape {
        self.edges
            .iter()
            .find(|e| e.target == NodeRef::Feature(f))
            .map_or(Shape::Scalar, |e| self.shape_of(e.source))
    }

    fn lower(&mut self, e: &Expr) -> Vec<Term> {
        match &e.kind {
            ExprKind::Num(v) => vec![Term { src: Src::One, coef: Coef { param: None, scale: *v } }],
            ExprKind::Name(n) => match self.params.get(n) {
                Some(&p) => vec![Term { src: Src::One, coef: Coef { param: Some(p), scale: 1.0 } }],
                None => vec![Term { src: Src::Node(NodeRef::Feature(self.names[n])), coef: Coef::UNIT }],
            },
            ExprKind::Neg(inner) => {
                let t = self.lower(inner);
                self.scale(Coef { param: None, scale: -1.0 }, t)
            }
            ExprKind::Bin(BinOp::Add, a, b) => {
                let mut t = self.lower(a);
                t.extend(self.lower(b));
                t
            }
            ExprKind::Bin(BinOp::Sub, a, b) => {
                let mut t = self.lower(a);
                let r = self.lower(b);
                t.extend(self.scale(Coef { param: None, scale: -1.0 }, r));
                t
            }
            ExprKind::Bin(BinOp::Mul, a, b) => {
                let (l, r) = (self.lower(a), self.lower(b));
                match (as_coef(&l), as_coef(&r)) {
                    (Some(c), _) => self.scale(c, r),
                    (None, Some(c)) => self.scale(c, l),
                    (None, None) => {
                        let p = self.operator(OpKind::Product);
                        self.connect_terms(l, NodeRef::Operator(p));
                        self.connect_terms(r, NodeRef::Operator(p));
                        vec![Term { src: Src::Node(NodeRef::Operator(p)), coef: Coef::UNIT }]
                    }
                }
            }
            ExprKind::Cmp(op, a, b) => {
                // Truthy when positive: a > b  ⇔  a - b > 0.
                let (pos, neg) = match op {
                    CmpOp::Gt => (a, b),
                    CmpOp::Lt => (b, a),
                };
                let mut t = self.lower(pos);
                let r = self.lower(neg);
                t.extend(self.scale(Coef { param: None, scale: -1.0 }, r));
                t
            }
            ExprKind::Call(name, args) => self.call(name, args),
        }
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Vec<Term> {
        let op = match name {
            "constant" => OpKind::Constant(static_value(&args[0], self.program, false).unwrap_or(0.0)),
            "sum" => OpKind::Sum,
            "product" => OpKind::Product,
            "negate" => OpKind::Negate,
            "relu" => OpKind::Relu,
            "abs" => OpKind::Abs,
            "clamp" => OpKind::Clamp {
                lo: static_value(&args[1], self.program, true).unwrap_or(f64::NEG_INFINITY),
                hi: static_value(&args[2], self.program, true).unwrap_or(f64::INFINITY),
            },
            "min" => OpKind::Min,
            "max" => OpKind::Max,
            "select" => OpKind::Select,
            "square" => OpKind::Square,
            "mean" => OpKind::Mean,
            "stack" => OpKind::Stack,
            other => unreachable!("parser admits only known operators, got {other}"),
        };
        let p = self.operator(op);
        let inputs: &[Expr] = match op {
            OpKind::Constant(_) => &[],
            OpKind::Clamp { .. } => &args[..1],
            _ => args,
        };
        for a in inputs {
            let t = self.lower(a);
            self.connect_terms(t, NodeRef::Operator(p));
        }
        vec![Term { src: Src::Node(NodeRef::Operator(p)), coef: Coef::UNIT }]
    }

    /// Multiplies a term list by a coefficient, materializing a sum when the
    /// product would need two learnable factors on one edge.
    fn scale(&mut self, c: Coef, terms: Vec<Term>) -> Vec<Term> {
        if c.param.is_none() || terms.len() == 1 && terms[0].coef.param.is_none() {
            return terms
                .into_iter()
                .map(|t| Term {
                    src: t.src,
                    coef: Coef { param: c.param.or(t.coef.param), scale: c.scale * t.coef.scale },
                })
                .collect();
        }
        let s = self.operator(OpKind::Sum);
        for t in terms {
            self.connect(t, NodeRef::Operator(s));
        }
        vec![Term { src: Src::Node(NodeRef::Operator(s)), coef: c }]
    }

    fn connect_terms(&mut self, terms: Vec<Term>, dst: NodeRef) {
        if terms.len() == 1 {
            self.connect(terms[0], dst);
            return;
        }
        let s = self.operator(OpKind::Sum);
        for t in terms {
            self.connect(t, NodeRef::Operator(s));
        }
        self.connect_node(NodeRef::Operator(s), Coef::UNIT, dst);
    }

    fn connect(&mut self, t: Term, dst: NodeRef) {
        let src = match (t.src, dst) {
            (Src::Node(n), _) => n,
            (Src::One, NodeRef::Feature(_)) => NodeRef::Operator(self.operator(OpKind::Constant(1.0))),
            (Src::One, NodeRef::Operator(_)) => NodeRef::Feature(self.one_feature()),
        };
        self.connect_node(src, t.coef, dst);
    }

    fn connect_node(&mut self, src: NodeRef, c: Coef, dst: NodeRef) {
        use NodeRef::{Feature as F, Operator as O};
        let fixed = EdgeWeight::Fixed(c.scale);
        let unit = EdgeWeight::Fixed(1.0);
        match (src, dst) {
            (F(_), F(_)) => {
                let b = O(self.operator(OpKind::Sum));
                if c.fits_one_edge() {
                    self.edge(src, b, c.weight());
                    self.edge(b, dst, unit);
                } else {
                    self.edge(src, b, fixed);
                    self.edge(b, dst, EdgeWeight::Learnable(c.param.unwrap()));
                }
            }
            (O(_), O(_)) => {
                let l = F(self.anon_latent(self.shape_of(src)));
                if c.fits_one_edge() {
                    self.edge(src, l, c.weight());
                    self.edge(l, dst, unit);
                } else {
                    self.edge(src, l, fixed);
                    self.edge(l, dst, EdgeWeight::Learnable(c.param.unwrap()));
                }
            }
            _ if c.fits_one_edge() => self.edge(src, dst, c.weight()),
            (F(_), O(_)) => {
                let b = O(self.operator(OpKind::Sum));
                self.edge(src, b, fixed);
                let l = F(self.anon_latent(self.shape_of(src)));
                self.edge(b, l, EdgeWeight::Learnable(c.param.unwrap()));
                self.edge(l, dst, unit);
            }
            (O(_), F(_)) => {
                let l = F(self.anon_latent(self.shape_of(src)));
                self.edge(src, l, fixed);
                let b = O(self.operator(OpKind::Sum));
                self.edge(l, b, EdgeWeight::Learnable(c.param.unwrap()));
                self.edge(b, dst, unit);
            }
        }
    }
}

fn as_coef(terms: &[Term]) -> Option<Coef> {
    match terms {
        [Term { src: Src::One, coef }] => Some(*coef),
        _ => None,
    }
}
