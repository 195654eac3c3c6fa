//! Sparse differentiable policy graphs.
//!
//! A [`PolicyStructure`] is a bipartite DAG between *feature* nodes (observed,
//! latent, action) and *operator* nodes. Every edge carries a weight, either an
//! index into a [`WeightVector`] or a fixed constant. Evaluation assigns feature
//! values from the observation, pushes `weight * value` along each edge and
//! applies operators to the values of their incoming edges, in edge-list order.

mod dense;
mod eval;
mod ops;
pub(crate) mod validate;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

pub use dense::{DenseGradient, DensePolicy};
pub use eval::{backward, evaluate, EvaluationTrace};
pub use validate::{StructureDiagnostic, StructureRule};

/// Hard cap on `features + operators` in one structure.
pub const MAX_NODES: usize = 256;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("structure is invalid: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidStructure(Vec<StructureDiagnostic>),
    #[error("observation has {got} values but feature `{feature}` reads index {index}")]
    MissingObservation { feature: String, index: usize, got: usize },
    #[error("weight vector has {got} entries, structure references index {index}")]
    WeightIndex { index: usize, got: usize },
    #[error("shape mismatch at {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },
    #[error("trace was not produced by this structure and weight vector")]
    TraceMismatch,
    #[error("action gradient has {got} entries, structure has {expected} actions")]
    GradientWidth { expected: usize, got: usize },
    #[error("dense policy expects {expected} inputs, got {got}")]
    InputWidth { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Scalar,
    Vector(usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_scalar(self) -> bool {
        matches!(self, Shape::Scalar)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => f.write_str("scalar"),
            Shape::Vector(n) => write!(f, "[{n}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// Read from the raw observation at the listed indices.
    Observed { binding: Vec<usize> },
    Latent,
    /// Part of the action vector. `clip` is applied by policy adapters, never
    /// inside evaluation.
    Action { clip: Option<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNode {
    pub name: String,
    pub kind: FeatureKind,
    pub shape: Shape,
}

impl FeatureNode {
    pub fn observed(name: impl Into<String>, shape: Shape, binding: Vec<usize>) -> Self {
        Self { name: name.into(), kind: FeatureKind::Observed { binding }, shape }
    }

    pub fn latent(name: impl Into<String>, shape: Shape) -> Self {
        Self { name: name.into(), kind: FeatureKind::Latent, shape }
    }

    pub fn action(name: impl Into<String>, clip: Option<(f64, f64)>) -> Self {
        Self { name: name.into(), kind: FeatureKind::Action { clip }, shape: Shape::Scalar }
    }

    pub fn is_observed(&self) -> bool {
        matches!(self.kind, FeatureKind::Observed { .. })
    }

    pub fn is_action(&self) -> bool {
        matches!(self.kind, FeatureKind::Action { .. })
    }
}

/// Closed operator set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    Constant(f64),
    Sum,
    Product,
    Negate,
    Relu,
    Abs,
    Clamp { lo: f64, hi: f64 },
    Min,
    Max,
    /// Inputs `(cond, then, else)`; `cond > 0` picks `then`, elementwise.
    Select,
    Square,
    /// Reduces a vector to the mean of its elements.
    Mean,
    /// Packs scalar inputs into a vector.
    Stack,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Constant(_) => "constant",
            OpKind::Sum => "sum",
            OpKind::Product => "product",
            OpKind::Negate => "negate",
            OpKind::Relu => "relu",
            OpKind::Abs => "abs",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Min => "min",
            OpKind::Max => "max",
            OpKind::Select => "select",
            OpKind::Square => "square",
            OpKind::Mean => "mean",
            OpKind::Stack => "stack",
        }
    }

    /// Inclusive bounds on the number of incoming edges.
    pub fn arity(&self) -> (usize, usize) {
        match self {
            OpKind::Constant(_) => (0, 0),
            OpKind::Sum | OpKind::Stack => (1, usize::MAX),
            OpKind::Product | OpKind::Min | OpKind::Max => (2, usize::MAX),
            OpKind::Select => (3, 3),
            OpKind::Negate
            | OpKind::Relu
            | OpKind::Abs
            | OpKind::Clamp { .. }
            | OpKind::Square
            | OpKind::Mean => (1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNode {
    pub op: OpKind,
}

impl OperatorNode {
    pub fn new(op: OpKind) -> Self {
        Self { op }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Feature(usize),
    Operator(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeWeight {
    Learnable(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub source: NodeRef,
    pub target: NodeRef,
    pub weight: EdgeWeight,
}

impl WeightedEdge {
    pub fn new(source: NodeRef, target: NodeRef, weight: EdgeWeight) -> Self {
        Self { source, target, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        let frozen = vec![false; values.len()];
        Self { values, frozen }
    }

    pub fn with_frozen(values: Vec<f64>, frozen: Vec<bool>) -> Self {
        assert_eq!(values.len(), frozen.len(), "frozen mask length");
        Self { values, frozen }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn resolve(&self, weight: EdgeWeight) -> f64 {
        match weight {
            EdgeWeight::Learnable(i) => self.values[i],
            EdgeWeight::Fixed(v) => v,
        }
    }
}

/// Immutable policy graph with cached evaluation plan.
#[derive(Debug, Clone)]
pub struct PolicyStructure {
    features: Vec<FeatureNode>,
    operators: Vec<OperatorNode>,
    edges: Vec<WeightedEdge>,
    feature_inputs: Vec<Vec<usize>>,
    operator_inputs: Vec<Vec<usize>>,
    order: Option<Vec<NodeRef>>,
    operator_shapes: Vec<Option<Shape>>,
    diagnostics: Vec<StructureDiagnostic>,
    fingerprint: u64,
}

impl PartialEq for PolicyStructure {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.operators == other.operators
            && self.edges == other.edges
    }
}

impl PolicyStructure {
    pub fn new(
        features: Vec<FeatureNode>,
        operators: Vec<OperatorNode>,
        edges: Vec<WeightedEdge>,
    ) -> Self {
        let mut s = Self {
            feature_inputs: vec![Vec::new(); features.len()],
            operator_inputs: vec![Vec::new(); operators.len()],
            operator_shapes: vec![None; operators.len()],
            features,
            operators,
            edges,
            order: None,
            diagnostics: Vec::new(),
            fingerprint: 0,
        };
        for (i, e) in s.edges.iter().enumerate() {
            match e.target {
                NodeRef::Feature(f) if f < s.features.len() => s.feature_inputs[f].push(i),
                NodeRef::Operator(p) if p < s.operators.len() => s.operator_inputs[p].push(i),
                _ => {}
            }
        }
        s.diagnostics = validate::run(&mut s);
        s.fingerprint = s.compute_fingerprint();
        s
    }

    pub fn features(&self) -> &[FeatureNode] {
        &self.features
    }

    pub fn operators(&self) -> &[OperatorNode] {
        &self.operators
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    /// Edge indices flowing into `node`, in argument order.
    pub fn inputs_of(&self, node: NodeRef) -> &[usize] {
        match node {
            NodeRef::Feature(i) => &self.feature_inputs[i],
            NodeRef::Operator(i) => &self.operator_inputs[i],
        }
    }

    /// Topological evaluation order, `None` if the graph has a cycle or a dangling edge.
    pub fn order(&self) -> Option<&[NodeRef]> {
        self.order.as_deref()
    }

    pub fn operator_shape(&self, op: usize) -> Option<Shape> {
        self.operator_shapes.get(op).copied().flatten()
    }

    /// Empty iff every structural invariant holds.
    pub fn validate(&self) -> Vec<StructureDiagnostic> {
        self.diagnostics.clone()
    }

    pub fn is_valid(&self) -> bool {
        self.diagnostics.is_empty()
    }

    /// Action feature indices in declaration order.
    pub fn action_indices(&self) -> Vec<usize> {
        self.features.iter().enumerate().filter(|(_, f)| f.is_action()).map(|(i, _)| i).collect()
    }

    pub fn action_names(&self) -> Vec<&str> {
        self.features.iter().filter(|f| f.is_action()).map(|f| f.name.as_str()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// One past the largest learnable weight index referenced by any edge.
    pub fn weight_count(&self) -> usize {
        self.edges
            .iter()
            .filter_map(|e| match e.weight {
                EdgeWeight::Learnable(i) => Some(i + 1),
                EdgeWeight::Fixed(_) => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Clips each action to its declared range.
    pub fn clip_actions(&self, raw: &[f64]) -> Vec<f64> {
        self.action_indices()
            .into_iter()
            .zip(raw)
            .map(|(i, &v)| match self.features[i].kind {
                FeatureKind::Action { clip: Some((lo, hi)) } => v.clamp(lo, hi),
                _ => v,
            })
            .collect()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn node_label(&self, node: NodeRef) -> String {
        match node {
            NodeRef::Feature(i) => match self.features.get(i) {
                Some(f) => format!("feature `{}`", f.name),
                None => format!("feature #{i}"),
            },
            NodeRef::Operator(i) => match self.operators.get(i) {
                Some(p) => format!("operator #{i} ({})", p.op.name()),
                None => format!("operator #{i}"),
            },
        }
    }

    fn compute_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for f in &self.features {
            f.name.hash(&mut h);
            match &f.kind {
                FeatureKind::Observed { binding } => (0u8, binding).hash(&mut h),
                FeatureKind::Latent => 1u8.hash(&mut h),
                FeatureKind::Action { clip } => {
                    2u8.hash(&mut h);
                    clip.map(|(a, b)| (a.to_bits(), b.to_bits())).hash(&mut h);
                }
            }
            f.shape.hash(&mut h);
        }
        for p in &self.operators {
            p.op.name().hash(&mut h);
            match p.op {
                OpKind::Constant(c) => c.to_bits().hash(&mut h),
                OpKind::Clamp { lo, hi } => (lo.to_bits(), hi.to_bits()).hash(&mut h),
                _ => {}
            }
        }
        for e in &self.edges {
            e.source.hash(&mut h);
            e.target.hash(&mut h);
            match e.weight {
                EdgeWeight::Learnable(i) => (0u8, i as u64).hash(&mut h),
                EdgeWeight::Fixed(v) => (1u8, v.to_bits()).hash(&mut h),
            }
        }
        h.finish()
    }
}
