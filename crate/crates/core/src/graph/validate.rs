use std::collections::{HashSet, VecDeque};
use std::fmt;

use super::{FeatureKind, NodeRef, OpKind, PolicyStructure, Shape, MAX_NODES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureRule {
    DanglingEdge,
    Bipartite,
    ObservedInput,
    SingleWriter,
    Unassigned,
    Arity,
    Cycle,
    DuplicateName,
    UnreachableAction,
    Binding,
    Shape,
    SizeCap,
}

impl StructureRule {
    pub fn id(self) -> &'static str {
        match self {
            StructureRule::DanglingEdge => "dangling-edge",
            StructureRule::Bipartite => "bipartite",
            StructureRule::ObservedInput => "observed-input",
            StructureRule::SingleWriter => "single-writer",
            StructureRule::Unassigned => "unassigned",
            StructureRule::Arity => "arity",
            StructureRule::Cycle => "cycle",
            StructureRule::DuplicateName => "duplicate-name",
            StructureRule::UnreachableAction => "unreachable-action",
            StructureRule::Binding => "binding",
            StructureRule::Shape => "shape",
            StructureRule::SizeCap => "size-cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureDiagnostic {
    pub rule: StructureRule,
    pub node: Option<NodeRef>,
    pub edge: Option<usize>,
    pub message: String,
}

impl fmt::Display for StructureDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.rule.id(), self.message)
    }
}

fn diag(
    rule: StructureRule,
    node: Option<NodeRef>,
    edge: Option<usize>,
    message: String,
) -> StructureDiagnostic {
    StructureDiagnostic { rule, node, edge, message }
}

/// Checks every invariant, filling the topological order and operator shapes
/// on `s` as a side effect.
pub(super) fn run(s: &mut PolicyStructure) -> Vec<StructureDiagnostic> {
    let mut out = Vec::new();
    let nf = s.features.len();
    let np = s.operators.len();

    if nf + np > MAX_NODES {
        out.push(diag(
            StructureRule::SizeCap,
            None,
            None,
            format!("{} nodes exceeds the cap of {MAX_NODES}", nf + np),
        ));
    }

    let mut seen = HashSet::new();
    for (i, f) in s.features.iter().enumerate() {
        if !seen.insert(f.name.as_str()) {
            out.push(diag(
                StructureRule::DuplicateName,
                Some(NodeRef::Feature(i)),
                None,
                format!("feature name `{}` is used more than once", f.name),
            ));
        }
    }

    let in_range = |n: NodeRef| match n {
        NodeRef::Feature(i) => i < nf,
        NodeRef::Operator(i) => i < np,
    };
    let mut dangling = false;
    for (i, e) in s.edges.iter().enumerate() {
        if !in_range(e.source) || !in_range(e.target) {
            dangling = true;
            out.push(diag(
                StructureRule::DanglingEdge,
                None,
                Some(i),
                format!("edge #{i} references a node that does not exist"),
            ));
            continue;
        }
        let ok = matches!(
            (e.source, e.target),
            (NodeRef::Feature(_), NodeRef::Operator(_)) | (NodeRef::Operator(_), NodeRef::Feature(_))
        );
        if !ok {
            out.push(diag(
                StructureRule::Bipartite,
                Some(e.target),
                Some(i),
                format!(
                    "edge #{i} connects {} to {}; edges must alternate feature and operator",
                    s.node_label(e.source),
                    s.node_label(e.target)
                ),
            ));
        }
    }

    for (i, f) in s.features.iter().enumerate() {
        let n_in = s.feature_inputs[i].len();
        let node = Some(NodeRef::Feature(i));
        match &f.kind {
            FeatureKind::Observed { binding } => {
                if n_in > 0 {
                    out.push(diag(
                        StructureRule::ObservedInput,
                        node,
                        Some(s.feature_inputs[i][0]),
                        format!("observed feature `{}` has an incoming edge", f.name),
                    ));
                }
                if binding.len() != f.shape.len() {
                    out.push(diag(
                        StructureRule::Binding,
                        node,
                        None,
                        format!(
                            "observed feature `{}` binds {} values but has shape {}",
                            f.name,
                            binding.len(),
                            f.shape
                        ),
                    ));
                }
            }
            FeatureKind::Latent | FeatureKind::Action { .. } => {
                if n_in == 0 {
                    out.push(diag(
                        StructureRule::Unassigned,
                        node,
                        None,
                        format!("feature `{}` has no incoming edge", f.name),
                    ));
                } else if n_in > 1 {
                    out.push(diag(
                        StructureRule::SingleWriter,
                        node,
                        Some(s.feature_inputs[i][1]),
                        format!("feature `{}` has {n_in} incoming edges, expected exactly one", f.name),
                    ));
                }
                if f.is_action() && !f.shape.is_scalar() {
                    out.push(diag(
                        StructureRule::Shape,
                        node,
                        None,
                        format!("action `{}` must be scalar", f.name),
                    ));
                }
            }
        }
    }

    for (i, p) in s.operators.iter().enumerate() {
        let n_in = s.operator_inputs[i].len();
        let (lo, hi) = p.op.arity();
        if n_in < lo || n_in > hi {
            let expected = match (lo, hi) {
                (a, b) if a == b => format!("{a}"),
                (a, _) => format!("at least {a}"),
            };
            out.push(diag(
                StructureRule::Arity,
                Some(NodeRef::Operator(i)),
                None,
                format!("operator #{i} ({}) has {n_in} inputs, expected {expected}", p.op.name()),
            ));
        }
        if let OpKind::Clamp { lo, hi } = p.op {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                out.push(diag(
                    StructureRule::Arity,
                    Some(NodeRef::Operator(i)),
                    None,
                    format!("operator #{i} clamp bounds [{lo}, {hi}] are empty"),
                ));
            }
        }
    }

    if dangling {
        return out;
    }

    s.order = topo_order(s);
    match &s.order {
        None => out.push(diag(
            StructureRule::Cycle,
            None,
            None,
            "the edge set contains a cycle".to_string(),
        )),
        Some(order) => {
            let order = order.clone();
            infer_shapes(s, &order, &mut out);
            check_reachability(s, &mut out);
        }
    }
    out
}

fn topo_order(s: &PolicyStructure) -> Option<Vec<NodeRef>> {
    let nf = s.features.len();
    let idx = |n: NodeRef| match n {
        NodeRef::Feature(i) => i,
        NodeRef::Operator(i) => nf + i,
    };
    let node = |k: usize| if k < nf { NodeRef::Feature(k) } else { NodeRef::Operator(k - nf) };
    let total = nf + s.operators.len();
    let mut indegree = vec![0usize; total];
    let mut succ = vec![Vec::new(); total];
    for e in &s.edges {
        indegree[idx(e.target)] += 1;
        succ[idx(e.source)].push(idx(e.target));
    }
    // Smallest-index-first keeps the order stable across equal structures.
    let mut ready: std::collections::BTreeSet<usize> =
        (0..total).filter(|&k| indegree[k] == 0).collect();
    let mut order = Vec::with_capacity(total);
    while let Some(k) = ready.pop_first() {
        order.push(node(k));
        for &t in &succ[k] {
            indegree[t] -= 1;
            if indegree[t] == 0 {
                ready.insert(t);
            }
        }
    }
    (order.len() == total).then_some(order)
}

fn infer_shapes(s: &mut PolicyStructure, order: &[NodeRef], out: &mut Vec<StructureDiagnostic>) {
    let mut feature_ok = vec![true; s.features.len()];
    for &n in order {
        match n {
            NodeRef::Feature(i) => {
                let Some(&e) = s.feature_inputs[i].first() else { continue };
                let src_shape = match s.edges[e].source {
                    NodeRef::Operator(p) => s.operator_shapes[p],
                    NodeRef::Feature(f) => feature_ok[f].then_some(s.features[f].shape),
                };
                match src_shape {
                    Some(sh) if sh == s.features[i].shape => {}
                    Some(sh) => {
                        feature_ok[i] = false;
                        out.push(diag(
                            StructureRule::Shape,
                            Some(n),
                            Some(e),
                            format!(
                                "feature `{}` has shape {} but its input produces {sh}",
                                s.features[i].name, s.features[i].shape
                            ),
                        ));
                    }
                    None => feature_ok[i] = false,
                }
            }
            NodeRef::Operator(p) => {
                let mut shapes = Vec::new();
                let mut known = true;
                for &e in &s.operator_inputs[p] {
                    match s.edges[e].source {
                        NodeRef::Feature(f) if feature_ok[f] => shapes.push(s.features[f].shape),
                        _ => known = false,
                    }
                }
                if !known {
                    continue;
                }
                match op_shape(s.operators[p].op, &shapes) {
                    Ok(sh) => s.operator_shapes[p] = Some(sh),
                    Err(detail) => out.push(diag(
                        StructureRule::Shape,
                        Some(n),
                        None,
                        format!("operator #{p} ({}): {detail}", s.operators[p].op.name()),
                    )),
                }
            }
        }
    }
}

/// Output shape of `op` applied to inputs of the given shapes.
pub(crate) fn op_shape(op: OpKind, inputs: &[Shape]) -> Result<Shape, String> {
    let (lo, hi) = op.arity();
    if inputs.len() < lo || inputs.len() > hi {
        return Err(format!("{} inputs", inputs.len()));
    }
    match op {
        OpKind::Constant(_) => Ok(Shape::Scalar),
        OpKind::Mean => match inputs[0] {
            Shape::Vector(n) if n > 0 => Ok(Shape::Scalar),
            other => Err(format!("mean needs a non-empty vector, got {other}")),
        },
        OpKind::Stack => {
            if let Some(bad) = inputs.iter().find(|s| !s.is_scalar()) {
                Err(format!("stack takes scalars, got {bad}"))
            } else {
                Ok(Shape::Vector(inputs.len()))
            }
        }
        _ => broadcast(inputs),
    }
}

fn broadcast(inputs: &[Shape]) -> Result<Shape, String> {
    let mut out = Shape::Scalar;
    for &s in inputs {
        out = match (out, s) {
            (Shape::Scalar, x) | (x, Shape::Scalar) => x,
            (Shape::Vector(a), Shape::Vector(b)) if a == b => Shape::Vector(a),
            (a, b) => return Err(format!("cannot combine {a} with {b}")),
        };
    }
    Ok(out)
}

fn check_reachability(s: &PolicyStructure, out: &mut Vec<StructureDiagnostic>) {
    let nf = s.features.len();
    let total = nf + s.operators.len();
    let idx = |n: NodeRef| match n {
        NodeRef::Feature(i) => i,
        NodeRef::Operator(i) => nf + i,
    };
    let mut succ = vec![Vec::new(); total];
    for e in &s.edges {
        succ[idx(e.source)].push(idx(e.target));
    }
    let mut seen = vec![false; total];
    let mut queue: VecDeque<usize> =
        s.features.iter().enumerate().filter(|(_, f)| f.is_observed()).map(|(i, _)| i).collect();
    for &q in &queue {
        seen[q] = true;
    }
    while let Some(k) = queue.pop_front() {
        for &t in &succ[k] {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    for (i, f) in s.features.iter().enumerate() {
        if f.is_action() && !seen[i] {
            out.push(diag(
                StructureRule::UnreachableAction,
                Some(NodeRef::Feature(i)),
                None,
                format!("action `{}` does not depend on any observed feature", f.name),
            ));
        }
    }
}
