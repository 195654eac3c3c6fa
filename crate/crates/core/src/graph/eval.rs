use std::io::{self, Write};

use super::{ops, FeatureKind, GraphError, NodeRef, PolicyStructure, WeightVector};
use super::EdgeWeight;

/// Every value computed during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTrace {
    /// Nodes in the order they were assigned.
    pub order: Vec<NodeRef>,
    pub feature_values: Vec<Vec<f64>>,
    pub operator_values: Vec<Vec<f64>>,
    /// `weight * source value` for every edge.
    pub edge_values: Vec<Vec<f64>>,
    /// Unclipped action vector in action declaration order.
    pub action: Vec<f64>,
    fingerprint: u64,
    weights_hash: u64,
}

fn weights_hash(w: &WeightVector) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in &w.values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn check_weights(structure: &PolicyStructure, weights: &WeightVector) -> Result<(), GraphError> {
    let needed = structure.weight_count();
    if needed > weights.len() {
        return Err(GraphError::WeightIndex { index: needed - 1, got: weights.len() });
    }
    Ok(())
}

pub fn evaluate(
    structure: &PolicyStructure,
    weights: &WeightVector,
    observation: &[f64],
) -> Result<(Vec<f64>, EvaluationTrace), GraphError> {
    if !structure.is_valid() {
        return Err(GraphError::InvalidStructure(structure.validate()));
    }
    check_weights(structure, weights)?;
    let order = structure.order().expect("valid structure has an order");
    let features = structure.features();
    let edges = structure.edges();
    let mut feature_values: Vec<Vec<f64>> = vec![Vec::new(); features.len()];
    let mut operator_values: Vec<Vec<f64>> = vec![Vec::new(); structure.operators().len()];
    let mut edge_values: Vec<Vec<f64>> = vec![Vec::new(); edges.len()];

    let mut push_edge = |e: usize, fv: &[Vec<f64>], ov: &[Vec<f64>]| -> Vec<f64> {
        let edge = &edges[e];
        let w = weights.resolve(edge.weight);
        let src = match edge.source {
            NodeRef::Feature(i) => &fv[i],
            NodeRef::Operator(i) => &ov[i],
        };
        let v: Vec<f64> = src.iter().map(|x| w * x).collect();
        edge_values[e] = v.clone();
        v
    };

    for &node in order {
        match node {
            NodeRef::Feature(i) => {
                let f = &features[i];
                feature_values[i] = match &f.kind {
                    FeatureKind::Observed { binding } => binding
                        .iter()
                        .map(|&k| {
                            observation.get(k).copied().ok_or_else(|| {
                                GraphError::MissingObservation {
                                    feature: f.name.clone(),
                                    index: k,
                                    got: observation.len(),
                                }
                            })
                        })
                        .collect::<Result<_, _>>()?,
                    _ => {
                        let e = structure.inputs_of(node)[0];
                        push_edge(e, &feature_values, &operator_values)
                    }
                };
            }
            NodeRef::Operator(p) => {
                let ins: Vec<Vec<f64>> = structure
                    .inputs_of(node)
                    .iter()
                    .map(|&e| push_edge(e, &feature_values, &operator_values))
                    .collect();
                let refs: Vec<&[f64]> = ins.iter().map(|v| v.as_slice()).collect();
                operator_values[p] = ops::forward(structure.operators()[p].op, &refs);
            }
        }
    }

    let action: Vec<f64> =
        structure.action_indices().into_iter().map(|i| feature_values[i][0]).collect();
    let trace = EvaluationTrace {
        order: order.to_vec(),
        feature_values,
        operator_values,
        edge_values,
        action: action.clone(),
        fingerprint: structure.fingerprint(),
        weights_hash: weights_hash(weights),
    };
    Ok((action, trace))
}

/// Gradient of `action_grad · â` with respect to every entry of `weights`.
/// Frozen entries receive exactly zero.
pub fn backward(
    structure: &PolicyStructure,
    weights: &WeightVector,
    trace: &EvaluationTrace,
    action_grad: &[f64],
) -> Result<Vec<f64>, GraphError> {
    if trace.fingerprint != structure.fingerprint() || trace.weights_hash != weights_hash(weights) {
        return Err(GraphError::TraceMismatch);
    }
    let actions = structure.action_indices();
    if action_grad.len() != actions.len() {
        return Err(GraphError::GradientWidth { expected: actions.len(), got: action_grad.len() });
    }
    let edges = structure.edges();
    let mut f_adj: Vec<Vec<f64>> = trace.feature_values.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut p_adj: Vec<Vec<f64>> = trace.operator_values.iter().map(|v| vec![0.0; v.len()]).collect();
    for (&i, &g) in actions.iter().zip(action_grad) {
        f_adj[i][0] += g;
    }
    let mut grad = vec![0.0; weights.len()];

    // Propagates the adjoint of edge `e`'s value back to its weight and source.
    let mut through_edge =
        |e: usize, e_adj: &[f64], f_adj: &mut [Vec<f64>], p_adj: &mut [Vec<f64>]| {
            let edge = &edges[e];
            let (src_val, src_adj) = match edge.source {
                NodeRef::Feature(i) => (&trace.feature_values[i], &mut f_adj[i]),
                NodeRef::Operator(i) => (&trace.operator_values[i], &mut p_adj[i]),
            };
            let w = weights.resolve(edge.weight);
            if let EdgeWeight::Learnable(k) = edge.weight {
                grad[k] += src_val.iter().zip(e_adj).map(|(x, g)| x * g).sum::<f64>();
            }
            for (a, g) in src_adj.iter_mut().zip(e_adj) {
                *a += w * g;
            }
        };

    for &node in trace.order.iter().rev() {
        match node {
            NodeRef::Feature(i) => {
                if structure.features()[i].is_observed() {
                    continue;
                }
                let e = structure.inputs_of(node)[0];
                let adj = f_adj[i].clone();
                through_edge(e, &adj, &mut f_adj, &mut p_adj);
            }
            NodeRef::Operator(p) => {
                let inputs = structure.inputs_of(node);
                if inputs.is_empty() {
                    continue;
                }
                let vals: Vec<&[f64]> =
                    inputs.iter().map(|&e| trace.edge_values[e].as_slice()).collect();
                let in_adj = ops::backward(structure.operators()[p].op, &vals, &p_adj[p]);
                for (&e, adj) in inputs.iter().zip(&in_adj) {
                    through_edge(e, adj, &mut f_adj, &mut p_adj);
                }
            }
        }
    }

    for (g, &frozen) in grad.iter_mut().zip(&weights.frozen) {
        if frozen {
            *g = 0.0;
        }
    }
    Ok(grad)
}

impl EvaluationTrace {
    /// Writes one JSON record per assigned node, in evaluation order.
    pub fn write_jsonl(&self, structure: &PolicyStructure, mut out: impl Write) -> io::Result<()> {
        for (step, &node) in self.order.iter().enumerate() {
            let (kind, name, value) = match node {
                NodeRef::Feature(i) => {
                    ("feature", structure.features()[i].name.clone(), &self.feature_values[i])
                }
                NodeRef::Operator(i) => (
                    "operator",
                    format!("#{i} {}", structure.operators()[i].op.name()),
                    &self.operator_values[i],
                ),
            };
            let rec = serde_json::json!({ "step": step, "kind": kind, "node": name, "value": value });
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::speed_controller;
    use super::super::*;
    use super::*;

    fn scalar_chain(w: f64) -> (PolicyStructure, WeightVector) {
        let features = vec![
            FeatureNode::observed("x", Shape::Scalar, vec![0]),
            FeatureNode::action("y", None),
        ];
        let ops = vec![OperatorNode::new(OpKind::Sum)];
        let edges = vec![
            WeightedEdge::new(NodeRef::Feature(0), NodeRef::Operator(0), EdgeWeight::Learnable(0)),
            WeightedEdge::new(NodeRef::Operator(0), NodeRef::Feature(1), EdgeWeight::Fixed(1.0)),
        ];
        (PolicyStructure::new(features, ops, edges), WeightVector::new(vec![w]))
    }

    #[test]
    fn speed_controller_intermediate_values() {
        let (s, w) = speed_controller(0.1);
        let (a, t) = evaluate(&s, &w, &[40.0]).unwrap();
        assert_eq!(t.operator_values, vec![vec![1.0], vec![20.0], vec![20.0], vec![0.0]]);
        assert_eq!(t.feature_values[1], vec![60.0]);
        assert_eq!(t.feature_values[2], vec![20.0]);
        assert_eq!(a[1], 0.0);
        assert!((a[0] - 0.1 * 20.0).abs() < 1e-12);
    }

    #[test]
    fn single_edge_gradient_is_the_input() {
        let (s, w) = scalar_chain(0.7);
        let (_, t) = evaluate(&s, &w, &[0.3]).unwrap();
        assert_eq!(backward(&s, &w, &t, &[1.0]).unwrap(), vec![0.3]);
    }

    #[test]
    fn accelerate_weight_gradient_is_relu_output() {
        let (s, w) = speed_controller(0.1);
        let (_, t) = evaluate(&s, &w, &[40.0]).unwrap();
        let g = backward(&s, &w, &t, &[1.0, 0.0]).unwrap();
        assert_eq!(g[6], 20.0);
    }

    #[test]
    fn frozen_entries_get_zero() {
        let (s, mut w) = speed_controller(0.1);
        w.frozen[6] = true;
        let (_, t) = evaluate(&s, &w, &[40.0]).unwrap();
        let g = backward(&s, &w, &t, &[1.0, 1.0]).unwrap();
        assert_eq!(g[6], 0.0);
        assert_ne!(g[0], 0.0);
    }

    #[test]
    fn missing_observation_and_trace_mismatch() {
        let (s, w) = speed_controller(0.1);
        assert!(matches!(evaluate(&s, &w, &[]), Err(GraphError::MissingObservation { .. })));
        let (_, t) = evaluate(&s, &w, &[40.0]).unwrap();
        let (s2, w2) = scalar_chain(1.0);
        assert_eq!(backward(&s2, &w2, &t, &[1.0]), Err(GraphError::TraceMismatch));
        let mut w3 = w.clone();
        w3.values[0] = 59.0;
        assert_eq!(backward(&s, &w3, &t, &[1.0, 0.0]), Err(GraphError::TraceMismatch));
        assert!(matches!(backward(&s, &w, &t, &[1.0]), Err(GraphError::GradientWidth { .. })));
    }

    #[test]
    fn weight_sharing_accumulates() {
        // y = relu(w*x) + w*x with one shared weight.
        use NodeRef::{Feature as F, Operator as P};
        let features = vec![
            FeatureNode::observed("x", Shape::Scalar, vec![0]),
            FeatureNode::latent("r", Shape::Scalar),
            FeatureNode::action("y", None),
        ];
        let ops = vec![OperatorNode::new(OpKind::Relu), OperatorNode::new(OpKind::Sum)];
        let l = EdgeWeight::Learnable(0);
        let one = EdgeWeight::Fixed(1.0);
        let edges = vec![
            WeightedEdge::new(F(0), P(0), l),
            WeightedEdge::new(P(0), F(1), one),
            WeightedEdge::new(F(1), P(1), one),
            WeightedEdge::new(F(0), P(1), l),
            WeightedEdge::new(P(1), F(2), one),
        ];
        let s = PolicyStructure::new(features, ops, edges);
        let w = WeightVector::new(vec![2.0]);
        let (a, t) = evaluate(&s, &w, &[3.0]).unwrap();
        assert_eq!(a, vec![12.0]);
        assert_eq!(backward(&s, &w, &t, &[1.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn doubling_a_linear_path_weight_doubles_its_contribution() {
        let (s, w) = scalar_chain(0.25);
        let (a1, _) = evaluate(&s, &w, &[4.0]).unwrap();
        let (a2, _) = evaluate(&s, &WeightVector::new(vec![0.5]), &[4.0]).unwrap();
        assert_eq!(a2[0], 2.0 * a1[0]);
    }

    #[test]
    fn trace_export_has_one_line_per_node() {
        let (s, w) = speed_controller(0.1);
        let (_, t) = evaluate(&s, &w, &[40.0]).unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.contains("\"node\":\"desired speed\""));
    }
}
