//! Elementwise forward and reverse rules for the closed operator set.
//!
//! Inputs of length 1 broadcast against longer inputs. Subgradients: relu'(0) = 0,
//! clamp passes gradient only strictly inside its bounds, abs'(0) = 0, min/max
//! route to the first extremal input, select never differentiates its condition.

use super::OpKind;

fn out_len(inputs: &[&[f64]]) -> usize {
    inputs.iter().map(|x| x.len()).max().unwrap_or(1)
}

#[inline]
fn at(x: &[f64], k: usize) -> f64 {
    if x.len() == 1 {
        x[0]
    } else {
        x[k]
    }
}

pub(crate) fn forward(op: OpKind, inputs: &[&[f64]]) -> Vec<f64> {
    let n = out_len(inputs);
    let map1 = |f: fn(f64) -> f64| inputs[0].iter().map(|&v| f(v)).collect::<Vec<_>>();
    match op {
        OpKind::Constant(c) => vec![c],
        OpKind::Sum => (0..n).map(|k| inputs.iter().map(|x| at(x, k)).sum()).collect(),
        OpKind::Product => (0..n).map(|k| inputs.iter().map(|x| at(x, k)).product()).collect(),
        OpKind::Min => (0..n)
            .map(|k| inputs.iter().map(|x| at(x, k)).fold(f64::INFINITY, f64::min))
            .collect(),
        OpKind::Max => (0..n)
            .map(|k| inputs.iter().map(|x| at(x, k)).fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        OpKind::Negate => map1(|v| -v),
        OpKind::Relu => map1(|v| if v > 0.0 { v } else { 0.0 }),
        OpKind::Abs => map1(f64::abs),
        OpKind::Square => map1(|v| v * v),
        OpKind::Clamp { lo, hi } => inputs[0].iter().map(|&v| v.clamp(lo, hi)).collect(),
        OpKind::Select => (0..n)
            .map(|k| {
                if at(inputs[0], k) > 0.0 {
                    at(inputs[1], k)
                } else {
                    at(inputs[2], k)
                }
            })
            .collect(),
        OpKind::Mean => {
            let x = inputs[0];
            vec![x.iter().sum::<f64>() / x.len() as f64]
        }
        OpKind::Stack => inputs.iter().map(|x| x[0]).collect(),
    }
}

/// Adjoint of each input given the adjoint of the output. Broadcast inputs
/// receive the sum over the elements they were broadcast to.
pub(crate) fn backward(op: OpKind, inputs: &[&[f64]], out_adj: &[f64]) -> Vec<Vec<f64>> {
    let n = out_adj.len();
    let mut adj: Vec<Vec<f64>> = inputs.iter().map(|x| vec![0.0; x.len()]).collect();
    let mut add = |i: usize, k: usize, v: f64| {
        let slot = if adj[i].len() == 1 { 0 } else { k };
        adj[i][slot] += v;
    };
    match op {
        OpKind::Constant(_) => {}
        OpKind::Sum => {
            for k in 0..n {
                for i in 0..inputs.len() {
                    add(i, k, out_adj[k]);
                }
            }
        }
        OpKind::Product => {
            for k in 0..n {
                for i in 0..inputs.len() {
                    let others: f64 = inputs
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, x)| at(x, k))
                        .product();
                    add(i, k, out_adj[k] * others);
                }
            }
        }
        OpKind::Min | OpKind::Max => {
            for k in 0..n {
                let mut best = 0;
                for i in 1..inputs.len() {
                    let (a, b) = (at(inputs[i], k), at(inputs[best], k));
                    let better = if matches!(op, OpKind::Min) { a < b } else { a > b };
                    if better {
                        best = i;
                    }
                }
                add(best, k, out_adj[k]);
            }
        }
        OpKind::Negate => {
            for k in 0..n {
                add(0, k, -out_adj[k]);
            }
        }
        OpKind::Relu => {
            for k in 0..n {
                if inputs[0][k] > 0.0 {
                    add(0, k, out_adj[k]);
                }
            }
        }
        OpKind::Abs => {
            for k in 0..n {
                let v = inputs[0][k];
                let s = if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                add(0, k, s * out_adj[k]);
            }
        }
        OpKind::Square => {
            for k in 0..n {
                add(0, k, 2.0 * inputs[0][k] * out_adj[k]);
            }
        }
        OpKind::Clamp { lo, hi } => {
            for k in 0..n {
                let v = inputs[0][k];
                if v > lo && v < hi {
                    add(0, k, out_adj[k]);
                }
            }
        }
        OpKind::Select => {
            for k in 0..n {
                let branch = if at(inputs[0], k) > 0.0 { 1 } else { 2 };
                add(branch, k, out_adj[k]);
            }
        }
        OpKind::Mean => {
            let m = inputs[0].len() as f64;
            for k in 0..inputs[0].len() {
                add(0, k, out_adj[0] / m);
            }
        }
        OpKind::Stack => {
            for (i, &g) in out_adj.iter().enumerate() {
                add(i, 0, g);
            }
        }
    }
    adj
}
