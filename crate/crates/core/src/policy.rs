//! Trainable policies and their adapters to the simulator.

use crate::graph::{backward, evaluate, DensePolicy, GraphError, WeightVector};
use crate::pgdl::CompiledPolicy;
use crate::sim::{self, ActionVector, Observation};
use crate::trainer::NormalizationSpec;

/// Either a compiled structured policy or the dense baseline.
#[derive(Debug, Clone)]
pub enum PolicyModel {
    Structured(Box<CompiledPolicy>),
    Dense(DensePolicy),
}

impl PolicyModel {
    pub fn is_structured(&self) -> bool {
        matches!(self, PolicyModel::Structured(_))
    }

    pub fn params(&self) -> &[f64] {
        match self {
            PolicyModel::Structured(c) => &c.weights.values,
            PolicyModel::Dense(d) => &d.params,
        }
    }

    pub fn frozen(&self) -> Vec<bool> {
        match self {
            PolicyModel::Structured(c) => c.weights.frozen.clone(),
            PolicyModel::Dense(d) => vec![false; d.params.len()],
        }
    }

    pub fn set_params(&mut self, values: Vec<f64>) {
        assert_eq!(values.len(), self.params().len(), "parameter count");
        match self {
            PolicyModel::Structured(c) => c.weights.values = values,
            PolicyModel::Dense(d) => d.params = values,
        }
    }

    /// Output names in the order the model produces them.
    pub fn output_names(&self) -> Vec<String> {
        match self {
            PolicyModel::Structured(c) => c.structure.action_names().iter().map(|s| s.to_string()).collect(),
            PolicyModel::Dense(d) => {
                let n = d.sizes.last().copied().unwrap_or(0);
                if n == ActionVector::NAMES.len() {
                    ActionVector::NAMES.iter().map(|s| s.to_string()).collect()
                } else {
                    (0..n).map(|i| format!("out{i}")).collect()
                }
            }
        }
    }

    /// For each requested name, the model output that produces it.
    pub fn columns(&self, names: &[String]) -> Vec<Option<usize>> {
        let outs = self.output_names();
        names.iter().map(|n| outs.iter().position(|o| o == n)).collect()
    }

    /// Unclipped outputs for a normalized observation, rearranged into `cols`
    /// order. Columns with no matching output read zero.
    pub fn raw_with(&self, params: &[f64], obs: &[f64], cols: &[Option<usize>]) -> Result<Vec<f64>, GraphError> {
        let out = match self {
            PolicyModel::Structured(c) => {
                let w = WeightVector::with_frozen(params.to_vec(), c.weights.frozen.clone());
                evaluate(&c.structure, &w, obs)?.0
            }
            PolicyModel::Dense(d) => d.forward_raw_with(params, obs)?,
        };
        Ok(pick(&out, cols))
    }

    /// Clipped outputs in `cols` order.
    pub fn act(&self, obs: &[f64], cols: &[Option<usize>]) -> Result<Vec<f64>, GraphError> {
        let out = match self {
            PolicyModel::Structured(c) => {
                let raw = evaluate(&c.structure, &c.weights, obs)?.0;
                c.structure.clip_actions(&raw)
            }
            PolicyModel::Dense(d) => d.forward(obs)?,
        };
        Ok(pick(&out, cols))
    }

    /// Squared error summed over the mapped outputs, and its gradient scaled
    /// by `scale`. Unmapped targets contribute a constant error.
    pub fn sample_loss_grad(
        &self,
        params: &[f64],
        obs: &[f64],
        target: &[f64],
        cols: &[Option<usize>],
        scale: f64,
    ) -> Result<(f64, Vec<f64>), GraphError> {
        let mut sq = 0.0;
        let out_grad = |out: &[f64]| -> (f64, Vec<f64>) {
            let mut g = vec![0.0; out.len()];
            let mut s = 0.0;
            for (&c, &t) in cols.iter().zip(target) {
                let p = c.map_or(0.0, |c| out[c]);
                let d = p - t;
                s += d * d;
                if let Some(c) = c {
                    g[c] += 2.0 * d * scale;
                }
            }
            (s, g)
        };
        let grad = match self {
            PolicyModel::Structured(c) => {
                let w = WeightVector::with_frozen(params.to_vec(), c.weights.frozen.clone());
                let (out, trace) = evaluate(&c.structure, &w, obs)?;
                let (s, g) = out_grad(&out);
                sq = s;
                backward(&c.structure, &w, &trace, &g)?
            }
            PolicyModel::Dense(d) => {
                d.forward_backward(params, obs, |out| {
                    let (s, g) = out_grad(out);
                    sq = s;
                    g
                })?
                .1
            }
        };
        Ok((sq, grad))
    }
}

fn pick(out: &[f64], cols: &[Option<usize>]) -> Vec<f64> {
    cols.iter().map(|c| c.map_or(0.0, |c| out[c])).collect()
}

/// Drives the car with a model: normalize, evaluate, clip.
#[derive(Debug, Clone)]
pub struct PolicyDriver {
    pub model: PolicyModel,
    pub normalization: NormalizationSpec,
    cols: Vec<Option<usize>>,
}

impl PolicyDriver {
    pub fn new(model: PolicyModel, normalization: NormalizationSpec) -> Self {
        let names: Vec<String> = ActionVector::NAMES.iter().map(|s| s.to_string()).collect();
        let cols = model.columns(&names);
        Self { model, normalization, cols }
    }
}

impl sim::Policy for PolicyDriver {
    fn act(&self, obs: &Observation) -> Result<ActionVector, String> {
        let x = self.normalization.normalize(&obs.flatten());
        let a = self.model.act(&x, &self.cols).map_err(|e| e.to_string())?;
        Ok(ActionVector::from_slice(&a))
    }
}
