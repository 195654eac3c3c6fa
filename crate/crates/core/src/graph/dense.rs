use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GraphError;

/// Fully connected baseline policy: affine layers with rectifiers between them.
///
/// Parameters are stored flat, layer by layer, each layer as a row-major
/// `out × in` weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensePolicy {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
    /// Output ranges applied by [`DensePolicy::forward`].
    pub clip: Vec<(f64, f64)>,
}

pub type DenseGradient = Vec<f64>;

/// Steer, accelerate, brake.
pub const ACTION_RANGES: [(f64, f64); 3] = [(-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)];

impl DensePolicy {
    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(sizes: Vec<usize>) -> Self {
        let n = Self::param_count(&sizes);
        let clip = default_clip(*sizes.last().unwrap_or(&0));
        Self { sizes, params: vec![0.0; n], clip }
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer, seeded.
    pub fn random(sizes: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(sizes);
        let mut off = 0;
        for w in p.sizes.clone().windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for v in &mut p.params[off..off + w[0] * w[1] + w[1]] {
                *v = rng.gen_range(-bound..bound);
            }
            off += w[0] * w[1] + w[1];
        }
        p
    }

    /// The 58 → 80 → 3 baseline.
    pub fn baseline(seed: u64) -> Self {
        Self::random(vec![58, 80, 3], seed)
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    fn check(&self, obs: &[f64]) -> Result<(), GraphError> {
        if obs.len() != self.sizes[0] {
            return Err(GraphError::InputWidth { expected: self.sizes[0], got: obs.len() });
        }
        Ok(())
    }

    /// Returns every layer's activations, input first, last entry pre-clip.
    fn activations(&self, params: &[f64], obs: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![obs.to_vec()];
        let mut off = 0;
        let layers = self.sizes.len() - 1;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let x = acts.last().unwrap();
            let mat = &params[off..off + n_in * n_out];
            let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &mat[o * n_in..(o + 1) * n_in];
                    row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            if l + 1 < layers {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            off += n_in * n_out + n_out;
            acts.push(y);
        }
        acts
    }

    pub fn forward_raw(&self, obs: &[f64]) -> Result<Vec<f64>, GraphError> {
        self.forward_raw_with(&self.params, obs)
    }

    pub fn forward_raw_with(&self, params: &[f64], obs: &[f64]) -> Result<Vec<f64>, GraphError> {
        self.check(obs)?;
        Ok(self.activations(params, obs).pop().unwrap())
    }

    /// Action with outputs clipped to their ranges.
    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>, GraphError> {
        let raw = self.forward_raw(obs)?;
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(i, v)| match self.clip.get(i) {
                Some(&(lo, hi)) => v.clamp(lo, hi),
                None => v,
            })
            .collect())
    }

    /// Raw output and gradient of `out_grad · output` with respect to `params`.
    pub fn forward_backward(
        &self,
        params: &[f64],
        obs: &[f64],
        out_grad: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, DenseGradient), GraphError> {
        self.check(obs)?;
        let acts = self.activations(params, obs);
        let out = acts.last().unwrap().clone();
        let mut delta = out_grad(&out);
        let mut grad = vec![0.0; params.len()];
        let mut offsets = Vec::new();
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &acts[l];
            for o in 0..n_out {
                for i in 0..n_in {
                    grad[off + o * n_in + i] += delta[o] * x[i];
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            if l > 0 {
                let mat = &params[off..off + n_in * n_out];
                delta = (0..n_in)
                    .map(|i| {
                        if x[i] > 0.0 {
                            (0..n_out).map(|o| mat[o * n_in + i] * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        Ok((out, grad))
    }
}

fn default_clip(outputs: usize) -> Vec<(f64, f64)> {
    if outputs == ACTION_RANGES.len() {
        ACTION_RANGES.to_vec()
    } else {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let p = DensePolicy::zeros(vec![58, 80, 3]);
        assert_eq!(p.forward(&[0.7; 58]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_unit_network() {
        let p = DensePolicy { sizes: vec![1, 1, 1], params: vec![2.0, 0.0, 1.0, 0.0], clip: vec![] };
        assert!((p.forward_raw(&[0.3]).unwrap()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch() {
        let p = DensePolicy::baseline(1);
        assert_eq!(p.forward(&[0.0; 57]), Err(GraphError::InputWidth { expected: 58, got: 57 }));
    }

    #[test]
    fn outputs_are_clipped() {
        let mut p = DensePolicy::zeros(vec![58, 80, 3]);
        let n = p.params.len();
        p.params[n - 3] = -5.0;
        p.params[n - 2] = 5.0;
        p.params[n - 1] = -5.0;
        assert_eq!(p.forward(&[0.0; 58]).unwrap(), vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = DensePolicy::random(vec![4, 5, 2], 3);
        let obs = [0.3, -0.2, 0.9, 0.1];
        let g = [0.7, -1.3];
        let (_, grad) = p.forward_backward(&p.params, &obs, |_| g.to_vec()).unwrap();
        let f = |params: &[f64]| {
            let y = p.forward_raw_with(params, &obs).unwrap();
            y[0] * g[0] + y[1] * g[1]
        };
        let h = 1e-6;
        for k in 0..p.params.len() {
            let mut a = p.params.clone();
            let mut b = p.params.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "param {k}: {fd} vs {}", grad[k]);
        }
    }
}
