//! Plain dense stack with per-layer activation, used by the autoencoders and
//! the level-2 blender.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{
    add_assign, glorot_fill, matvec, matvec_t_add, outer_add, Block, BlockAllocator,
};
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Act {
    Tanh,
    Linear,
}

impl Act {
    fn apply(self, x: &mut [f64]) {
        if self == Act::Tanh {
            for v in x.iter_mut() {
                *v = v.tanh();
            }
        }
    }

    // dL/dpre from dL/dpost given the post-activation value y.
    fn backprop(self, dpost: &[f64], y: &[f64], dpre: &mut [f64]) {
        match self {
            Act::Tanh => {
                for i in 0..dpost.len() {
                    dpre[i] = dpost[i] * (1.0 - y[i] * y[i]);
                }
            }
            Act::Linear => dpre.copy_from_slice(dpost),
        }
    }
}

/// Fully connected stack: dims = layer widths including input and output,
/// acts = one activation per affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub acts: Vec<Act>,
    pub params: Vec<f64>,
    weights: Vec<Block>,
    biases: Vec<Block>,
}

/// Per-layer post-activation values from one forward pass; activations[0] is
/// the input itself.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(dims: &[usize], acts: &[Act], seed: u64) -> Result<Self, NetError> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(NetError::InvalidConfig(format!(
                "{} layer widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                acts.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(NetError::InvalidConfig("zero-width layer".into()));
        }
        let mut alloc = BlockAllocator::new();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..acts.len() {
            weights.push(alloc.alloc(dims[l + 1], dims[l]));
            biases.push(alloc.alloc(dims[l + 1], 1));
        }
        let mut params = vec![0.0; alloc.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..acts.len() {
            glorot_fill(&mut rng, weights[l].of_mut(&mut params), dims[l], dims[l + 1]);
        }
        Ok(Mlp { dims: dims.to_vec(), acts: acts.to_vec(), params, weights, biases })
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn n_layers(&self) -> usize {
        self.acts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        self.weights[layer].of(&self.params)
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        self.biases[layer].of(&self.params)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetError> {
        if x.len() != self.dims[0] {
            return Err(NetError::ShapeMismatch(format!(
                "input of {} values into a {}-input stack",
                x.len(),
                self.dims[0]
            )));
        }
        Ok(())
    }

    /// Forward pass through the first `n_layers` affine layers.
    pub fn forward_partial(&self, x: &[f64], n_layers: usize) -> Result<Vec<f64>, NetError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for l in 0..n_layers.min(self.acts.len()) {
            let mut next = vec![0.0; self.dims[l + 1]];
            matvec(self.weight(l), self.dims[l + 1], self.dims[l], &cur, &mut next);
            add_assign(&mut next, self.bias(l));
            self.acts[l].apply(&mut next);
            cur = next;
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.forward_partial(x, self.acts.len())
    }

    pub fn forward_cache(&self, x: &[f64]) -> Result<MlpCache, NetError> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.acts.len() + 1);
        activations.push(x.to_vec());
        for l in 0..self.acts.len() {
            let mut next = vec![0.0; self.dims[l + 1]];
            matvec(
                self.weight(l),
                self.dims[l + 1],
                self.dims[l],
                &activations[l],
                &mut next,
            );
            add_assign(&mut next, self.bias(l));
            self.acts[l].apply(&mut next);
            activations.push(next);
        }
        Ok(MlpCache { activations })
    }

    /// Accumulates parameter gradients for one sample into `grad` and returns
    /// the gradient with respect to the input. `dout` is dL/d(output).
    pub fn backward(&self, cache: &MlpCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(dout.len(), self.output_dim());
        let mut dpost = dout.to_vec();
        for l in (0..self.acts.len()).rev() {
            let y = &cache.activations[l + 1];
            let mut dpre = vec![0.0; y.len()];
            self.acts[l].backprop(&dpost, y, &mut dpre);
            let wb = self.weights[l];
            outer_add(wb.of_mut(grad), wb.rows, wb.cols, &dpre, &cache.activations[l]);
            add_assign(self.biases[l].of_mut(grad), &dpre);
            let mut dx = vec![0.0; self.dims[l]];
            matvec_t_add(self.weight(l), wb.rows, wb.cols, &dpre, &mut dx);
            dpost = dx;
        }
        dpost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn param_count_matches_layout() {
        let mlp = Mlp::new(&[5, 7, 3], &[Act::Tanh, Act::Linear], 1).unwrap();
        assert_eq!(mlp.params.len(), Mlp::param_count(&[5, 7, 3]));
        assert_eq!(mlp.params.len(), 7 * 5 + 7 + 3 * 7 + 3);
    }

    #[test]
    fn biases_start_at_zero_and_weights_do_not() {
        let mlp = Mlp::new(&[4, 4], &[Act::Tanh], 3).unwrap();
        assert!(mlp.bias(0).iter().all(|&b| b == 0.0));
        assert!(mlp.weight(0).iter().any(|&w| w != 0.0));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Mlp::new(&[6, 8, 2], &[Act::Tanh, Act::Linear], 9).unwrap();
        let b = Mlp::new(&[6, 8, 2], &[Act::Tanh, Act::Linear], 9).unwrap();
        assert_eq!(a.params, b.params);
        let c = Mlp::new(&[6, 8, 2], &[Act::Tanh, Act::Linear], 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let mut mlp = Mlp::new(&[2, 2], &[Act::Tanh], 0).unwrap();
        mlp.params.copy_from_slice(&[1.0, 0.0, 0.0, -1.0, 0.5, 0.0]);
        let y = mlp.forward(&[0.3, 0.2]).unwrap();
        assert_abs_diff_eq!(y[0], (0.3f64 + 0.5).tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], (-0.2f64).tanh(), epsilon = 1e-15);
    }

    #[test]
    fn forward_partial_stops_at_requested_layer() {
        let mlp = Mlp::new(&[3, 5, 2], &[Act::Tanh, Act::Linear], 4).unwrap();
        let mid = mlp.forward_partial(&[0.1, -0.2, 0.3], 1).unwrap();
        assert_eq!(mid.len(), 5);
        let full = mlp.forward(&[0.1, -0.2, 0.3]).unwrap();
        assert_eq!(full.len(), 2);
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mlp = Mlp::new(&[3, 2], &[Act::Linear], 0).unwrap();
        assert!(matches!(
            mlp.forward(&[1.0, 2.0]),
            Err(NetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences_on_mse() {
        let mut mlp = Mlp::new(&[3, 4, 2], &[Act::Tanh, Act::Linear], 11).unwrap();
        let x = [0.4, -0.9, 0.15];
        let target = [0.3, -0.6];
        let loss = |m: &Mlp| -> f64 {
            let y = m.forward(&x).unwrap();
            y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                / target.len() as f64
        };
        let cache = mlp.forward_cache(&x).unwrap();
        let y = cache.activations.last().unwrap().clone();
        let dout: Vec<f64> =
            y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / target.len() as f64).collect();
        let mut grad = vec![0.0; mlp.params.len()];
        let dx = mlp.backward(&cache, &dout, &mut grad);
        assert_eq!(dx.len(), 3);

        let eps = 1e-6;
        for i in 0..mlp.params.len() {
            let orig = mlp.params[i];
            mlp.params[i] = orig + eps;
            let lp = loss(&mlp);
            mlp.params[i] = orig - eps;
            let lm = loss(&mlp);
            mlp.params[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            let rel =
                (grad[i] - numeric).abs() / f64::max(1e-8, grad[i].abs() + numeric.abs());
            assert!(rel < 1e-6, "param {i}: analytic {} numeric {}", grad[i], numeric);
        }
    }

    #[test]
    fn zero_weight_network_outputs_activated_bias() {
        let mut mlp = Mlp::new(&[3, 2], &[Act::Tanh], 0).unwrap();
        for w in mlp.params.iter_mut() {
            *w = 0.0;
        }
        let n = mlp.params.len();
        mlp.params[n - 2] = 0.7;
        mlp.params[n - 1] = -0.7;
        let y = mlp.forward(&[5.0, -3.0, 2.0]).unwrap();
        assert_abs_diff_eq!(y[0], 0.7f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(y[1], (-0.7f64).tanh(), epsilon = 1e-15);
    }
}
