//! Loss, weighting, and optimizer primitives shared by all models.

use super::linalg::Tensor2;
use super::NetError;

/// In-place numerically stabilized softmax (max subtraction).
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Inverse-prevalence class weights: w_c = N / (K * N_c).
///
/// The weighted count identity sum_c w_c * N_c = N holds for any K.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>, NetError> {
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                Err(NetError::EmptyClass(c))
            } else {
                Ok(total as f64 / (k * n as f64))
            }
        })
        .collect()
}

/// Mean class-weighted cross-entropy of a logit batch and its gradient.
///
/// loss = (1/n) * sum_i w_{y_i} * (-ln softmax(logits_i)[y_i]).
pub fn weighted_softmax_ce(
    logits: &Tensor2,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor2), NetError> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(NetError::ShapeMismatch(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    if weights.len() != c {
        return Err(NetError::ShapeMismatch(format!(
            "{c} classes but {} weights",
            weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(NetError::LabelOutOfRange { label: bad, classes: c });
    }
    let mut grad = Tensor2::zeros(n, c);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let y = labels[i];
        let w = weights[y];
        let g = grad.row_mut(i);
        g.copy_from_slice(logits.row(i));
        softmax_in_place(g);
        // ln of the stabilized softmax output; the max subtraction keeps the
        // exponentials representable so p[y] > 0 whenever logits are finite.
        loss += w * -(g[y].ln()) * inv_n;
        for v in g.iter_mut() {
            *v *= w * inv_n;
        }
        g[y] -= w * inv_n;
    }
    Ok((loss, grad))
}

/// Adam optimizer state over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn softmax_is_uniform_on_equal_logits() {
        let mut x = [1.5; 4];
        softmax_in_place(&mut x);
        for v in x {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn balanced_counts_give_unit_weights() {
        assert_eq!(class_weights(&[10, 10, 10, 10]).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn skewed_counts_match_frozen_values() {
        let w = class_weights(&[30, 10, 10, 10]).unwrap();
        assert_eq!(w, vec![0.5, 1.5, 1.5, 1.5]);
        // Weighted count identity.
        let total: f64 = w.iter().zip([30.0, 10.0, 10.0, 10.0]).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(total, 60.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_class_is_rejected() {
        assert!(matches!(
            class_weights(&[5, 5, 5, 0]),
            Err(NetError::EmptyClass(3))
        ));
    }

    #[test]
    fn binary_weights_follow_same_rule() {
        let w = class_weights(&[90, 30]).unwrap();
        assert_abs_diff_eq!(w[0], 120.0 / (2.0 * 90.0), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_logits_single_label_loss_is_ln2() {
        let logits = Tensor2::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, _) = weighted_softmax_ce(&logits, &[0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn unit_weights_reduce_to_plain_ce() {
        let logits =
            Tensor2::from_rows(&[vec![2.0, -1.0, 0.5], vec![0.0, 3.0, 1.0]]).unwrap();
        let (loss, _) = weighted_softmax_ce(&logits, &[0, 1], &[1.0; 3]).unwrap();
        let direct: f64 = [(0usize, vec![2.0, -1.0, 0.5]), (1, vec![0.0, 3.0, 1.0])]
            .iter()
            .map(|(y, row)| {
                let mut p = row.clone();
                softmax_in_place(&mut p);
                -p[*y].ln()
            })
            .sum::<f64>()
            / 2.0;
        assert_abs_diff_eq!(loss, direct, epsilon = 1e-12);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let rows = vec![
            vec![0.3, -1.2, 0.7, 0.1],
            vec![2.0, 0.0, -0.5, 1.1],
            vec![-0.4, 0.9, 0.2, -2.0],
            vec![1.5, 1.5, 1.5, 1.4],
            vec![0.0, 0.0, 0.0, 0.0],
        ];
        let labels = [0usize, 3, 1, 2, 0];
        let weights = [0.5, 1.5, 1.0, 2.0];
        let logits = Tensor2::from_rows(&rows).unwrap();
        let (_, grad) = weighted_softmax_ce(&logits, &labels, &weights).unwrap();
        let eps = 1e-6;
        for i in 0..rows.len() {
            for j in 0..4 {
                let mut plus = rows.clone();
                plus[i][j] += eps;
                let mut minus = rows.clone();
                minus[i][j] -= eps;
                let (lp, _) = weighted_softmax_ce(
                    &Tensor2::from_rows(&plus).unwrap(),
                    &labels,
                    &weights,
                )
                .unwrap();
                let (lm, _) = weighted_softmax_ce(
                    &Tensor2::from_rows(&minus).unwrap(),
                    &labels,
                    &weights,
                )
                .unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grad.row(i)[j];
                let rel = (analytic - numeric).abs()
                    / f64::max(1e-8, analytic.abs() + numeric.abs());
                assert!(rel < 1e-6, "grad[{i}][{j}] rel err {rel}");
            }
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Tensor2::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            weighted_softmax_ce(&logits, &[2], &[1.0, 1.0]),
            Err(NetError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // f(p) = (p-3)^2, gradient 2(p-3).
        let mut p = vec![0.0];
        let mut adam = AdamState::new(1);
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 3.0)];
            adam.step(&mut p, &g, 0.01);
        }
        assert_abs_diff_eq!(p[0], 3.0, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn softmax_on_simplex_and_shift_invariant(
            v in proptest::collection::vec(-30.0f64..30.0, 1..8),
            shift in -10.0f64..10.0,
        ) {
            let mut a = v.clone();
            softmax_in_place(&mut a);
            let sum: f64 = a.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(a.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let mut b: Vec<f64> = v.iter().map(|x| x + shift).collect();
            softmax_in_place(&mut b);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
