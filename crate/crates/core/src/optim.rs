//! AdaGrad and global-norm gradient clipping over flat parameter vectors.

#[derive(Clone, Debug)]
pub struct AdaGrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    accum: Vec<f64>,
}

impl AdaGrad {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        AdaGrad {
            learning_rate,
            epsilon: 1e-8,
            accum: vec![0.0; n_params],
        }
    }

    /// Per-parameter sums of squared gradients seen so far.
    pub fn accumulators(&self) -> &[f64] {
        &self.accum
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        for ((p, &g), a) in params.iter_mut().zip(grads).zip(&mut self.accum) {
            if g != 0.0 {
                *a += g * g;
                *p -= self.learning_rate * g / (a.sqrt() + self.epsilon);
            }
        }
    }

    /// Update for a subset of parameters given as `(index, gradient)`.
    pub fn step_sparse(&mut self, params: &mut [f64], grads: impl IntoIterator<Item = (usize, f64)>) {
        for (i, g) in grads {
            self.accum[i] += g * g;
            params[i] -= self.learning_rate * g / (self.accum[i].sqrt() + self.epsilon);
        }
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their L2 norm is at most `max_norm`. Returns the norm
/// before and after clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> (f64, f64) {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
        (norm, global_norm(grads))
    } else {
        (norm, norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adagrad_first_step_is_sign_times_lr() {
        let mut opt = AdaGrad::new(3, 0.5);
        let mut p = vec![1.0, 1.0, 1.0];
        opt.step(&mut p, &[2.0, -0.25, 0.0]);
        assert!((p[0] - 0.5).abs() < 1e-7);
        assert!((p[1] - 1.5).abs() < 1e-7);
        assert_eq!(p[2], 1.0);
        assert_eq!(opt.accumulators(), &[4.0, 0.0625, 0.0]);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0).0, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![0.3, 0.4];
        assert_eq!(clip_global_norm(&mut small, 1.0), (0.5, 0.5));
        assert_eq!(small, vec![0.3, 0.4]);
    }
}
