use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Central-difference gradient checker.
///
/// The function under test returns its value together with its analytic
/// gradient; the checker perturbs randomly sampled coordinates by `±step`
/// and reports the worst relative disagreement, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-3,
            samples: 100,
            seed: 0,
        }
    }
}

impl GradCheck {
    pub fn max_relative_error<F>(&self, f: F, x: &Tensor<f64>) -> f64
    where
        F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
    {
        self.max_relative_error_where(f, x, |_| true)
    }

    /// Like [`max_relative_error`](Self::max_relative_error) but only samples
    /// coordinates accepted by `admit` (e.g. to stay clear of kinks).
    pub fn max_relative_error_where<F, A>(&self, f: F, x: &Tensor<f64>, admit: A) -> f64
    where
        F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
        A: Fn(usize) -> bool,
    {
        assert!(self.step > 0.0, "finite-difference step must be positive");
        let candidates: Vec<usize> = (0..x.len()).filter(|&i| admit(i)).collect();
        if candidates.is_empty() {
            return 0.0;
        }
        let (_, analytic) = f(x);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut probe = x.clone();
        let mut worst = 0.0f64;
        for _ in 0..self.samples {
            let i = candidates[rng.random_range(0..candidates.len())];
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + self.step;
            let (up, _) = f(&probe);
            probe.data_mut()[i] = orig - self.step;
            let (down, _) = f(&probe);
            probe.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * self.step);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        worst
    }
}

/// Convenience wrapper over [`GradCheck`] with seed 0.
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, step: f64, sample_count: usize) -> f64
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    GradCheck {
        step,
        samples: sample_count,
        seed: 0,
    }
    .max_relative_error(f, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::from_fn(vec![50], |i| (i as f64 - 20.0) * 0.37);
        let err = finite_difference_check(
            |x| {
                let v = x.data().iter().map(|v| v * v).sum();
                (v, x.map(|v| 2.0 * v))
            },
            &x,
            1e-3,
            100,
        );
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_fn(vec![10], |i| i as f64);
        let err = finite_difference_check(|x| (4.2, Tensor::zeros(x.shape().to_vec())), &x, 1e-3, 20);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::from_fn(vec![5], |i| 1.0 + i as f64);
        let err = finite_difference_check(
            |x| {
                let v = x.data().iter().map(|v| v * v).sum();
                (v, x.map(|v| 3.0 * v))
            },
            &x,
            1e-3,
            10,
        );
        assert!(err > 0.3, "{err}");
    }
}
