//! Image-space penalty terms added to the attack loss.
//!
//! Each penalty returns its value together with its analytic gradient with
//! respect to the image being optimized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Largest intensity of a displayable image.
pub const MAX_INTENSITY: f64 = 255.0;

/// Weights of the three penalties. A weight of zero removes its term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerWeights {
    /// Weight of the squared L2 distance to the original image.
    pub lambda_l2: f64,
    /// Weight of the bounded-range penalty.
    pub w_br: f64,
    /// Weight of the total-variation penalty.
    pub w_tv: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self {
            lambda_l2: 3e-6,
            w_br: 0.01,
            w_tv: 0.01,
        }
    }
}

impl RegularizerWeights {
    pub const NONE: Self = Self {
        lambda_l2: 0.0,
        w_br: 0.0,
        w_tv: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_l2", self.lambda_l2), ("w_br", self.w_br), ("w_tv", self.w_tv)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// A penalty value and its gradient.
#[derive(Debug, Clone)]
pub struct Penalty<T: Real> {
    pub value: T,
    pub grad: Tensor<T>,
}

/// `Σ (current − original)²`.
pub fn l2_distance_sq<T: Real>(current: &Tensor<T>, original: &Tensor<T>) -> Result<Penalty<T>> {
    current.same_shape(original, "l2_distance_sq")?;
    let mut value = T::zero();
    let grad = current
        .data()
        .iter()
        .zip(original.data())
        .map(|(&c, &o)| {
            let d = c - o;
            value += d * d;
            d + d
        })
        .collect();
    Ok(Penalty {
        value,
        grad: Tensor::new(current.shape().to_vec(), grad)?,
    })
}

/// Bounded-range penalty: each pixel contributes `−p` below 0 and `p − 255`
/// above 255. The gradient is `−1` / `+1` strictly outside the range and 0
/// inside and at the two boundary points.
pub fn br_penalty<T: Real>(image: &Tensor<T>) -> Penalty<T> {
    let hi = T::lit(MAX_INTENSITY);
    let mut value = T::zero();
    let grad = image.map(|p| {
        if p < T::zero() {
            value += -p;
            -T::one()
        } else if p > hi {
            value += p - hi;
            T::one()
        } else {
            T::zero()
        }
    });
    Penalty { value, grad }
}

/// Total variation: `(1/(H·W)) Σ_{c,y,x} [(x[c,y,x+1] − x[c,y,x])² + (x[c,y+1,x] − x[c,y,x])²]`.
///
/// Neighbour differences that would fall outside the image are omitted. The
/// normalizer counts pixels per channel, not channels.
pub fn tv_penalty<T: Real>(image: &Tensor<T>) -> Result<Penalty<T>> {
    let (c, h, w) = image.chw()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("tv_penalty", "H ≥ 1 and W ≥ 1", image.shape()));
    }
    let norm = T::one() / T::from_usize(h * w).expect("pixel count as float");
    let two = T::lit(2.0) * norm;
    let x = image.data();
    let mut grad = vec![T::zero(); x.len()];
    let mut value = T::zero();
    for ch in 0..c {
        let base = ch * h * w;
        for row in 0..h {
            for col in 0..w {
                let i = base + row * w + col;
                if col + 1 < w {
                    let d = x[i + 1] - x[i];
                    value += d * d;
                    grad[i + 1] += two * d;
                    grad[i] -= two * d;
                }
                if row + 1 < h {
                    let d = x[i + w] - x[i];
                    value += d * d;
                    grad[i + w] += two * d;
                    grad[i] -= two * d;
                }
            }
        }
    }
    Ok(Penalty {
        value: value * norm,
        grad: Tensor::new(image.shape().to_vec(), grad)?,
    })
}

/// Number of pixels strictly outside `[0, 255]`.
pub fn out_of_range_count<T: Real>(image: &Tensor<T>) -> usize {
    let hi = T::lit(MAX_INTENSITY);
    image.data().iter().filter(|&&p| p < T::zero() || p > hi).count()
}

/// Weighted sum of the three penalties and its gradient.
pub fn weighted_penalty<T: Real>(
    current: &Tensor<T>,
    original: &Tensor<T>,
    weights: &RegularizerWeights,
) -> Result<Penalty<T>> {
    let mut value = T::zero();
    let mut grad = Tensor::zeros(current.shape().to_vec());
    let mut add = |w: f64, p: Penalty<T>| {
        let w = T::lit(w);
        value += w * p.value;
        for (g, d) in grad.data_mut().iter_mut().zip(p.grad.data()) {
            *g += w * *d;
        }
    };
    if weights.lambda_l2 != 0.0 {
        add(weights.lambda_l2, l2_distance_sq(current, original)?);
    }
    if weights.w_br != 0.0 {
        add(weights.w_br, br_penalty(current));
    }
    if weights.w_tv != 0.0 {
        add(weights.w_tv, tv_penalty(current)?);
    }
    Ok(Penalty { value, grad })
}
