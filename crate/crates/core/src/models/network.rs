use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// One layer of a feed-forward stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fixed multiplication by a constant; carries no parameters.
    /// `factor · (x − offset)`.
    Scale {
        factor: f32,
        #[serde(default)]
        offset: f32,
    },
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// Fully connected layer over the flattened input.
    Dense { units: usize },
}

/// How parameters are placed on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Params {
    /// Parameters receive gradients (training).
    Trainable,
    /// Parameters are constants (inference, input-gradient attacks).
    Frozen,
}

/// A feed-forward stack of layers with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// `(weight, bias)` for every parameterized layer, in layer order.
    params: Vec<(Tensor, Tensor)>,
}

impl Network {
    /// Builds the stack with Kaiming-uniform weights scaled by `init_scale`
    /// and zero biases.
    pub fn init(input_shape: &[usize], layers: Vec<LayerSpec>, init_scale: f32, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shapes = param_shapes(input_shape, &layers)?;
        let params = shapes
            .into_iter()
            .map(|(w_shape, b_shape)| {
                let fan_in: usize = w_shape[1..].iter().product();
                let bound = init_scale * (6.0 / fan_in as f32).sqrt();
                let w = Tensor::from_fn(w_shape, |_| rng.random_range(-bound..bound));
                (w, Tensor::zeros(b_shape))
            })
            .collect();
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            params,
        })
    }

    /// Reassembles a network from stored parameters, validating their shapes.
    pub fn from_parts(input_shape: &[usize], layers: Vec<LayerSpec>, params: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let shapes = param_shapes(input_shape, &layers)?;
        if shapes.len() != params.len() {
            return Err(Error::shape("parameterized layer count", shapes.len(), params.len()));
        }
        for ((ws, bs), (w, b)) in shapes.iter().zip(&params) {
            if w.shape() != ws.as_slice() {
                return Err(Error::shape("layer weight", ws, w.shape()));
            }
            if b.shape() != bs.as_slice() {
                return Err(Error::shape("layer bias", bs, b.shape()));
            }
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            params,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[(Tensor, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(Tensor, Tensor)] {
        &mut self.params
    }

    pub fn output_shape(&self) -> Vec<usize> {
        // Validated at construction.
        walk_shapes(&self.input_shape, &self.layers).expect("validated layers").0
    }

    /// Records the forward pass. Returns the output and the parameter
    /// variables as `(weight, bias)` pairs.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var, params: Params) -> Result<(Var, Vec<(Var, Var)>)> {
        if tape.value(input).shape() != self.input_shape.as_slice() {
            return Err(Error::shape("network input", &self.input_shape, tape.value(input).shape()));
        }
        let place = |tape: &mut Tape<T>, t: &Tensor| match params {
            Params::Trainable => tape.leaf(t.cast()),
            Params::Frozen => tape.constant(t.cast()),
        };
        let mut x = input;
        let mut vars = Vec::with_capacity(self.params.len());
        let mut next = self.params.iter();
        for layer in &self.layers {
            x = match *layer {
                LayerSpec::Scale { factor, offset } => {
                    let shifted = if offset == 0.0 {
                        x
                    } else {
                        let shape = tape.value(x).shape().to_vec();
                        let o = tape.constant(Tensor::full(shape, T::lit(offset as f64)));
                        tape.sub(x, o)?
                    };
                    tape.scale(shifted, T::lit(factor as f64))
                }
                LayerSpec::Relu => tape.relu(x),
                LayerSpec::Conv { stride, padding, .. } => {
                    let (w, b) = next.next().expect("parameter per conv layer");
                    let (wv, bv) = (place(tape, w), place(tape, b));
                    vars.push((wv, bv));
                    tape.conv2d(x, wv, bv, stride, padding)?
                }
                LayerSpec::Dense { .. } => {
                    let (w, b) = next.next().expect("parameter per dense layer");
                    let (wv, bv) = (place(tape, w), place(tape, b));
                    vars.push((wv, bv));
                    tape.dense(x, wv, bv)?
                }
            };
        }
        Ok((x, vars))
    }

    pub fn params_finite(&self) -> bool {
        self.params.iter().all(|(w, b)| w.is_finite() && b.is_finite())
    }
}

type ShapePair = (Vec<usize>, Vec<usize>);

fn param_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<Vec<ShapePair>> {
    Ok(walk_shapes(input_shape, layers)?.1)
}

/// Propagates shapes through the stack; returns the output shape and the
/// parameter shapes.
fn walk_shapes(input_shape: &[usize], layers: &[LayerSpec]) -> Result<(Vec<usize>, Vec<ShapePair>)> {
    let mut shape = input_shape.to_vec();
    let mut params = Vec::new();
    for layer in layers {
        match *layer {
            LayerSpec::Scale { .. } | LayerSpec::Relu => {}
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::shape("conv layer input", "C×H×W", &shape));
                };
                if kernel == 0 || stride == 0 || filters == 0 {
                    return Err(Error::InvalidConfig(format!("degenerate conv layer {layer:?}")));
                }
                if kernel > h + 2 * padding || kernel > w + 2 * padding {
                    return Err(Error::shape("conv layer kernel vs input", [h, w], kernel));
                }
                params.push((vec![filters, c, kernel, kernel], vec![filters]));
                shape = vec![
                    filters,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ];
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::InvalidConfig("dense layer with zero units".into()));
                }
                let n: usize = shape.iter().product();
                params.push((vec![units, n], vec![units]));
                shape = vec![units];
            }
        }
    }
    Ok((shape, params))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_of_default_classifier_stack() {
        let layers = vec![
            LayerSpec::Conv {
                filters: 8,
                kernel: 3,
                stride: 1,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Conv {
                filters: 16,
                kernel: 3,
                stride: 2,
                padding: 0,
            },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 10 },
        ];
        let (out, params) = walk_shapes(&[1, 28, 28], &layers).unwrap();
        assert_eq!(out, vec![10]);
        assert_eq!(params[0].0, vec![8, 1, 3, 3]);
        assert_eq!(params[1].0, vec![16, 8, 3, 3]);
        assert_eq!(params[2].0, vec![10, 16 * 12 * 12]);
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let layers = vec![LayerSpec::Dense { units: 2 }];
        let bad = vec![(Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![2]))];
        assert!(Network::from_parts(&[1, 2, 2], layers, bad).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let layers = vec![LayerSpec::Dense { units: 3 }];
        let a = Network::init(&[1, 2, 2], layers.clone(), 1.0, &mut rng(9)).unwrap();
        let b = Network::init(&[1, 2, 2], layers, 1.0, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }
}
