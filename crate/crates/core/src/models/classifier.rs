use crate::autodiff::{softmax, Tape, Var};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::network::{rng, LayerSpec, Network, Params};
use super::{param_entries, take_params, Architecture};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    net: Network,
    categories: usize,
}

/// Output of [`ClassifierModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Tensor,
}

impl Prediction {
    pub fn confidence(&self) -> f32 {
        self.probabilities.data()[self.label]
    }
}

impl ClassifierModel {
    /// Fixed input scaling folded into the network: pixels stay on the
    /// 0–255 scale everywhere outside the model.
    pub const INPUT_SCALE: f32 = 1.0 / 255.0;

    /// `scale → conv(8, 3×3, s1) → relu → conv(16, 3×3, s2) → relu → dense`.
    pub fn default_layers(categories: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Scale {
                factor: Self::INPUT_SCALE,
                offset: 0.0,
            },
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
            LayerSpec::Dense { units: categories },
        ]
    }

    pub fn new(input_shape: &[usize], categories: usize, layers: Vec<LayerSpec>, init_scale: f32, seed: u64) -> Result<Self> {
        let net = Network::init(input_shape, layers, init_scale, &mut rng(seed))?;
        Self::from_network(net, categories)
    }

    pub fn from_network(net: Network, categories: usize) -> Result<Self> {
        if net.output_shape() != [categories] {
            return Err(Error::shape("classifier output", [categories], net.output_shape()));
        }
        if categories < 2 {
            return Err(Error::InvalidConfig("a classifier needs at least two categories".into()));
        }
        Ok(Self { net, categories })
    }

    /// Default architecture sized for `dataset`.
    pub fn for_dataset(dataset: &LabeledImageSet, init_scale: f32, seed: u64) -> Result<Self> {
        let shape = dataset.image_shape().ok_or(Error::EmptyDataset)?;
        let categories = dataset.categories();
        Self::new(shape, categories, Self::default_layers(categories), init_scale, seed)
    }

    pub fn input_shape(&self) -> &[usize] {
        self.net.input_shape()
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Records the logits for `input` on `tape`.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, input: Var, params: Params) -> Result<(Var, Vec<(Var, Var)>)> {
        self.net.forward(tape, input, params)
    }

    /// `M(x)`: label and class probabilities. Ties go to the lowest index.
    pub fn predict(&self, image: &Tensor) -> Result<Prediction> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(image.clone());
        let (z, _) = self.logits(&mut tape, x, Params::Frozen)?;
        let probabilities = softmax(tape.value(z));
        Ok(Prediction {
            label: probabilities.argmax(),
            probabilities,
        })
    }

    pub(super) fn to_parts(&self) -> (Architecture, Vec<(String, Tensor)>) {
        (
            Architecture::Classifier {
                input_shape: self.input_shape().to_vec(),
                categories: self.categories,
                layers: self.net.layers().to_vec(),
            },
            param_entries("layer", &self.net),
        )
    }

    pub(super) fn from_parts(arch: Architecture, mut entries: Vec<(String, Tensor)>) -> Result<Self> {
        let Architecture::Classifier {
            input_shape,
            categories,
            layers,
        } = arch
        else {
            return Err(Error::CorruptHeader("not a classifier".into()));
        };
        let params = take_params("layer", &mut entries)?;
        Self::from_network(Network::from_parts(&input_shape, layers, params)?, categories)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Model;

    #[test]
    fn zero_weights_with_biased_output_predict_that_category() {
        let mut m = ClassifierModel::new(&[1, 8, 8], 5, ClassifierModel::default_layers(5), 1.0, 3).unwrap();
        let last = m.network_mut().params_mut().last_mut().unwrap();
        last.0.data_mut().iter_mut().for_each(|w| *w = 0.0);
        last.1.data_mut().copy_from_slice(&[0.0, 0.1, 0.0, 2.0, 0.0]);
        let img = Tensor::from_fn(vec![1, 8, 8], |i| (i * 31 % 256) as f32);
        assert_eq!(m.predict(&img).unwrap().label, 3);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = ClassifierModel::new(&[1, 8, 8], 10, ClassifierModel::default_layers(10), 1.0, 1).unwrap();
        for s in 0..100u32 {
            let img = Tensor::from_fn(vec![1, 8, 8], |i| (((i as u32).wrapping_mul(2654435761) ^ s.wrapping_mul(97)) % 256) as f32);
            let p = m.predict(&img).unwrap();
            let total: f32 = p.probabilities.data().iter().sum();
            assert!((total - 1.0).abs() < 1e-5);
            assert_eq!(p.label, p.probabilities.argmax());
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = ClassifierModel::new(&[1, 8, 8], 10, ClassifierModel::default_layers(10), 1.0, 1).unwrap();
        assert!(matches!(m.predict(&Tensor::zeros(vec![1, 7, 8])), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ClassifierModel::new(&[1, 8, 8], 3, ClassifierModel::default_layers(3), 1.0, 2).unwrap();
        let path = dir.path().join("m.tc");
        Model::Classifier(m.clone()).save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), Model::Classifier(m));
    }
}
