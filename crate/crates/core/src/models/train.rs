use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{DetectionSample, DetectionSet, LabeledImageSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::network::{rng, Network, Params};
use super::{ClassifierModel, DetectorModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier on the Kaiming-uniform initialization bound.
    pub init_scale: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 8,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    /// Preset for the shapes detector: the default schedule with smaller batches.
    pub fn detector() -> Self {
        Self {
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

// Separate RNG streams for initialization and shuffling.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4500;

/// Gradient accumulator shaped like a list of networks' parameters.
struct GradSum {
    sums: Vec<(Tensor, Tensor)>,
}

impl GradSum {
    fn zeros_like(nets: &[&Network]) -> Self {
        let sums = nets
            .iter()
            .flat_map(|n| n.params())
            .map(|(w, b)| (Tensor::zeros(w.shape().to_vec()), Tensor::zeros(b.shape().to_vec())))
            .collect();
        Self { sums }
    }

    fn add(&mut self, tape: &Tape<f32>, seed: Var, vars: &[(Var, Var)]) -> Result<()> {
        let mut grads = tape.backward(seed)?;
        for ((sw, sb), &(wv, bv)) in self.sums.iter_mut().zip(vars) {
            for (s, g) in sw.data_mut().iter_mut().zip(grads.take(wv).data()) {
                *s += *g;
            }
            for (s, g) in sb.data_mut().iter_mut().zip(grads.take(bv).data()) {
                *s += *g;
            }
        }
        Ok(())
    }

    /// `param -= lr · sum / count` across all networks.
    fn apply(self, nets: &mut [&mut Network], lr: f32, count: usize) {
        let factor = lr / count as f32;
        let params = nets.iter_mut().flat_map(|n| n.params_mut().iter_mut());
        for ((w, b), (gw, gb)) in params.zip(self.sums) {
            for (p, g) in w.data_mut().iter_mut().zip(gw.data()) {
                *p -= factor * g;
            }
            for (p, g) in b.data_mut().iter_mut().zip(gb.data()) {
                *p -= factor * g;
            }
        }
    }
}

impl ClassifierModel {
    /// Mean softmax cross-entropy of the batch under the current parameters.
    pub fn batch_loss(&self, batch: &[(&Tensor, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for &(image, label) in batch {
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(image.clone());
            let (z, _) = self.logits(&mut tape, x, Params::Frozen)?;
            let loss = tape.softmax_cross_entropy(z, label)?;
            total += tape.value(loss).item() as f64;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    /// One SGD step on the mean cross-entropy of `batch`; returns the loss
    /// before the update.
    pub fn train_step(&mut self, batch: &[(&Tensor, usize)], learning_rate: f32) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = GradSum::zeros_like(&[self.network()]);
        let mut total = 0.0;
        for &(image, label) in batch {
            let mut tape = Tape::<f32>::new();
            let x = tape.constant(image.clone());
            let (z, vars) = self.logits(&mut tape, x, Params::Trainable)?;
            let loss = tape.softmax_cross_entropy(z, label)?;
            total += tape.value(loss).item() as f64;
            sum.add(&tape, loss, &vars)?;
        }
        sum.apply(&mut [self.network_mut()], learning_rate, batch.len());
        Ok(total / batch.len() as f64)
    }
}

fn check_images<'a>(mut images: impl Iterator<Item = &'a Tensor>) -> Result<&'a [usize]> {
    let first = images.next().ok_or(Error::EmptyDataset)?;
    for img in images {
        first.same_shape(img, "training image")?;
    }
    Ok(first.shape())
}

pub fn train_classifier(dataset: &LabeledImageSet, config: &TrainConfig) -> Result<ClassifierModel> {
    train_classifier_with(dataset, config, |_| {})
}

/// Mini-batch SGD on softmax cross-entropy, reporting after each epoch.
/// Deterministic given the seed.
pub fn train_classifier_with(
    dataset: &LabeledImageSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<ClassifierModel> {
    config.validate()?;
    check_images(dataset.images.iter())?;
    let mut model = ClassifierModel::for_dataset(dataset, config.init_scale, config.seed)?;
    let mut shuffle = rng(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Tensor, usize)> = chunk.iter().map(|&i| (&dataset.images[i], dataset.labels[i])).collect();
            total += model.train_step(&batch, config.learning_rate)? * batch.len() as f64;
            step += 1;
            if !model.network().params_finite() {
                return Err(Error::Diverged { step });
            }
        }
        on_epoch(&EpochStats {
            epoch,
            mean_loss: total / dataset.len() as f64,
        });
    }
    Ok(model)
}

pub fn evaluate_accuracy(model: &ClassifierModel, dataset: &LabeledImageSet) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    for (image, label) in dataset.iter() {
        if model.predict(image)?.label == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Box coordinates live in [0,1], so an unweighted squared error is tiny
/// next to the category loss and the box head barely trains.
const BOX_LOSS_WEIGHT: f32 = 30.0;

impl DetectorModel {
    /// Category cross-entropy plus, for non-background samples, the weighted
    /// mean squared error of the box.
    fn sample_loss(&self, tape: &mut Tape<f32>, sample: &DetectionSample, params: Params) -> Result<(Var, Vec<(Var, Var)>)> {
        let x = tape.constant(sample.image.clone());
        let out = self.outputs(tape, x, params)?;
        let ce = tape.softmax_cross_entropy(out.class_logits, sample.category)?;
        if sample.category == 0 {
            return Ok((ce, out.params));
        }
        let target = tape.constant(Tensor::new(vec![4], sample.bbox.to_array().to_vec())?);
        let diff = tape.sub(out.bbox, target)?;
        let sq = tape.mul(diff, diff)?;
        let mse = tape.mean(sq);
        let box_term = tape.scale(mse, BOX_LOSS_WEIGHT);
        Ok((tape.add(ce, box_term)?, out.params))
    }

    pub fn batch_loss(&self, batch: &[&DetectionSample]) -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            let mut tape = Tape::new();
            let (loss, _) = self.sample_loss(&mut tape, s, Params::Frozen)?;
            total += tape.value(loss).item() as f64;
        }
        Ok(total / batch.len().max(1) as f64)
    }

    pub fn train_step(&mut self, batch: &[&DetectionSample], learning_rate: f32) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sum = GradSum::zeros_like(&self.networks());
        let mut total = 0.0;
        for s in batch {
            let mut tape = Tape::new();
            let (loss, vars) = self.sample_loss(&mut tape, s, Params::Trainable)?;
            total += tape.value(loss).item() as f64;
            sum.add(&tape, loss, &vars)?;
        }
        sum.apply(&mut self.networks_mut(), learning_rate, batch.len());
        Ok(total / batch.len() as f64)
    }
}

pub fn train_detector(dataset: &DetectionSet, config: &TrainConfig) -> Result<DetectorModel> {
    train_detector_with(dataset, config, |_| {})
}

pub fn train_detector_with(
    dataset: &DetectionSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<DetectorModel> {
    config.validate()?;
    let shape = check_images(dataset.samples.iter().map(|s| &s.image))?.to_vec();
    let categories = dataset.category_names.len();
    for s in &dataset.samples {
        s.bbox.validate()?;
        if s.category >= categories {
            return Err(Error::InvalidLabel {
                label: s.category,
                categories,
            });
        }
    }
    let mut model = DetectorModel::new(&shape, categories, DetectorModel::default_trunk(), config.init_scale, config.seed)?;
    let mut shuffle = rng(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&DetectionSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            total += model.train_step(&batch, config.learning_rate)? * batch.len() as f64;
            step += 1;
            if !model.networks().iter().all(|n| n.params_finite()) {
                return Err(Error::Diverged { step });
            }
        }
        on_epoch(&EpochStats {
            epoch,
            mean_loss: total / dataset.len() as f64,
        });
    }
    Ok(model)
}

/// Fraction of samples whose arg-max category is correct.
pub fn evaluate_detector(model: &DetectorModel, dataset: &DetectionSet) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    for s in &dataset.samples {
        if model.detect(&s.image)?.category == s.category {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}
