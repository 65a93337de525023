//! Iterative generation of just-noticeably-different adversarial images.
//!
//! Starting from `x(0)`, every iteration evaluates
//!
//! ```text
//! cost(x(k)) = loss(M(x(k))) + λ‖x(k) − x(0)‖² + w_br·BR(x(k)) + w_tv·TV(x(k))
//! ```
//!
//! and takes a plain gradient step `x(k+1) = x(k) − α ∇cost`. The first
//! iteration `K` at which the model's decision changes yields the JND image
//! `x(K)`; the loop keeps going to `max_iterations` to also produce the
//! final-step image. Pixels are never clamped inside the loop.

mod io;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax, Tape, Var};
use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::models::{ClassifierModel, DetectorModel, Params};
use crate::regularizers::{weighted_penalty, RegularizerWeights};
use crate::tensor::{Real, Tensor};

pub use io::{read_trace_csv, write_trace_csv, AttackSummary};

/// Which machine is attacked and what counts as success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Untargeted: success once the predicted label differs from the true one.
    Classifier,
    /// Detector loss matches both target category and target box.
    DetectorFullOutput,
    /// Detector loss matches the target category only.
    DetectorClassOnly,
}

impl AttackMode {
    pub fn is_detector(self) -> bool {
        !matches!(self, AttackMode::Classifier)
    }
}

/// Loss term driving an untargeted classifier attack downhill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierLoss {
    /// `−log(1 − p_y)`; keeps a useful gradient while the model is confident.
    ComplementCrossEntropy,
    /// `log p_y`, i.e. ascent on the usual cross-entropy. Its gradient
    /// vanishes as `p_y → 1`.
    NegativeCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorTarget {
    pub category: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Gradient-descent step size.
    pub alpha: f64,
    pub weights: RegularizerWeights,
    pub max_iterations: usize,
    pub mode: AttackMode,
    pub classifier_loss: ClassifierLoss,
    pub detector_target: Option<DetectorTarget>,
    pub detector_success_threshold: f64,
    /// Weight of the box term in full-output detector mode.
    pub detector_box_weight: f64,
    /// Keep every `record_stride`-th iteration in the trace (plus `K` and the last).
    pub record_stride: usize,
    /// Stop at `K` instead of running to `max_iterations`.
    pub stop_at_success: bool,
    /// Retain `x(0..=K)` so the JND minimality can be re-checked later.
    pub keep_iterates: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            weights: RegularizerWeights::default(),
            max_iterations: 2000,
            mode: AttackMode::Classifier,
            classifier_loss: ClassifierLoss::ComplementCrossEntropy,
            detector_target: None,
            detector_success_threshold: 0.8,
            detector_box_weight: 1.0,
            record_stride: 1,
            stop_at_success: false,
            keep_iterates: false,
        }
    }
}

impl AttackConfig {
    /// Same settings with all three regularizers switched off.
    pub fn without_regularization(&self) -> Self {
        Self {
            weights: RegularizerWeights::NONE,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be a finite positive number, got {}", self.alpha));
        }
        self.weights.validate()?;
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1".into());
        }
        if !(self.detector_success_threshold > 0.0 && self.detector_success_threshold < 1.0) {
            return bad(format!(
                "detector success threshold must lie in (0,1), got {}",
                self.detector_success_threshold
            ));
        }
        if !(self.detector_box_weight >= 0.0 && self.detector_box_weight.is_finite()) {
            return bad("detector box weight must be non-negative".into());
        }
        match (self.mode.is_detector(), &self.detector_target) {
            (true, None) => return Err(Error::MissingTarget),
            (false, Some(_)) => return bad("detector target given for a classifier attack".into()),
            (true, Some(t)) => t.bbox.validate()?,
            (false, None) => {}
        }
        Ok(())
    }
}

/// One row of the attack trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub cost: f64,
    pub loss: f64,
    pub predicted_label: usize,
    pub predicted_confidence: f64,
    pub true_label_confidence: f64,
    /// `‖n(k)‖₂ = α‖∇cost(x(k))‖₂`.
    pub noise_norm: f64,
    /// Best probability among labels other than `y` (classifier) or the
    /// probability of the target category (detector).
    pub adversarial_confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// `K`, the first iteration at which the attack succeeds.
    pub first_success_iteration: Option<usize>,
    /// `x(K)`.
    pub jnd_image: Option<Tensor>,
    /// Image after the last iteration that ran.
    pub final_image: Tensor,
    pub jnd_value: Option<f64>,
    pub trace: Vec<IterationRecord>,
    /// Label the model assigns to `x(0)` (`y`).
    pub original_label: usize,
    pub original_image: Tensor,
    /// Index of `final_image` in the iterate sequence.
    pub iterations_run: usize,
    /// `x(0..=K)` when [`AttackConfig::keep_iterates`] is set and the attack succeeded.
    pub iterates: Option<Vec<Tensor>>,
}

/// An attack that stopped early, with whatever it produced so far.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct AttackError {
    #[source]
    pub source: Error,
    pub partial: Option<Box<AttackOutcome>>,
}

impl From<Error> for AttackError {
    fn from(source: Error) -> Self {
        Self { source, partial: None }
    }
}

/// What the model makes of one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub predicted_label: usize,
    pub predicted_confidence: f64,
    /// Probability of the original label `y`.
    pub reference_confidence: f64,
    /// See [`IterationRecord::adversarial_confidence`].
    pub adversarial_confidence: f64,
    pub success: bool,
}

/// The loss term of the cost together with the success test.
pub trait Objective {
    fn input_shape(&self) -> &[usize];

    /// Records the loss term for `image` and judges the image.
    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, image: Var) -> Result<(Var, Judgement)>;

    /// Label the model assigns to the unmodified input.
    fn reference_label(&self) -> usize;
}

/// Untargeted attack on a classifier with true label `y`.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierObjective<'a> {
    pub model: &'a ClassifierModel,
    pub true_label: usize,
    pub loss: ClassifierLoss,
}

impl<'a> ClassifierObjective<'a> {
    pub fn new(model: &'a ClassifierModel, true_label: usize, loss: ClassifierLoss) -> Result<Self> {
        if true_label >= model.categories() {
            return Err(Error::InvalidLabel {
                label: true_label,
                categories: model.categories(),
            });
        }
        Ok(Self { model, true_label, loss })
    }
}

impl Objective for ClassifierObjective<'_> {
    fn input_shape(&self) -> &[usize] {
        self.model.input_shape()
    }

    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, image: Var) -> Result<(Var, Judgement)> {
        let (logits, _) = self.model.logits(tape, image, Params::Frozen)?;
        let loss = match self.loss {
            ClassifierLoss::ComplementCrossEntropy => tape.complement_cross_entropy(logits, self.true_label)?,
            ClassifierLoss::NegativeCrossEntropy => {
                let ce = tape.softmax_cross_entropy(logits, self.true_label)?;
                tape.scale(ce, -T::one())
            }
        };
        let probs = softmax(tape.value(logits));
        let predicted = probs.argmax();
        let p = |i: usize| probs.data()[i].to_f64().unwrap_or(f64::NAN);
        Ok((
            loss,
            Judgement {
                predicted_label: predicted,
                predicted_confidence: p(predicted),
                reference_confidence: p(self.true_label),
                adversarial_confidence: (0..probs.len())
                    .filter(|&i| i != self.true_label)
                    .map(p)
                    .fold(0.0, f64::max),
                success: predicted != self.true_label,
            },
        ))
    }

    fn reference_label(&self) -> usize {
        self.true_label
    }
}

/// Targeted object insertion against the detector.
#[derive(Debug, Clone, Copy)]
pub struct DetectorObjective<'a> {
    pub model: &'a DetectorModel,
    pub target: DetectorTarget,
    /// `Some(w)`: add `w · MSE(box, target box)`; `None`: category only.
    pub box_weight: Option<f64>,
    pub threshold: f64,
    pub reference_label: usize,
}

impl Objective for DetectorObjective<'_> {
    fn input_shape(&self) -> &[usize] {
        self.model.input_shape()
    }

    fn evaluate<T: Real>(&self, tape: &mut Tape<T>, image: Var) -> Result<(Var, Judgement)> {
        let out = self.model.outputs(tape, image, Params::Frozen)?;
        let mut loss = tape.softmax_cross_entropy(out.class_logits, self.target.category)?;
        if let Some(w) = self.box_weight {
            let target = Tensor::new(vec![4], self.target.bbox.to_array().to_vec())?.cast::<T>();
            let target = tape.constant(target);
            let diff = tape.sub(out.bbox, target)?;
            let sq = tape.mul(diff, diff)?;
            let mse = tape.mean(sq);
            let weighted = tape.scale(mse, T::lit(w));
            loss = tape.add(loss, weighted)?;
        }
        let probs = softmax(tape.value(out.class_logits));
        let predicted = probs.argmax();
        let p = |i: usize| probs.data()[i].to_f64().unwrap_or(f64::NAN);
        Ok((
            loss,
            Judgement {
                predicted_label: predicted,
                predicted_confidence: p(predicted),
                reference_confidence: p(self.reference_label),
                adversarial_confidence: p(self.target.category),
                success: predicted == self.target.category && p(predicted) >= self.threshold,
            },
        ))
    }

    fn reference_label(&self) -> usize {
        self.reference_label
    }
}

/// Cost, its loss term, the gradient with respect to the image, and the
/// model's judgement of the image.
#[derive(Debug, Clone)]
pub struct CostEval<T: Real> {
    pub cost: T,
    pub loss: T,
    pub gradient: Tensor<T>,
    pub judgement: Judgement,
}

/// Evaluates the regularized cost at `current` with one reverse pass for the
/// loss term and analytic gradients for the penalties.
pub fn total_cost<O: Objective, T: Real>(
    objective: &O,
    current: &Tensor<T>,
    original: &Tensor<T>,
    weights: &RegularizerWeights,
) -> Result<CostEval<T>> {
    if current.shape() != objective.input_shape() {
        return Err(Error::shape("attack image", objective.input_shape(), current.shape()));
    }
    current.same_shape(original, "original image")?;
    let mut tape = Tape::<T>::new();
    let x = tape.leaf(current.clone());
    let (loss_var, judgement) = objective.evaluate(&mut tape, x)?;
    let loss = tape.value(loss_var).item();
    let mut grads = tape.backward(loss_var)?;
    let mut gradient = grads.take(x);
    let penalty = weighted_penalty(current, original, weights)?;
    for (g, p) in gradient.data_mut().iter_mut().zip(penalty.grad.data()) {
        *g += *p;
    }
    Ok(CostEval {
        cost: loss + penalty.value,
        loss,
        gradient,
        judgement,
    })
}

/// One gradient-descent update. Returns `x(k+1)`, the record for `x(k)`
/// and the judgement of `x(k)`.
pub fn attack_step<O: Objective>(
    objective: &O,
    current: &Tensor,
    original: &Tensor,
    config: &AttackConfig,
    k: usize,
) -> Result<(Tensor, IterationRecord, Judgement)> {
    let eval = total_cost(objective, current, original, &config.weights)?;
    if !eval.gradient.is_finite() {
        return Err(Error::NonFiniteGradient { iteration: k });
    }
    let alpha = config.alpha as f32;
    let mut next = current.clone();
    if alpha != 0.0 {
        for (x, g) in next.data_mut().iter_mut().zip(eval.gradient.data()) {
            *x -= alpha * g;
        }
    }
    let record = IterationRecord {
        k,
        cost: eval.cost as f64,
        loss: eval.loss as f64,
        predicted_label: eval.judgement.predicted_label,
        predicted_confidence: eval.judgement.predicted_confidence,
        true_label_confidence: eval.judgement.reference_confidence,
        noise_norm: config.alpha * eval.gradient.l2_norm(),
        adversarial_confidence: eval.judgement.adversarial_confidence,
    };
    Ok((next, record, eval.judgement))
}

/// Runs the iteration for any objective. `K` is the first iteration whose
/// judgement is a success; `K = 0` is possible when `x(0)` already succeeds.
pub fn run_objective<O: Objective>(
    objective: &O,
    original: &Tensor,
    config: &AttackConfig,
) -> std::result::Result<AttackOutcome, AttackError> {
    config.validate()?;
    let mut outcome = AttackOutcome {
        first_success_iteration: None,
        jnd_image: None,
        final_image: original.clone(),
        jnd_value: None,
        trace: Vec::new(),
        original_label: objective.reference_label(),
        original_image: original.clone(),
        iterations_run: 0,
        iterates: config.keep_iterates.then(Vec::new),
    };
    let mut current = original.clone();
    for k in 0..=config.max_iterations {
        let (next, record, judgement) = match attack_step(objective, &current, original, config, k) {
            Ok(step) => step,
            Err(source) => {
                outcome.final_image = current;
                outcome.iterations_run = k;
                return Err(AttackError {
                    source,
                    partial: Some(Box::new(outcome)),
                });
            }
        };
        let first_success = judgement.success && outcome.first_success_iteration.is_none();
        if let Some(iterates) = outcome.iterates.as_mut() {
            if outcome.first_success_iteration.is_none() {
                iterates.push(current.clone());
            }
        }
        if first_success {
            outcome.first_success_iteration = Some(k);
            outcome.jnd_value = Some(jnd_value(original, &current)?);
            outcome.jnd_image = Some(current.clone());
        }
        let last = k == config.max_iterations || (first_success && config.stop_at_success);
        if k % config.record_stride == 0 || first_success || last {
            outcome.trace.push(record);
        }
        if last {
            break;
        }
        current = next;
    }
    outcome.iterations_run = outcome.trace.last().map_or(0, |r| r.k);
    outcome.final_image = current;
    if outcome.first_success_iteration.is_none() {
        outcome.iterates = outcome.iterates.map(|_| Vec::new());
    }
    Ok(outcome)
}

/// Untargeted classifier attack. Fails if the model does not already assign
/// `true_label` to `original`.
pub fn run_attack(
    model: &ClassifierModel,
    original: &Tensor,
    true_label: usize,
    config: &AttackConfig,
) -> std::result::Result<AttackOutcome, AttackError> {
    if config.mode != AttackMode::Classifier {
        return Err(Error::InvalidConfig(format!("{:?} mode needs a detector", config.mode)).into());
    }
    let objective = ClassifierObjective::new(model, true_label, config.classifier_loss)?;
    let predicted = model.predict(original)?.label;
    if predicted != true_label {
        return Err(Error::NotInitiallyCorrect {
            predicted,
            expected: true_label,
        }
        .into());
    }
    run_objective(&objective, original, config)
}

/// Targeted detector attack: success once the target category is the
/// arg-max with confidence at least the configured threshold.
pub fn run_detector_attack(
    model: &DetectorModel,
    original: &Tensor,
    config: &AttackConfig,
) -> std::result::Result<AttackOutcome, AttackError> {
    let target = config.detector_target.ok_or(Error::MissingTarget)?;
    let box_weight = match config.mode {
        AttackMode::DetectorFullOutput => Some(config.detector_box_weight),
        AttackMode::DetectorClassOnly => None,
        AttackMode::Classifier => {
            return Err(Error::InvalidConfig("classifier mode needs a classifier".into()).into());
        }
    };
    if target.category >= model.categories() {
        return Err(Error::InvalidLabel {
            label: target.category,
            categories: model.categories(),
        }
        .into());
    }
    let objective = DetectorObjective {
        model,
        target,
        box_weight,
        threshold: config.detector_success_threshold,
        reference_label: model.detect(original)?.category,
    };
    run_objective(&objective, original, config)
}

/// `‖x(0) − x(K)‖₂ / ‖x(0)‖₂`.
pub fn jnd_value(original: &Tensor, jnd_image: &Tensor) -> Result<f64> {
    original.same_shape(jnd_image, "jnd_value")?;
    let denom = original.l2_norm();
    if denom == 0.0 {
        return Err(Error::ZeroOriginal);
    }
    let diff: f64 = original
        .data()
        .iter()
        .zip(jnd_image.data())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(diff.sqrt() / denom)
}

/// Outcome of replaying the model over stored iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixCheck {
    pub verified: bool,
    pub checked: usize,
    pub detail: Option<String>,
}

/// Re-runs `model.predict` on every stored `x(k)`, `k ≤ K`, and checks that
/// the label is `y` before `K` and differs from `y` at `K`, and that the
/// stored trace agrees.
pub fn verify_trace_prefix(model: &ClassifierModel, outcome: &AttackOutcome) -> Result<PrefixCheck> {
    let fail = |checked, msg: String| {
        Ok(PrefixCheck {
            verified: false,
            checked,
            detail: Some(msg),
        })
    };
    let Some(big_k) = outcome.first_success_iteration else {
        return fail(0, "attack did not succeed".into());
    };
    let Some(iterates) = &outcome.iterates else {
        return fail(0, "no stored iterates".into());
    };
    if iterates.len() != big_k + 1 {
        return fail(0, format!("expected {} iterates, found {}", big_k + 1, iterates.len()));
    }
    let y = outcome.original_label;
    for (k, image) in iterates.iter().enumerate() {
        let label = model.predict(image)?.label;
        let ok = if k < big_k { label == y } else { label != y };
        if !ok {
            return fail(k, format!("iterate {k} predicted {label} (y = {y}, K = {big_k})"));
        }
    }
    if outcome.jnd_image.as_ref() != iterates.last() {
        return fail(big_k + 1, "stored JND image differs from x(K)".into());
    }
    for r in &outcome.trace {
        let ok = match r.k.cmp(&big_k) {
            std::cmp::Ordering::Less => r.predicted_label == y,
            std::cmp::Ordering::Equal => r.predicted_label != y,
            std::cmp::Ordering::Greater => true,
        };
        if !ok {
            return fail(big_k + 1, format!("trace row {} disagrees with the replay", r.k));
        }
    }
    Ok(PrefixCheck {
        verified: true,
        checked: iterates.len(),
        detail: None,
    })
}
