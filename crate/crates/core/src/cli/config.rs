//! Flat `key = value` settings shared by every subcommand.
//!
//! Resolution order is built-in defaults, then a config file, then
//! command-line flags; the resolved set is written back out in the same
//! format so a run can be repeated with `--config resolved.conf`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::attack::{AttackConfig, AttackMode, ClassifierLoss, DetectorTarget};
use crate::data::{BoundingBox, ShapeKind};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::models::TrainConfig;
use crate::regularizers::RegularizerWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Classifier,
    Detector,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classifier" => Ok(Self::Classifier),
            "detector" => Ok(Self::Detector),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?} (classifier | detector)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    // training
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_scale: f32,
    pub train_count: usize,
    pub test_count: usize,
    // attack
    pub alpha: f64,
    pub lambda_l2: f64,
    pub w_br: f64,
    pub w_tv: f64,
    pub max_iters: usize,
    pub record_stride: usize,
    pub mode: AttackMode,
    pub classifier_loss: ClassifierLoss,
    pub target_class: usize,
    pub target_box: BoundingBox,
    pub detector_threshold: f64,
    pub box_weight: f64,
    // metrics
    pub uiqi_window: usize,
    pub vif_scales: usize,
    pub vif_noise_variance: f64,
}

/// Every key understood by [`Settings::set`], in output order.
pub const KEYS: &[&str] = &[
    "seed",
    "learning_rate",
    "batch_size",
    "epochs",
    "init_scale",
    "train_count",
    "test_count",
    "alpha",
    "lambda_l2",
    "w_br",
    "w_tv",
    "max_iters",
    "record_stride",
    "mode",
    "classifier_loss",
    "target_class",
    "target_box",
    "detector_threshold",
    "box_weight",
    "uiqi_window",
    "vif_scales",
    "vif_noise_variance",
];

impl Settings {
    /// Built-in defaults. Training sizes depend on the model: MNIST is split
    /// 9000/1000, the synthetic shapes set 4000/400.
    pub fn defaults(kind: ModelKind) -> Self {
        let train = match kind {
            ModelKind::Classifier => TrainConfig::default(),
            ModelKind::Detector => TrainConfig::detector(),
        };
        let attack = AttackConfig::default();
        let metrics = MetricConfig::default();
        let (train_count, test_count, mode) = match kind {
            ModelKind::Classifier => (9000, 1000, AttackMode::Classifier),
            ModelKind::Detector => (4000, 400, AttackMode::DetectorFullOutput),
        };
        Self {
            seed: train.seed,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            init_scale: train.init_scale,
            train_count,
            test_count,
            alpha: attack.alpha,
            lambda_l2: attack.weights.lambda_l2,
            w_br: attack.weights.w_br,
            w_tv: attack.weights.w_tv,
            max_iters: attack.max_iterations,
            record_stride: attack.record_stride,
            mode,
            classifier_loss: attack.classifier_loss,
            target_class: ShapeKind::Square.index(),
            target_box: BoundingBox {
                cx: 0.5,
                cy: 0.5,
                w: 0.25,
                h: 0.25,
            },
            detector_threshold: attack.detector_success_threshold,
            box_weight: attack.detector_box_weight,
            uiqi_window: metrics.uiqi_window,
            vif_scales: metrics.vif_scales,
            vif_noise_variance: metrics.vif_noise_variance,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "train_count" => self.train_count = num(key, value)?,
            "test_count" => self.test_count = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "lambda_l2" => self.lambda_l2 = num(key, value)?,
            "w_br" => self.w_br = num(key, value)?,
            "w_tv" => self.w_tv = num(key, value)?,
            "max_iters" => self.max_iters = num(key, value)?,
            "record_stride" => self.record_stride = num(key, value)?,
            "mode" => self.mode = parse_mode(value)?,
            "classifier_loss" => {
                self.classifier_loss = match value {
                    "complement-cross-entropy" => ClassifierLoss::ComplementCrossEntropy,
                    "negative-cross-entropy" => ClassifierLoss::NegativeCrossEntropy,
                    _ => return Err(Error::InvalidConfig(format!("classifier_loss: unknown {value:?}"))),
                }
            }
            "target_class" => {
                self.target_class = match ShapeKind::from_name(value) {
                    Some(kind) => kind.index(),
                    None => num(key, value)?,
                }
            }
            "target_box" => {
                let parts: Vec<f32> = value.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
                self.target_box = BoundingBox::from_slice(&parts)?;
            }
            "detector_threshold" => self.detector_threshold = num(key, value)?,
            "box_weight" => self.box_weight = num(key, value)?,
            "uiqi_window" => self.uiqi_window = num(key, value)?,
            "vif_scales" => self.vif_scales = num(key, value)?,
            "vif_noise_variance" => self.vif_noise_variance = num(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "init_scale" => self.init_scale.to_string(),
            "train_count" => self.train_count.to_string(),
            "test_count" => self.test_count.to_string(),
            "alpha" => self.alpha.to_string(),
            "lambda_l2" => self.lambda_l2.to_string(),
            "w_br" => self.w_br.to_string(),
            "w_tv" => self.w_tv.to_string(),
            "max_iters" => self.max_iters.to_string(),
            "record_stride" => self.record_stride.to_string(),
            "mode" => mode_name(self.mode).to_string(),
            "classifier_loss" => match self.classifier_loss {
                ClassifierLoss::ComplementCrossEntropy => "complement-cross-entropy".into(),
                ClassifierLoss::NegativeCrossEntropy => "negative-cross-entropy".into(),
            },
            "target_class" => self.target_class.to_string(),
            "target_box" => {
                let b = self.target_box;
                format!("{},{},{},{}", b.cx, b.cy, b.w, b.h)
            }
            "detector_threshold" => self.detector_threshold.to_string(),
            "box_weight" => self.box_weight.to_string(),
            "uiqi_window" => self.uiqi_window.to_string(),
            "vif_scales" => self.vif_scales.to_string(),
            "vif_noise_variance" => self.vif_noise_variance.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies a `key=value` override given on the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {pair:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k))).collect()
    }

    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            init_scale: self.init_scale,
        }
    }

    pub fn weights(&self) -> RegularizerWeights {
        RegularizerWeights {
            lambda_l2: self.lambda_l2,
            w_br: self.w_br,
            w_tv: self.w_tv,
        }
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            alpha: self.alpha,
            weights: self.weights(),
            max_iterations: self.max_iters,
            mode: self.mode,
            classifier_loss: self.classifier_loss,
            detector_target: self.mode.is_detector().then_some(DetectorTarget {
                category: self.target_class,
                bbox: self.target_box,
            }),
            detector_success_threshold: self.detector_threshold,
            detector_box_weight: self.box_weight,
            record_stride: self.record_stride,
            stop_at_success: false,
            keep_iterates: false,
        }
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            uiqi_window: self.uiqi_window,
            vif_scales: self.vif_scales,
            vif_noise_variance: self.vif_noise_variance,
            ..MetricConfig::default()
        }
    }
}

pub fn parse_mode(s: &str) -> Result<AttackMode> {
    match s {
        "classifier" => Ok(AttackMode::Classifier),
        "detector-full-output" | "full" => Ok(AttackMode::DetectorFullOutput),
        "detector-class-only" | "class" => Ok(AttackMode::DetectorClassOnly),
        _ => Err(Error::InvalidConfig(format!(
            "unknown mode {s:?} (classifier | detector-full-output | detector-class-only)"
        ))),
    }
}

pub fn mode_name(mode: AttackMode) -> &'static str {
    match mode {
        AttackMode::Classifier => "classifier",
        AttackMode::DetectorFullOutput => "detector-full-output",
        AttackMode::DetectorClassOnly => "detector-class-only",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_restores_every_key() {
        let mut s = Settings::defaults(ModelKind::Detector);
        s.apply_text("alpha = 12.5\nmode = detector-class-only # comment\n\ntarget_box = 0.25, 0.75, 0.1, 0.2\ntarget_class = disk\n")
            .unwrap();
        let mut t = Settings::defaults(ModelKind::Classifier);
        t.apply_text(&s.to_text()).unwrap();
        assert_eq!(s, t);
        assert_eq!(t.target_class, ShapeKind::Disk.index());
        assert_eq!(t.attack_config().mode, AttackMode::DetectorClassOnly);
    }

    #[test]
    fn bad_input_is_rejected() {
        let mut s = Settings::defaults(ModelKind::Classifier);
        assert!(s.apply_text("alpha 3").is_err());
        assert!(s.apply_text("nonsense = 3").is_err());
        assert!(s.apply_text("alpha = fast").is_err());
        assert!(s.apply_text("target_box = 0.5,0.5,2,0.1").is_err());
        assert!(s.apply_override("mode=sideways").is_err());
    }

    #[test]
    fn classifier_defaults_have_no_target() {
        let c = Settings::defaults(ModelKind::Classifier).attack_config();
        assert!(c.detector_target.is_none());
        assert!(c.validate().is_ok());
        assert!(Settings::defaults(ModelKind::Detector).attack_config().validate().is_ok());
    }
}
