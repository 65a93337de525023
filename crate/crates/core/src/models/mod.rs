//! The machines under attack: a small CNN classifier and a single-object
//! detector, both trained from scratch with plain mini-batch SGD.

mod classifier;
mod detector;
mod network;
mod train;

pub use classifier::{ClassifierModel, Prediction};
pub use detector::{Detection, DetectorModel};
pub use network::{LayerSpec, Network, Params};
pub use train::{evaluate_accuracy, evaluate_detector, train_classifier, train_classifier_with, train_detector, train_detector_with, EpochStats, TrainConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{load_container_with_metadata, save_container_with_metadata};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture descriptor stored in a model container's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Classifier {
        input_shape: Vec<usize>,
        categories: usize,
        layers: Vec<LayerSpec>,
    },
    Detector {
        input_shape: Vec<usize>,
        categories: usize,
        trunk: Vec<LayerSpec>,
    },
}

/// Either kind of trained model, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Classifier(ClassifierModel),
    Detector(DetectorModel),
}

impl Model {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (arch, entries) = match self {
            Model::Classifier(m) => m.to_parts(),
            Model::Detector(m) => m.to_parts(),
        };
        save_container_with_metadata(path, &entries, &serde_json::to_value(arch)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (entries, meta) = load_container_with_metadata(path)?;
        let arch: Architecture =
            serde_json::from_value(meta).map_err(|e| Error::CorruptHeader(format!("architecture descriptor: {e}")))?;
        match arch {
            Architecture::Classifier { .. } => Ok(Model::Classifier(ClassifierModel::from_parts(arch, entries)?)),
            Architecture::Detector { .. } => Ok(Model::Detector(DetectorModel::from_parts(arch, entries)?)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Classifier(_) => "classifier",
            Model::Detector(_) => "detector",
        }
    }
}

fn param_entries(prefix: &str, net: &Network) -> Vec<(String, Tensor)> {
    net.params()
        .iter()
        .enumerate()
        .flat_map(|(i, (w, b))| {
            [
                (format!("{prefix}{i}.weight"), w.clone()),
                (format!("{prefix}{i}.bias"), b.clone()),
            ]
        })
        .collect()
}

fn take_params(prefix: &str, entries: &mut Vec<(String, Tensor)>) -> Result<Vec<(Tensor, Tensor)>> {
    let mut out = Vec::new();
    for i in 0.. {
        let (wn, bn) = (format!("{prefix}{i}.weight"), format!("{prefix}{i}.bias"));
        let Some(wi) = entries.iter().position(|(n, _)| *n == wn) else {
            break;
        };
        let w = entries.remove(wi).1;
        let bi = entries
            .iter()
            .position(|(n, _)| *n == bn)
            .ok_or_else(|| Error::CorruptHeader(format!("missing entry {bn}")))?;
        let b = entries.remove(bi).1;
        out.push((w, b));
    }
    Ok(out)
}
