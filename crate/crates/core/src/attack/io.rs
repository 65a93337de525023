//! On-disk form of an attack: a trace CSV and a JSON summary.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttackConfig, AttackOutcome, IterationRecord};
use crate::error::{Error, Result};

/// Writes one row per record with columns `k, cost, loss, predicted_label,
/// predicted_confidence, true_label_confidence, noise_norm,
/// adversarial_confidence`.
pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[IterationRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<IterationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Per-attack JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub image: String,
    pub original_label: usize,
    pub first_success_iteration: Option<usize>,
    pub jnd_value: Option<f64>,
    /// Label predicted at `K`.
    pub adversarial_label: Option<usize>,
    pub iterations_run: usize,
    pub final_label: usize,
    pub final_confidence: f64,
    /// Result of replaying the model over `x(0..=K)`, when requested.
    pub prefix_verified: Option<bool>,
    pub config: AttackConfig,
}

impl AttackSummary {
    pub fn new(image: impl Into<String>, outcome: &AttackOutcome, config: &AttackConfig) -> Self {
        let at_k = outcome
            .first_success_iteration
            .and_then(|k| outcome.trace.iter().find(|r| r.k == k));
        let last = outcome.trace.last();
        Self {
            image: image.into(),
            original_label: outcome.original_label,
            first_success_iteration: outcome.first_success_iteration,
            jnd_value: outcome.jnd_value,
            adversarial_label: at_k.map(|r| r.predicted_label),
            iterations_run: outcome.iterations_run,
            final_label: last.map_or(outcome.original_label, |r| r.predicted_label),
            final_confidence: last.map_or(0.0, |r| r.predicted_confidence),
            prefix_verified: None,
            config: config.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, label: usize) -> IterationRecord {
        IterationRecord {
            k,
            cost: 1.0 / (k + 3) as f64,
            loss: 0.1 * k as f64,
            predicted_label: label,
            predicted_confidence: 0.75,
            true_label_confidence: 0.2,
            noise_norm: 1e-7 * k as f64,
            adversarial_confidence: 0.3333333333333333,
        }
    }

    #[test]
    fn trace_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace: Vec<_> = (0..5).map(|k| record(k, k % 2)).collect();
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "k,cost,loss,predicted_label,predicted_confidence,true_label_confidence,noise_norm,adversarial_confidence\n"
        ));
        assert_eq!(read_trace_csv(&path).unwrap(), trace);
    }

    #[test]
    fn missing_trace_names_the_path() {
        let err = read_trace_csv("/nonexistent/trace.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.csv"));
    }
}
