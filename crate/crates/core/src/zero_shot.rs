//! Frozen zero-shot classifier over a [`PrototypeBank`].
//!
//! Probabilities are a temperature softmax over cosine similarities to the
//! class prototypes. A sample whose entropy exceeds `delta` is rejected as
//! unknown; entropy exactly equal to `delta` counts as known.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::data::{PrototypeBank, TargetSplit, UnlabeledSample};
use crate::error::{OdaError, Result};
use crate::numerics::{argmax, cosine_similarity, entropy, softmax_temp, ProbVector};
use crate::OpenSetClass;

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotPrediction {
    pub record_id: u64,
    pub probs: ProbVector,
    pub entropy: f64,
    pub predicted: OpenSetClass,
}

impl ZeroShotPrediction {
    pub fn is_unknown(&self) -> bool {
        self.predicted.is_unknown()
    }
}

pub(crate) fn check_threshold(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OdaError::InvalidConfig(format!("{name} must be positive, got {value}")))
    }
}

fn similarities(x: &[f64], prototypes: &[Vec<f64>]) -> Result<Vec<f64>> {
    prototypes.iter().map(|p| cosine_similarity(x, p)).collect()
}

fn predict_against(
    record_id: u64,
    x: &[f64],
    prototypes: &[Vec<f64>],
    tau: f64,
    delta: f64,
) -> Result<ZeroShotPrediction> {
    check_threshold("delta", delta)?;
    let sims = similarities(x, prototypes)?;
    let probs = softmax_temp(&sims, tau)?;
    let h = entropy(&probs);
    let predicted = if h > delta {
        OpenSetClass::Unknown
    } else {
        OpenSetClass::Known(argmax(&sims))
    };
    Ok(ZeroShotPrediction {
        record_id,
        probs,
        entropy: h,
        predicted,
    })
}

pub fn zero_shot_predict(
    sample: &UnlabeledSample,
    bank: &PrototypeBank,
    tau: f64,
    delta: f64,
) -> Result<ZeroShotPrediction> {
    if sample.x.len() != bank.dim() {
        return Err(OdaError::DimensionMismatch {
            expected: bank.dim(),
            actual: sample.x.len(),
        });
    }
    predict_against(sample.id, &sample.x, bank.prototypes_f64(), tau, delta)
}

fn check_compatible(target: &TargetSplit, bank: &PrototypeBank) -> Result<()> {
    if bank.dim() != target.dim {
        return Err(OdaError::DimensionMismatch {
            expected: target.dim,
            actual: bank.dim(),
        });
    }
    if bank.len() != target.num_known_classes {
        return Err(OdaError::Invariant(format!(
            "prototype bank has {} classes, dataset has {} known classes",
            bank.len(),
            target.num_known_classes
        )));
    }
    Ok(())
}

/// Predictions for every target sample, ordered by record id.
pub fn predict_all(
    target: &TargetSplit,
    bank: &PrototypeBank,
    tau: f64,
    delta: f64,
) -> Result<Vec<ZeroShotPrediction>> {
    check_compatible(target, bank)?;
    let mut preds = target
        .samples
        .iter()
        .map(|s| zero_shot_predict(s, bank, tau, delta))
        .collect::<Result<Vec<_>>>()?;
    preds.sort_by_key(|p| p.record_id);
    Ok(preds)
}

/// Split of the target set into zero-shot-known and zero-shot-unknown samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetPartition {
    pub known_ids: BTreeSet<u64>,
    pub unknown_ids: BTreeSet<u64>,
    /// Zero-shot probabilities, used as soft targets; defined on `known_ids` only.
    pub pseudo_probs: BTreeMap<u64, ProbVector>,
}

impl TargetPartition {
    pub fn is_known(&self, id: u64) -> bool {
        self.known_ids.contains(&id)
    }

    pub fn is_unknown(&self, id: u64) -> bool {
        self.unknown_ids.contains(&id)
    }

    pub fn pseudo_probs(&self, id: u64) -> Option<&ProbVector> {
        self.pseudo_probs.get(&id)
    }
}

pub fn partition_target(
    target: &TargetSplit,
    bank: &PrototypeBank,
    tau: f64,
    delta: f64,
) -> Result<TargetPartition> {
    if target.samples.is_empty() {
        return Err(OdaError::Invariant("target set is empty".into()));
    }
    let mut part = TargetPartition::default();
    for p in predict_all(target, bank, tau, delta)? {
        if p.is_unknown() {
            part.unknown_ids.insert(p.record_id);
        } else {
            part.known_ids.insert(p.record_id);
            part.pseudo_probs.insert(p.record_id, p.probs);
        }
    }
    Ok(part)
}

/// `id,predicted_class,entropy,is_unknown`; rejected samples get class -1.
pub fn predictions_csv(preds: &[ZeroShotPrediction]) -> String {
    let mut out = String::from("id,predicted_class,entropy,is_unknown\n");
    for p in preds {
        let class = match p.predicted {
            OpenSetClass::Known(k) => k as i64,
            OpenSetClass::Unknown => -1,
        };
        writeln!(out, "{},{},{},{}", p.record_id, class, p.entropy, p.is_unknown()).unwrap();
    }
    out
}
