//! Training losses and their analytic parameter gradients.
//!
//! * source cross-entropy: mean of `-ln p(y|x)` over the source batch
//! * entropy separation: per target sample `-|H(p) - delta|` when
//!   `|H(p) - delta| > margin`, else 0; averaged over the full target batch
//! * zero-shot known: soft-target cross-entropy `-sum p̂ ln p` against the
//!   cached zero-shot probabilities, averaged over the zero-shot-known samples
//!   in the batch
//! * zero-shot unknown: `-H(p)` of the classifier's own output, averaged over
//!   the zero-shot-unknown samples in the batch
//!
//! A term with no contributing samples is exactly 0 with a zero gradient.

use crate::data::{LabeledSample, UnlabeledSample};
use crate::error::{OdaError, Result};
use crate::model::{OdaClassifier, ParamGrads};
use crate::numerics::{grad_entropy_raw, log_softmax};
use crate::zero_shot::TargetPartition;

/// One loss term: its value, parameter gradient and number of contributing samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grads: ParamGrads,
    pub count: usize,
}

impl LossTerm {
    fn zero(model: &OdaClassifier) -> Self {
        LossTerm {
            value: 0.0,
            grads: ParamGrads::zeros_like(model),
            count: 0,
        }
    }
}

fn check_dims<'a>(model: &OdaClassifier, xs: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
    for x in xs {
        if x.len() != model.dim() {
            return Err(OdaError::DimensionMismatch {
                expected: model.dim(),
                actual: x.len(),
            });
        }
    }
    Ok(())
}

pub fn loss_source_ce(model: &OdaClassifier, batch: &[&LabeledSample]) -> Result<LossTerm> {
    check_dims(model, batch.iter().map(|s| s.x.as_slice()))?;
    let k = model.num_classes();
    if let Some(s) = batch.iter().find(|s| s.label >= k) {
        return Err(OdaError::LabelOutOfRange {
            label: s.label as i32,
            num_classes: k,
        });
    }
    let mut term = LossTerm::zero(model);
    if batch.is_empty() {
        return Ok(term);
    }
    let inv_n = 1.0 / batch.len() as f64;
    for s in batch {
        let log_p = log_softmax(&model.logits_unchecked(&s.x));
        term.value -= log_p[s.label] * inv_n;
        let mut g: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
        g[s.label] -= 1.0;
        term.grads.accumulate(&s.x, &g, inv_n);
    }
    term.count = batch.len();
    Ok(term)
}

/// Per-sample entropy-separation value for an output entropy `h`.
pub fn entropy_separation_term(h: f64, delta: f64, margin: f64) -> f64 {
    let gap = (h - delta).abs();
    if gap > margin {
        -gap
    } else {
        0.0
    }
}

pub fn loss_entropy_separation(
    model: &OdaClassifier,
    batch: &[&UnlabeledSample],
    delta: f64,
    margin: f64,
) -> Result<LossTerm> {
    check_dims(model, batch.iter().map(|s| s.x.as_slice()))?;
    if !(delta > 0.0) || !(margin >= 0.0) {
        return Err(OdaError::InvalidConfig(format!(
            "entropy separation needs delta > 0 and margin >= 0, got {delta}, {margin}"
        )));
    }
    let mut term = LossTerm::zero(model);
    if batch.is_empty() {
        return Ok(term);
    }
    let inv_n = 1.0 / batch.len() as f64;
    for s in batch {
        let z = model.logits_unchecked(&s.x);
        let log_p = log_softmax(&z);
        let h: f64 = log_p.iter().map(|&lp| -lp.exp() * lp).sum();
        let value = entropy_separation_term(h, delta, margin);
        if value != 0.0 {
            term.value += value * inv_n;
            // d(-|H - delta|)/dz = -sign(H - delta) dH/dz
            let sign = (h - delta).signum();
            let g = grad_entropy_raw(&z);
            term.grads.accumulate(&s.x, &g, -sign * inv_n);
        }
    }
    term.count = batch.len();
    Ok(term)
}

pub fn loss_clip_known(
    model: &OdaClassifier,
    samples: &[&UnlabeledSample],
    partition: &TargetPartition,
) -> Result<LossTerm> {
    check_dims(model, samples.iter().map(|s| s.x.as_slice()))?;
    let mut term = LossTerm::zero(model);
    if samples.is_empty() {
        return Ok(term);
    }
    let inv_n = 1.0 / samples.len() as f64;
    for s in samples {
        let target = partition
            .pseudo_probs(s.id)
            .ok_or(OdaError::MissingPseudoLabel(s.id))?;
        let target = target.as_slice();
        if target.len() != model.num_classes() {
            return Err(OdaError::DimensionMismatch {
                expected: model.num_classes(),
                actual: target.len(),
            });
        }
        let log_p = log_softmax(&model.logits_unchecked(&s.x));
        let ce: f64 = target.iter().zip(&log_p).map(|(t, lp)| -t * lp).sum();
        term.value += ce * inv_n;
        let g: Vec<f64> = log_p.iter().zip(target).map(|(lp, t)| lp.exp() - t).collect();
        term.grads.accumulate(&s.x, &g, inv_n);
    }
    term.count = samples.len();
    Ok(term)
}

pub fn loss_clip_unknown(model: &OdaClassifier, samples: &[&UnlabeledSample]) -> Result<LossTerm> {
    check_dims(model, samples.iter().map(|s| s.x.as_slice()))?;
    let mut term = LossTerm::zero(model);
    if samples.is_empty() {
        return Ok(term);
    }
    let inv_n = 1.0 / samples.len() as f64;
    for s in samples {
        let z = model.logits_unchecked(&s.x);
        let log_p = log_softmax(&z);
        let h: f64 = log_p.iter().map(|&lp| -lp.exp() * lp).sum();
        term.value -= h * inv_n;
        term.grads.accumulate(&s.x, &grad_entropy_raw(&z), -inv_n);
    }
    term.count = samples.len();
    Ok(term)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Joint training on source and target.
    Oda,
    /// Source-only supervised pretraining.
    SfPretrain,
    /// Source-free adaptation on target only.
    SfAdapt,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Oda => "ODA",
            TrainMode::SfPretrain => "SF_PRETRAIN",
            TrainMode::SfAdapt => "SF_ADAPT",
        }
    }

    pub fn uses_source(self) -> bool {
        matches!(self, TrainMode::Oda | TrainMode::SfPretrain)
    }

    pub fn uses_target(self) -> bool {
        matches!(self, TrainMode::Oda | TrainMode::SfAdapt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LossToggles {
    pub use_source: bool,
    pub use_ent: bool,
    pub use_kwn: bool,
    pub use_unk: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            use_source: true,
            use_ent: true,
            use_kwn: true,
            use_unk: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub delta: f64,
    pub margin: f64,
    pub toggles: LossToggles,
}

/// Number of samples each term was evaluated on in one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TermCounts {
    pub source: usize,
    pub target: usize,
    pub known: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_source: f64,
    pub l_ent: f64,
    pub l_kwn: f64,
    pub l_unk: f64,
    pub total: f64,
    pub counts: TermCounts,
}

/// Batches handed to [`loss_total`]; which ones must be present depends on the mode.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepBatches<'a> {
    pub source: Option<&'a [&'a LabeledSample]>,
    pub target: Option<&'a [&'a UnlabeledSample]>,
    pub partition: Option<&'a TargetPartition>,
}

fn mismatch(mode: TrainMode, detail: &str) -> OdaError {
    OdaError::ModeBatchMismatch {
        mode: mode.as_str(),
        detail: detail.to_owned(),
    }
}

/// Mode objective with unit weights: ODA sums all four terms, SF_PRETRAIN uses
/// source cross-entropy only, SF_ADAPT uses the three target terms.
pub fn loss_total(
    model: &OdaClassifier,
    batches: StepBatches<'_>,
    cfg: &LossConfig,
    mode: TrainMode,
) -> Result<(LossBreakdown, ParamGrads)> {
    match (mode.uses_source(), batches.source.is_some()) {
        (true, false) => return Err(mismatch(mode, "source batch required")),
        (false, true) => return Err(mismatch(mode, "source batch not allowed")),
        _ => {}
    }
    match (mode.uses_target(), batches.target.is_some()) {
        (true, false) => return Err(mismatch(mode, "target batch required")),
        (false, true) => return Err(mismatch(mode, "target batch not allowed")),
        _ => {}
    }
    if mode.uses_target() && batches.partition.is_none() {
        return Err(mismatch(mode, "target partition required"));
    }

    let mut out = LossBreakdown::default();
    let mut grads = ParamGrads::zeros_like(model);
    let t = cfg.toggles;

    if let Some(src) = batches.source {
        if t.use_source {
            let term = loss_source_ce(model, src)?;
            out.l_source = term.value;
            out.counts.source = term.count;
            grads.add_assign(&term.grads);
        }
    }

    if let (Some(tgt), Some(part)) = (batches.target, batches.partition) {
        if t.use_ent {
            let term = loss_entropy_separation(model, tgt, cfg.delta, cfg.margin)?;
            out.l_ent = term.value;
            out.counts.target = term.count;
            grads.add_assign(&term.grads);
        }
        if t.use_kwn {
            let known: Vec<&UnlabeledSample> =
                tgt.iter().copied().filter(|s| part.is_known(s.id)).collect();
            let term = loss_clip_known(model, &known, part)?;
            out.l_kwn = term.value;
            out.counts.known = term.count;
            grads.add_assign(&term.grads);
        }
        if t.use_unk {
            let unknown: Vec<&UnlabeledSample> =
                tgt.iter().copied().filter(|s| part.is_unknown(s.id)).collect();
            let term = loss_clip_unknown(model, &unknown)?;
            out.l_unk = term.value;
            out.counts.unknown = term.count;
            grads.add_assign(&term.grads);
        }
    }

    out.total = out.l_source + out.l_ent + out.l_kwn + out.l_unk;
    Ok((out, grads))
}

pub const TRAIN_LOG_HEADER: &str =
    "step,l_source,l_ent,l_kwn,l_unk,total,n_source,n_target,n_kwn,n_unk";

/// Training-log CSV, one row per optimizer step.
pub fn training_log_csv(history: &[LossBreakdown]) -> String {
    use std::fmt::Write as _;
    let mut out = String::from(TRAIN_LOG_HEADER);
    out.push('\n');
    for (step, b) in history.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            step,
            b.l_source,
            b.l_ent,
            b.l_kwn,
            b.l_unk,
            b.total,
            b.counts.source,
            b.counts.target,
            b.counts.known,
            b.counts.unknown
        )
        .unwrap();
    }
    out
}
