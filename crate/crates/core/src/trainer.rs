//! Training loops for the three regimes: joint ODA, source-free pretraining
//! and source-free adaptation, plus the loss-ablation harness.
//!
//! The zero-shot partition of the target set is computed once before the
//! first step and never recomputed. In joint mode every step draws one source
//! and one target batch; an epoch is as many steps as the larger split needs,
//! and the smaller split cycles into its next permutation.

use std::fmt::Write as _;

use crate::data::{derive_seed, BatchSampler, EmbeddingDataset, LabeledSample, PrototypeBank, SourceSplit, TargetSplit, UnlabeledSample};
use crate::error::{OdaError, Result};
use crate::eval::{evaluate, Averaging, EvalReport};
use crate::losses::{loss_total, LossBreakdown, LossConfig, LossToggles, StepBatches, TrainMode};
use crate::model::{sgd_step, OdaClassifier, Optimizer};
use crate::zero_shot::{partition_target, TargetPartition};
use crate::default_delta;

const INIT_STREAM: u64 = 0;
const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Zero-shot softmax temperature.
    pub tau: f64,
    /// Entropy threshold for separation and test-time rejection; `None` means ln(K)/2.
    pub delta: Option<f64>,
    /// Threshold for the zero-shot partition; `None` falls back to `delta`.
    pub clip_delta: Option<f64>,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub toggles: LossToggles,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            tau: 0.01,
            delta: None,
            clip_delta: None,
            margin: 0.5,
            batch_size: 4,
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            seed: 7,
            toggles: LossToggles::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OdaError::InvalidConfig(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        for (name, d) in [("delta", self.delta), ("clip delta", self.clip_delta)] {
            if let Some(d) = d {
                if !(d > 0.0) {
                    return bad(format!("{name} must be positive, got {d}"));
                }
            }
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }

    pub fn resolved_delta(&self, num_known: usize) -> f64 {
        self.delta.unwrap_or_else(|| default_delta(num_known))
    }

    pub fn resolved_clip_delta(&self, num_known: usize) -> f64 {
        self.clip_delta.unwrap_or_else(|| self.resolved_delta(num_known))
    }

    pub fn loss_config(&self, num_known: usize) -> LossConfig {
        LossConfig {
            delta: self.resolved_delta(num_known),
            margin: self.margin,
            toggles: self.toggles,
        }
    }
}

/// What a training run may touch. The adaptation variant has no source field.
#[derive(Debug, Clone)]
pub enum TrainInputs<'a> {
    Joint {
        source: &'a SourceSplit,
        target: &'a TargetSplit,
        bank: &'a PrototypeBank,
    },
    Pretrain {
        source: &'a SourceSplit,
    },
    Adapt {
        target: &'a TargetSplit,
        bank: &'a PrototypeBank,
        initial: OdaClassifier,
    },
}

impl TrainInputs<'_> {
    pub fn mode(&self) -> TrainMode {
        match self {
            TrainInputs::Joint { .. } => TrainMode::Oda,
            TrainInputs::Pretrain { .. } => TrainMode::SfPretrain,
            TrainInputs::Adapt { .. } => TrainMode::SfAdapt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub mode: TrainMode,
    pub model: OdaClassifier,
    /// One entry per optimizer step.
    pub history: Vec<LossBreakdown>,
    pub epochs: Vec<EpochSummary>,
    /// Zero-shot partition used by the target losses; `None` in pretraining.
    pub partition: Option<TargetPartition>,
}

fn check_bank(bank: &PrototypeBank, target: &TargetSplit) -> Result<()> {
    if bank.dim() != target.dim {
        return Err(OdaError::DimensionMismatch {
            expected: target.dim,
            actual: bank.dim(),
        });
    }
    if bank.len() != target.num_known_classes {
        return Err(OdaError::Invariant(format!(
            "prototype bank has {} classes, target has {} known classes",
            bank.len(),
            target.num_known_classes
        )));
    }
    Ok(())
}

fn nonempty<T>(what: &str, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(OdaError::Invariant(format!("{what} split has no records")));
    }
    Ok(())
}

pub fn train(inputs: TrainInputs<'_>, hp: &HyperParams) -> Result<TrainRun> {
    train_with_progress(inputs, hp, |_| {})
}

/// Runs training, calling `on_epoch` after each completed epoch.
pub fn train_with_progress(
    inputs: TrainInputs<'_>,
    hp: &HyperParams,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainRun> {
    hp.validate()?;
    let mode = inputs.mode();
    let (source, target, bank, mut model) = match inputs {
        TrainInputs::Joint { source, target, bank } => {
            if source.dim != target.dim || source.num_classes != target.num_known_classes {
                return Err(OdaError::Invariant(
                    "source and target disagree on dimension or known classes".into(),
                ));
            }
            check_bank(bank, target)?;
            let init = OdaClassifier::init(source.dim, source.num_classes, derive_seed(hp.seed, INIT_STREAM));
            (Some(source), Some(target), Some(bank), init)
        }
        TrainInputs::Pretrain { source } => {
            let init = OdaClassifier::init(source.dim, source.num_classes, derive_seed(hp.seed, INIT_STREAM));
            (Some(source), None, None, init)
        }
        TrainInputs::Adapt { target, bank, initial } => {
            check_bank(bank, target)?;
            if initial.dim() != target.dim || initial.num_classes() != target.num_known_classes {
                return Err(OdaError::Invariant(format!(
                    "initial model is {}x{}, target needs {}x{}",
                    initial.num_classes(),
                    initial.dim(),
                    target.num_known_classes,
                    target.dim
                )));
            }
            (None, Some(target), Some(bank), initial)
        }
    };
    if let Some(s) = source {
        nonempty("source", &s.samples)?;
    }
    if let Some(t) = target {
        nonempty("target", &t.samples)?;
    }
    let k = model.num_classes();
    let loss_cfg = hp.loss_config(k);

    let partition = match (target, bank) {
        (Some(t), Some(b)) => Some(partition_target(t, b, hp.tau, hp.resolved_clip_delta(k))?),
        _ => None,
    };
    if let Some(p) = &partition {
        log::info!(
            "zero-shot partition: {} known, {} unknown target records",
            p.known_ids.len(),
            p.unknown_ids.len()
        );
    }

    let mut src_sampler = source.map(|s| BatchSampler::new(hp.batch_size, derive_seed(hp.seed, SOURCE_STREAM), s.samples.len()));
    let mut tgt_sampler = target.map(|t| BatchSampler::new(hp.batch_size, derive_seed(hp.seed, TARGET_STREAM), t.samples.len()));
    let steps_per_epoch = src_sampler
        .iter()
        .chain(tgt_sampler.iter())
        .map(BatchSampler::batches_per_epoch)
        .max()
        .unwrap_or(0);

    let mut opt = Optimizer::new(hp.lr, hp.momentum, &model)?;
    let mut history = Vec::with_capacity(steps_per_epoch * hp.epochs);
    let mut epochs = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let mut epoch_total = 0.0;
        for _ in 0..steps_per_epoch {
            let step = history.len();
            let src_batch: Option<Vec<&LabeledSample>> = src_sampler
                .as_mut()
                .zip(source)
                .map(|(smp, s)| smp.next_batch(&s.samples));
            let tgt_batch: Option<Vec<&UnlabeledSample>> = tgt_sampler
                .as_mut()
                .zip(target)
                .map(|(smp, t)| smp.next_batch(&t.samples));
            let batches = StepBatches {
                source: src_batch.as_deref(),
                target: tgt_batch.as_deref(),
                partition: partition.as_ref(),
            };
            let (breakdown, grads) = loss_total(&model, batches, &loss_cfg, mode)?;
            if !breakdown.total.is_finite() {
                return Err(OdaError::NonFiniteLoss {
                    step,
                    last_finite: Box::new(model),
                });
            }
            let before = model.clone();
            sgd_step(&mut model, &grads, &mut opt)?;
            if !model.is_finite() {
                return Err(OdaError::NonFiniteLoss {
                    step,
                    last_finite: Box::new(before),
                });
            }
            epoch_total += breakdown.total;
            history.push(breakdown);
        }
        let summary = EpochSummary {
            epoch,
            steps: steps_per_epoch,
            mean_total: if steps_per_epoch > 0 { epoch_total / steps_per_epoch as f64 } else { 0.0 },
        };
        on_epoch(&summary);
        epochs.push(summary);
    }

    Ok(TrainRun {
        mode,
        model,
        history,
        epochs,
        partition,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationVariant {
    pub name: String,
    pub toggles: LossToggles,
}

/// The full objective followed by each single-term removal.
pub fn standard_variants() -> Vec<AblationVariant> {
    let all = LossToggles::default();
    let v = |name: &str, toggles| AblationVariant {
        name: name.to_owned(),
        toggles,
    };
    vec![
        v("full", all),
        v("w/o L_s", LossToggles { use_source: false, ..all }),
        v("w/o L_ent", LossToggles { use_ent: false, ..all }),
        v("w/o L_kwn", LossToggles { use_kwn: false, ..all }),
        v("w/o L_unk", LossToggles { use_unk: false, ..all }),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub report: EvalReport,
    pub history: Vec<LossBreakdown>,
}

/// Trains one joint-mode model per variant with identical seeds and evaluates
/// each on the labeled target set.
pub fn run_ablation(
    dataset: &EmbeddingDataset,
    bank: &PrototypeBank,
    hp: &HyperParams,
    variants: &[AblationVariant],
    averaging: Averaging,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(OdaError::InvalidConfig("no ablation variants given".into()));
    }
    let source = dataset.source_split();
    let target = dataset.target_split();
    let delta = hp.resolved_delta(dataset.num_known_classes());
    variants
        .iter()
        .map(|variant| {
            let vhp = HyperParams {
                toggles: variant.toggles,
                ..hp.clone()
            };
            let run = train(
                TrainInputs::Joint {
                    source: &source,
                    target: &target,
                    bank,
                },
                &vhp,
            )?;
            log::info!("ablation variant {} finished", variant.name);
            let report = evaluate(&run.model, dataset, delta, averaging)?;
            Ok(AblationRow {
                variant: variant.clone(),
                report,
                history: run.history,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("variant,use_source,use_ent,use_kwn,use_unk,acc_kwn,acc_unk,h_score,auroc\n");
    for r in rows {
        let t = r.variant.toggles;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.variant.name,
            t.use_source,
            t.use_ent,
            t.use_kwn,
            t.use_unk,
            r.report.acc_kwn,
            r.report.acc_unk,
            r.report.h_score,
            r.report.auroc
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn small_fixture() -> (EmbeddingDataset, PrototypeBank) {
        generate_synthetic(&SynthConfig {
            dim: 8,
            num_known: 3,
            num_total: 5,
            source_per_class: 10,
            target_per_class: 6,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn quick() -> HyperParams {
        HyperParams {
            epochs: 2,
            batch_size: 8,
            ..HyperParams::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (ds, _) = small_fixture();
        let src = ds.source_split();
        let hp = HyperParams { epochs: 0, ..quick() };
        let run = train(TrainInputs::Pretrain { source: &src }, &hp).unwrap();
        assert_eq!(run.model, OdaClassifier::init(8, 3, derive_seed(hp.seed, INIT_STREAM)));
        assert!(run.history.is_empty());
    }

    #[test]
    fn history_length_is_step_count() {
        let (ds, bank) = small_fixture();
        let (src, tgt) = (ds.source_split(), ds.target_split());
        let run = train(TrainInputs::Joint { source: &src, target: &tgt, bank: &bank }, &quick()).unwrap();
        // 30 source and 30 target records, batch 8 -> 4 steps per epoch
        assert_eq!(run.history.len(), 8);
        assert!(run.history.iter().all(|b| b.counts.source > 0 && b.counts.target > 0));
    }

    #[test]
    fn joint_mode_cycles_the_smaller_split() {
        let (ds, bank) = generate_synthetic(&SynthConfig {
            dim: 8,
            num_known: 3,
            num_total: 5,
            source_per_class: 4,
            target_per_class: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let (src, tgt) = (ds.source_split(), ds.target_split());
        let hp = HyperParams { epochs: 1, batch_size: 5, ..quick() };
        let run = train(TrainInputs::Joint { source: &src, target: &tgt, bank: &bank }, &hp).unwrap();
        // 12 source (3 batches) vs 50 target (10 batches)
        assert_eq!(run.history.len(), 10);
        let src_seen: usize = run.history.iter().map(|b| b.counts.source).sum();
        // 5+5+2 per source pass; three passes plus one extra batch
        assert_eq!(src_seen, 3 * 12 + 5);
    }

    #[test]
    fn adapt_never_counts_source() {
        let (ds, bank) = small_fixture();
        let tgt = ds.target_split();
        let init = OdaClassifier::init(8, 3, 1);
        let run = train(TrainInputs::Adapt { target: &tgt, bank: &bank, initial: init }, &quick()).unwrap();
        assert!(run.history.iter().all(|b| b.counts.source == 0 && b.l_source == 0.0));
    }

    #[test]
    fn divergence_reports_step_and_last_finite_model() {
        let (ds, _) = small_fixture();
        let src = ds.source_split();
        let hp = HyperParams { lr: 1e308, momentum: 0.0, epochs: 5, ..quick() };
        match train(TrainInputs::Pretrain { source: &src }, &hp) {
            Err(OdaError::NonFiniteLoss { last_finite, .. }) => assert!(last_finite.is_finite()),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn adapt_rejects_mismatched_initial_model() {
        let (ds, bank) = small_fixture();
        let tgt = ds.target_split();
        let init = OdaClassifier::zeros(8, 4);
        assert!(train(TrainInputs::Adapt { target: &tgt, bank: &bank, initial: init }, &quick()).is_err());
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams { tau: 0.0, ..quick() }.validate().is_err());
        assert!(HyperParams { margin: -0.1, ..quick() }.validate().is_err());
        assert!(HyperParams { delta: Some(0.0), ..quick() }.validate().is_err());
        assert!(HyperParams { batch_size: 0, ..quick() }.validate().is_err());
        let hp = HyperParams::default();
        assert_eq!(hp.resolved_delta(10), 10f64.ln() / 2.0);
        assert_eq!(HyperParams { delta: Some(0.9), ..hp.clone() }.resolved_clip_delta(10), 0.9);
        assert_eq!(HyperParams { clip_delta: Some(0.4), ..hp }.resolved_clip_delta(10), 0.4);
    }

    #[test]
    fn ablation_without_source_has_zero_source_column() {
        let (ds, bank) = small_fixture();
        let rows = run_ablation(&ds, &bank, &quick(), &standard_variants(), Averaging::Micro).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].variant.name, "full");
        assert_eq!(rows[0].variant.toggles, LossToggles::default());
        let wo_s = &rows[1];
        assert!(wo_s.history.iter().all(|b| b.l_source == 0.0 && b.counts.source == 0));
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(2).unwrap().starts_with("w/o L_s,false,true,true,true,"));
    }
}
