//! Open-set evaluation: known/unknown accuracy, H-score, AUROC of entropy as
//! an unknown-ness score, a `(K + 1) x (K + 1)` confusion matrix with the
//! unified unknown class last, and entropy histograms.
//!
//! This is the only module that reads target ground-truth labels.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::data::{Domain, EmbeddingDataset, PrototypeBank, UnlabeledSample};
use crate::error::{OdaError, Result};
use crate::model::OdaClassifier;
use crate::numerics::entropy;
use crate::zero_shot::zero_shot_predict;
use crate::OpenSetClass;

pub const HIST_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Accuracy over all known-class records.
    #[default]
    Micro,
    /// Mean of per-class accuracies over known classes present in the target.
    Macro,
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
        }
    }
}

fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(OdaError::OutOfRange { what, value })
    }
}

/// Harmonic mean `2ab / (a + b)`, 0 when `a + b = 0`.
pub fn h_score(acc_kwn: f64, acc_unk: f64) -> Result<f64> {
    check_unit("acc_kwn", acc_kwn)?;
    check_unit("acc_unk", acc_unk)?;
    let sum = acc_kwn + acc_unk;
    if sum == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * acc_kwn * acc_unk / sum)
}

/// P(unknown score > known score) with ties counted 1/2, via the
/// Mann-Whitney rank sum with mid-ranks for tied groups.
pub fn auroc(scores_known: &[f64], scores_unknown: &[f64]) -> Result<f64> {
    if scores_known.is_empty() {
        return Err(OdaError::EmptyClass("known"));
    }
    if scores_unknown.is_empty() {
        return Err(OdaError::EmptyClass("unknown"));
    }
    if scores_known.iter().chain(scores_unknown).any(|s| s.is_nan()) {
        return Err(OdaError::Invariant("AUROC scores contain NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = scores_known
        .iter()
        .map(|&s| (s, false))
        .chain(scores_unknown.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

    let mut rank_sum_unknown = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tied group i..=j shares the mean rank
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        let unknown_in_group = all[i..=j].iter().filter(|(_, u)| *u).count();
        rank_sum_unknown += mid_rank * unknown_in_group as f64;
        i = j + 1;
    }
    let n_u = scores_unknown.len() as f64;
    let n_k = scores_known.len() as f64;
    let u = rank_sum_unknown - n_u * (n_u + 1.0) / 2.0;
    Ok(u / (n_u * n_k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyHistogram {
    pub low: f64,
    pub high: f64,
    pub counts_known: Vec<u64>,
    pub counts_unknown: Vec<u64>,
}

impl EntropyHistogram {
    fn new(high: f64) -> Self {
        EntropyHistogram {
            low: 0.0,
            high,
            counts_known: vec![0; HIST_BINS],
            counts_unknown: vec![0; HIST_BINS],
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.high - self.low) / HIST_BINS as f64
    }

    pub fn bin_of(&self, h: f64) -> usize {
        let w = self.bin_width();
        if !(w > 0.0) {
            return 0;
        }
        (((h - self.low) / w).floor().max(0.0) as usize).min(HIST_BINS - 1)
    }

    fn add(&mut self, h: f64, unknown: bool) {
        let b = self.bin_of(h);
        if unknown {
            self.counts_unknown[b] += 1;
        } else {
            self.counts_known[b] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub num_known_classes: usize,
    pub averaging: Averaging,
    pub acc_kwn: f64,
    pub acc_unk: f64,
    pub h_score: f64,
    pub auroc: f64,
    /// Accuracy per ground-truth class, unified unknown last; `None` if absent.
    pub per_class_acc: Vec<Option<f64>>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub entropy_hist: EntropyHistogram,
    pub n_known: usize,
    pub n_unknown: usize,
}

/// One scored target record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub truth: OpenSetClass,
    pub predicted: OpenSetClass,
    pub entropy: f64,
}

/// Builds a report from per-record outcomes.
pub fn build_report(num_known: usize, scored: &[Scored], averaging: Averaging) -> Result<EvalReport> {
    let size = num_known + 1;
    let mut confusion = vec![vec![0u64; size]; size];
    let mut hist = EntropyHistogram::new((num_known as f64).ln());
    let (mut known_scores, mut unknown_scores) = (Vec::new(), Vec::new());
    for s in scored {
        confusion[s.truth.index(num_known)][s.predicted.index(num_known)] += 1;
        hist.add(s.entropy, s.truth.is_unknown());
        if s.truth.is_unknown() {
            unknown_scores.push(s.entropy);
        } else {
            known_scores.push(s.entropy);
        }
    }
    let auroc = auroc(&known_scores, &unknown_scores)?;

    let per_class_acc: Vec<Option<f64>> = (0..size)
        .map(|c| {
            let row_total: u64 = confusion[c].iter().sum();
            (row_total > 0).then(|| confusion[c][c] as f64 / row_total as f64)
        })
        .collect();
    let n_known = known_scores.len();
    let n_unknown = unknown_scores.len();
    let acc_kwn = match averaging {
        Averaging::Micro => {
            let correct: u64 = (0..num_known).map(|c| confusion[c][c]).sum();
            correct as f64 / n_known as f64
        }
        Averaging::Macro => {
            let present: Vec<f64> = per_class_acc[..num_known].iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        }
    };
    let acc_unk = confusion[num_known][num_known] as f64 / n_unknown as f64;
    Ok(EvalReport {
        num_known_classes: num_known,
        averaging,
        acc_kwn,
        acc_unk,
        h_score: h_score(acc_kwn, acc_unk)?,
        auroc,
        per_class_acc,
        confusion,
        entropy_hist: hist,
        n_known,
        n_unknown,
    })
}

fn truth_of(label: i32, id: u64, num_known: usize) -> Result<OpenSetClass> {
    if label < 0 {
        return Err(OdaError::MissingLabels(id));
    }
    let label = label as usize;
    Ok(if label < num_known {
        OpenSetClass::Known(label)
    } else {
        OpenSetClass::Unknown
    })
}

fn score_target<F>(target: &EmbeddingDataset, mut predict: F) -> Result<Vec<Scored>>
where
    F: FnMut(&UnlabeledSample) -> Result<(OpenSetClass, f64)>,
{
    let k = target.num_known_classes();
    target
        .records_in(Domain::Target)
        .map(|r| {
            let truth = truth_of(r.label, r.id, k)?;
            let sample = UnlabeledSample {
                id: r.id,
                x: r.vector_f64(),
            };
            let (predicted, entropy) = predict(&sample)?;
            Ok(Scored {
                truth,
                predicted,
                entropy,
            })
        })
        .collect()
}

/// Evaluates the adapted classifier with entropy-threshold rejection at `delta`.
pub fn evaluate(
    model: &OdaClassifier,
    target: &EmbeddingDataset,
    delta: f64,
    averaging: Averaging,
) -> Result<EvalReport> {
    let k = target.num_known_classes();
    if model.num_classes() != k {
        return Err(OdaError::Invariant(format!(
            "model has {} classes, dataset has {k} known classes",
            model.num_classes()
        )));
    }
    let scored = score_target(target, |s| {
        let predicted = model.predict_open_set(&s.x, delta)?;
        let (_, p) = model.forward(&s.x)?;
        Ok((predicted, entropy(&p)))
    })?;
    build_report(k, &scored, averaging)
}

/// Evaluates the zero-shot classifier alone.
pub fn evaluate_zero_shot(
    bank: &PrototypeBank,
    target: &EmbeddingDataset,
    tau: f64,
    delta: f64,
    averaging: Averaging,
) -> Result<EvalReport> {
    let k = target.num_known_classes();
    if bank.len() != k {
        return Err(OdaError::Invariant(format!(
            "prototype bank has {} classes, dataset has {k} known classes",
            bank.len()
        )));
    }
    let scored = score_target(target, |s| {
        let p = zero_shot_predict(s, bank, tau, delta)?;
        Ok((p.predicted, p.entropy))
    })?;
    build_report(k, &scored, averaging)
}

impl EvalReport {
    /// `metric,value` rows.
    pub fn scalars_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |name: &str, v: String| writeln!(out, "{name},{v}").unwrap();
        row("acc_kwn", self.acc_kwn.to_string());
        row("acc_unk", self.acc_unk.to_string());
        row("h_score", self.h_score.to_string());
        row("auroc", self.auroc.to_string());
        row("n_known", self.n_known.to_string());
        row("n_unknown", self.n_unknown.to_string());
        row("averaging", self.averaging.as_str().to_owned());
        for (c, acc) in self.per_class_acc.iter().enumerate() {
            let name = if c == self.num_known_classes {
                "acc_class_unknown".to_owned()
            } else {
                format!("acc_class_{c}")
            };
            row(&name, acc.map_or_else(String::new, |a| a.to_string()));
        }
        out
    }

    fn class_label(&self, c: usize) -> String {
        if c == self.num_known_classes {
            "unknown".to_owned()
        } else {
            c.to_string()
        }
    }

    /// Rows are ground truth, columns predictions.
    pub fn confusion_csv(&self) -> String {
        let size = self.num_known_classes + 1;
        let mut out = String::from("truth");
        for c in 0..size {
            write!(out, ",{}", self.class_label(c)).unwrap();
        }
        out.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            out.push_str(&self.class_label(c));
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn entropy_hist_csv(&self) -> String {
        let h = &self.entropy_hist;
        let w = h.bin_width();
        let mut out = String::from("bin_low,bin_high,count_known,count_unknown\n");
        for b in 0..HIST_BINS {
            let lo = h.low + w * b as f64;
            let hi = if b + 1 == HIST_BINS { h.high } else { h.low + w * (b + 1) as f64 };
            writeln!(out, "{lo},{hi},{},{}", h.counts_known[b], h.counts_unknown[b]).unwrap();
        }
        out
    }

    pub fn text_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<10} {:>8}", "metric", "value").unwrap();
        writeln!(out, "{:<10} {:>8.4}", "acc_kwn", self.acc_kwn).unwrap();
        writeln!(out, "{:<10} {:>8.4}", "acc_unk", self.acc_unk).unwrap();
        writeln!(out, "{:<10} {:>8.4}", "h_score", self.h_score).unwrap();
        writeln!(out, "{:<10} {:>8.4}", "auroc", self.auroc).unwrap();
        writeln!(
            out,
            "({} known-class and {} unknown-class records, {} averaging)",
            self.n_known,
            self.n_unknown,
            self.averaging.as_str()
        )
        .unwrap();
        out
    }
}
