//! Analytic loss gradients against central finite differences.

use oda_core::data::{LabeledSample, UnlabeledSample};
use oda_core::losses::{
    loss_clip_known, loss_clip_unknown, loss_entropy_separation, loss_source_ce, loss_total,
    LossConfig, LossToggles, StepBatches, TrainMode,
};
use oda_core::model::{OdaClassifier, ParamGrads};
use oda_core::numerics::{entropy_of_logits, softmax_temp, ProbVector};
use oda_core::zero_shot::TargetPartition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 100;
const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const DIM: usize = 5;
const K: usize = 4;

fn random_model(rng: &mut ChaCha8Rng) -> OdaClassifier {
    let scale = rng.random_range(0.3..3.0);
    let w = (0..DIM * K).map(|_| rng.random_range(-scale..scale)).collect();
    let b = (0..K).map(|_| rng.random_range(-1.0..1.0)).collect();
    OdaClassifier::from_parts(DIM, K, w, b).unwrap()
}

fn random_x(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn labeled(rng: &mut ChaCha8Rng, sizes: std::ops::Range<usize>) -> Vec<LabeledSample> {
    let n = rng.random_range(sizes);
    (0..n as u64)
        .map(|id| LabeledSample {
            id,
            x: random_x(rng),
            label: rng.random_range(0..K),
        })
        .collect()
}

fn unlabeled(rng: &mut ChaCha8Rng, sizes: std::ops::Range<usize>) -> Vec<UnlabeledSample> {
    let n = rng.random_range(sizes);
    (0..n as u64)
        .map(|id| UnlabeledSample { id, x: random_x(rng) })
        .collect()
}

fn random_probs(rng: &mut ChaCha8Rng) -> ProbVector {
    let s: Vec<f64> = (0..K).map(|_| rng.random_range(-3.0..3.0)).collect();
    softmax_temp(&s, 1.0).unwrap()
}

/// Central differences of `f` over every weight and bias, in parameter order.
fn numeric_grad(model: &OdaClassifier, f: impl Fn(&OdaClassifier) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(DIM * K + K);
    for i in 0..DIM * K + K {
        let probe = |d: f64| {
            let mut m = model.clone();
            if i < DIM * K {
                m.weights_mut()[i] += d;
            } else {
                m.biases_mut()[i - DIM * K] += d;
            }
            f(&m)
        };
        out.push((probe(STEP) - probe(-STEP)) / (2.0 * STEP));
    }
    out
}

fn flat(g: &ParamGrads) -> Vec<f64> {
    g.weights.iter().chain(&g.biases).copied().collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = n(a).max(n(b));
    if scale < 1e-10 {
        n(&diff)
    } else {
        n(&diff) / scale
    }
}

fn check(case: u64, analytic: &ParamGrads, numeric: &[f64]) {
    let e = rel_err(&flat(analytic), numeric);
    assert!(e <= TOL, "case {case}: relative error {e}");
}

#[test]
fn source_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..CASES {
        let model = random_model(&mut rng);
        let batch = labeled(&mut rng, 1..8);
        let refs: Vec<&LabeledSample> = batch.iter().collect();
        let term = loss_source_ce(&model, &refs).unwrap();
        let fd = numeric_grad(&model, |m| loss_source_ce(m, &refs).unwrap().value);
        check(case, &term.grads, &fd);
    }
}

/// Smallest distance of any sample's entropy from a kink of the separation loss.
fn kink_distance(model: &OdaClassifier, batch: &[&UnlabeledSample], delta: f64, margin: f64) -> f64 {
    batch
        .iter()
        .map(|s| {
            let (z, _) = model.forward(&s.x).unwrap();
            let h = entropy_of_logits(z.as_slice());
            ((h - delta).abs() - margin).abs().min((h - delta).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn entropy_separation() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let delta = (K as f64).ln() / 2.0;
    let margin = 0.3;
    let (mut done, mut active) = (0, 0);
    while done < CASES {
        let model = random_model(&mut rng);
        let batch = unlabeled(&mut rng, 1..8);
        let refs: Vec<&UnlabeledSample> = batch.iter().collect();
        // The loss is not differentiable at the margin edges; redraw near them.
        if kink_distance(&model, &refs, delta, margin) < 1e-4 {
            continue;
        }
        let term = loss_entropy_separation(&model, &refs, delta, margin).unwrap();
        if term.value != 0.0 {
            active += 1;
        }
        let fd = numeric_grad(&model, |m| {
            loss_entropy_separation(m, &refs, delta, margin).unwrap().value
        });
        check(done, &term.grads, &fd);
        done += 1;
    }
    assert!(active > CASES / 2, "only {active} cases exercised the active branch");
}

#[test]
fn clip_known_soft_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for case in 0..CASES {
        let model = random_model(&mut rng);
        let batch = unlabeled(&mut rng, 1..8);
        let mut part = TargetPartition::default();
        for s in &batch {
            part.known_ids.insert(s.id);
            part.pseudo_probs.insert(s.id, random_probs(&mut rng));
        }
        let refs: Vec<&UnlabeledSample> = batch.iter().collect();
        let term = loss_clip_known(&model, &refs, &part).unwrap();
        let fd = numeric_grad(&model, |m| loss_clip_known(m, &refs, &part).unwrap().value);
        check(case, &term.grads, &fd);
    }
}

#[test]
fn clip_unknown_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..CASES {
        let model = random_model(&mut rng);
        let batch = unlabeled(&mut rng, 1..8);
        let refs: Vec<&UnlabeledSample> = batch.iter().collect();
        let term = loss_clip_unknown(&model, &refs).unwrap();
        let fd = numeric_grad(&model, |m| loss_clip_unknown(m, &refs).unwrap().value);
        check(case, &term.grads, &fd);
    }
}

#[test]
fn total_objective_all_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cfg = LossConfig {
        delta: (K as f64).ln() / 2.0,
        margin: 0.3,
        toggles: LossToggles::default(),
    };
    let mut done = 0;
    while done < CASES {
        let model = random_model(&mut rng);
        let src = labeled(&mut rng, 1..6);
        let mut tgt = unlabeled(&mut rng, 2..8);
        tgt.iter_mut().for_each(|s| s.id += 1000);
        let mut part = TargetPartition::default();
        for s in &tgt {
            match rng.random_range(0..3) {
                0 => {
                    part.known_ids.insert(s.id);
                    part.pseudo_probs.insert(s.id, random_probs(&mut rng));
                }
                1 => {
                    part.unknown_ids.insert(s.id);
                }
                _ => {}
            }
        }
        let src_refs: Vec<&LabeledSample> = src.iter().collect();
        let tgt_refs: Vec<&UnlabeledSample> = tgt.iter().collect();
        if kink_distance(&model, &tgt_refs, cfg.delta, cfg.margin) < 1e-4 {
            continue;
        }
        let mode = [TrainMode::Oda, TrainMode::SfPretrain, TrainMode::SfAdapt][done as usize % 3];
        let batches = StepBatches {
            source: mode.uses_source().then_some(src_refs.as_slice()),
            target: mode.uses_target().then_some(tgt_refs.as_slice()),
            partition: mode.uses_target().then_some(&part),
        };
        let (_, grads) = loss_total(&model, batches, &cfg, mode).unwrap();
        let fd = numeric_grad(&model, |m| loss_total(m, batches, &cfg, mode).unwrap().0.total);
        check(done, &grads, &fd);
        done += 1;
    }
}
