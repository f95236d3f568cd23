//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, then exits non-zero if any failed.
//!
//!     cargo test -p oda-cli --test acceptance

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use oda_core::data::{generate_synthetic, LabeledSample, SynthConfig, UnlabeledSample};
use oda_core::eval::{auroc, evaluate, evaluate_zero_shot, h_score, Averaging};
use oda_core::losses::{
    loss_clip_known, loss_clip_unknown, loss_entropy_separation, loss_source_ce, loss_total,
    LossConfig, LossToggles, StepBatches, TrainMode,
};
use oda_core::model::{OdaClassifier, ParamGrads};
use oda_core::numerics::{
    cosine_similarity, entropy, entropy_of_logits, softmax_temp, ProbVector,
};
use oda_core::trainer::{run_ablation, standard_variants, train, HyperParams, TrainInputs};
use oda_core::zero_shot::TargetPartition;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

const DIM: usize = 5;
const K: usize = 4;
const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_CASES: usize = 100;

fn random_model(rng: &mut ChaCha8Rng) -> OdaClassifier {
    let scale = rng.random_range(0.3..3.0);
    let w = (0..DIM * K).map(|_| rng.random_range(-scale..scale)).collect();
    let b = (0..K).map(|_| rng.random_range(-1.0..1.0)).collect();
    OdaClassifier::from_parts(DIM, K, w, b).unwrap()
}

fn random_x(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_probs(rng: &mut ChaCha8Rng) -> ProbVector {
    let s: Vec<f64> = (0..K).map(|_| rng.random_range(-3.0..3.0)).collect();
    softmax_temp(&s, 1.0).unwrap()
}

fn numeric_grad(model: &OdaClassifier, f: &dyn Fn(&OdaClassifier) -> f64) -> Vec<f64> {
    (0..DIM * K + K)
        .map(|i| {
            let probe = |d: f64| {
                let mut m = model.clone();
                if i < DIM * K {
                    m.weights_mut()[i] += d;
                } else {
                    m.biases_mut()[i - DIM * K] += d;
                }
                f(&m)
            };
            (probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rel_err(g: &ParamGrads, fd: &[f64]) -> f64 {
    let a: Vec<f64> = g.weights.iter().chain(&g.biases).copied().collect();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(fd).map(|(x, y)| x - y).collect();
    let scale = n(&a).max(n(fd));
    if scale < 1e-10 {
        n(&diff)
    } else {
        n(&diff) / scale
    }
}

/// Distance of the nearest per-sample entropy to a kink of the separation loss.
fn near_kink(model: &OdaClassifier, xs: &[UnlabeledSample], delta: f64, margin: f64) -> bool {
    xs.iter().any(|s| {
        let h = entropy_of_logits(model.forward(&s.x).unwrap().0.as_slice());
        ((h - delta).abs() - margin).abs() < 1e-4 || (h - delta).abs() < 1e-4
    })
}

struct Case {
    model: OdaClassifier,
    source: Vec<LabeledSample>,
    target: Vec<UnlabeledSample>,
    partition: TargetPartition,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let model = random_model(rng);
    let ns = rng.random_range(1..7);
    let source = (0..ns)
        .map(|id| LabeledSample {
            id,
            x: random_x(rng),
            label: rng.random_range(0..K),
        })
        .collect();
    let nt = rng.random_range(2..8);
    let target: Vec<UnlabeledSample> = (0..nt)
        .map(|i| UnlabeledSample {
            id: 100 + i,
            x: random_x(rng),
        })
        .collect();
    let mut partition = TargetPartition::default();
    for s in &target {
        match rng.random_range(0..3) {
            0 => {
                partition.known_ids.insert(s.id);
                partition.pseudo_probs.insert(s.id, random_probs(rng));
            }
            1 => {
                partition.unknown_ids.insert(s.id);
            }
            _ => {}
        }
    }
    Case {
        model,
        source,
        target,
        partition,
    }
}

fn gradient_oracles() -> Outcome {
    let delta = (K as f64).ln() / 2.0;
    let margin = 0.3;
    let cfg = LossConfig {
        delta,
        margin,
        toggles: LossToggles::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut done = 0;
    while done < FD_CASES {
        let c = random_case(&mut rng);
        if near_kink(&c.model, &c.target, delta, margin) {
            continue;
        }
        let src: Vec<&LabeledSample> = c.source.iter().collect();
        let tgt: Vec<&UnlabeledSample> = c.target.iter().collect();
        let kwn: Vec<&UnlabeledSample> = tgt.iter().copied().filter(|s| c.partition.is_known(s.id)).collect();
        let unk: Vec<&UnlabeledSample> = tgt.iter().copied().filter(|s| c.partition.is_unknown(s.id)).collect();
        let part = &c.partition;
        let batches = StepBatches {
            source: Some(&src),
            target: Some(&tgt),
            partition: Some(part),
        };
        type Eval<'a> = Box<dyn Fn(&OdaClassifier) -> (f64, ParamGrads) + 'a>;
        let losses: [(&str, Eval); 5] = [
            ("L_s", Box::new(|m| {
                let t = loss_source_ce(m, &src).unwrap();
                (t.value, t.grads)
            })),
            ("L_ent", Box::new(|m| {
                let t = loss_entropy_separation(m, &tgt, delta, margin).unwrap();
                (t.value, t.grads)
            })),
            ("L_kwn", Box::new(|m| {
                let t = loss_clip_known(m, &kwn, part).unwrap();
                (t.value, t.grads)
            })),
            ("L_unk", Box::new(|m| {
                let t = loss_clip_unknown(m, &unk).unwrap();
                (t.value, t.grads)
            })),
            ("L_total", Box::new(|m| {
                let (b, g) = loss_total(m, batches, &cfg, TrainMode::Oda).unwrap();
                (b.total, g)
            })),
        ];
        for (name, f) in &losses {
            let (_, g) = f(&c.model);
            let fd = numeric_grad(&c.model, &|m| f(m).0);
            let e = rel_err(&g, &fd);
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
        done += 1;
    }
    let summary = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.values().all(|&e| e <= FD_TOL), || format!("max rel err: {summary}"))?;
    Ok(format!("{FD_CASES} cases per loss, max rel err: {summary}"))
}

// ---------------------------------------------------------------- numerics

fn numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let k = rng.random_range(1..30);
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = [0.01, 0.1, 1.0, 5.0][rng.random_range(0..4)];
        let p = softmax_temp(&s, tau).unwrap();
        let sum: f64 = p.as_slice().iter().sum();
        ensure((sum - 1.0).abs() < 1e-12, || format!("softmax sums to {sum}"))?;
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        let q = softmax_temp(&shifted, tau).unwrap();
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            ensure((a - b).abs() < 1e-9, || format!("shift changed {a} to {b}"))?;
        }
        let h = entropy(&p);
        ensure(h >= 0.0 && h <= (k as f64).ln() + 1e-12, || format!("entropy {h} for K={k}"))?;

        let a: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        if let Ok(cos) = cosine_similarity(&a, &b) {
            ensure((-1.0..=1.0).contains(&cos), || format!("cosine {cos}"))?;
        }
        let scaled: Vec<f64> = a.iter().map(|v| v * 3.7).collect();
        if let Ok(cos) = cosine_similarity(&a, &scaled) {
            ensure(cos <= 1.0 && (cos - 1.0).abs() < 1e-12, || format!("self cosine {cos}"))?;
        }
    }
    let one_hot = ProbVector::new(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    ensure(entropy(&one_hot) == 0.0, || "0 ln 0 is not 0".into())?;
    let uniform = ProbVector::uniform(10);
    ensure((entropy(&uniform) - 10f64.ln()).abs() < 1e-12, || "uniform entropy".into())?;
    let p = softmax_temp(&[0.3, 0.2], 0.01).unwrap();
    ensure((p.as_slice()[0] - 0.999_954_602_131_297_6).abs() < 1e-12, || "sharp softmax".into())?;
    ensure(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err(), || "zero norm accepted".into())?;
    Ok("1000 random vectors: normalization, shift invariance, entropy bounds, cosine range".into())
}

// ------------------------------------------------------- entropy separation

fn spread_dist(k: usize, e: f64) -> Vec<f64> {
    let mut p = vec![e / (k - 1) as f64; k];
    p[0] = 1.0 - e;
    p
}

fn raw_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

fn entropy_separation_grid() -> Outcome {
    let k = 10;
    let delta = (k as f64).ln() / 2.0;
    let margin = 0.5;
    let sample = UnlabeledSample { id: 0, x: vec![0.0] };
    let (mut zero, mut active) = (0, 0);
    for i in 0..1000 {
        let h = (k as f64).ln() * (i as f64 + 0.5) / 1000.0;
        let (mut lo, mut hi) = (0.0, (k - 1) as f64 / k as f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if raw_entropy(&spread_dist(k, mid)) < h {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = spread_dist(k, 0.5 * (lo + hi));
        let model =
            OdaClassifier::from_parts(1, k, vec![0.0; k], p.iter().map(|v| v.ln()).collect()).unwrap();
        let value = loss_entropy_separation(&model, &[&sample], delta, margin).unwrap().value;
        let expected = if (h - delta).abs() > margin { -(h - delta).abs() } else { 0.0 };
        ensure((value - expected).abs() <= 1e-9, || format!("H = {h}: got {value}, expected {expected}"))?;
        if expected == 0.0 {
            ensure(value == 0.0, || format!("H = {h}: inside the band but {value}"))?;
            zero += 1;
        } else {
            active += 1;
        }
    }
    Ok(format!("1000 H values ({zero} in band, {active} outside), tol 1e-9"))
}

// ----------------------------------------------------------------- metrics

fn pairwise_auroc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut s = 0.0;
    for &u in unknown {
        for &k in known {
            s += if u > k {
                1.0
            } else if u == k {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (known.len() * unknown.len()) as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let nk = rng.random_range(1..60);
        let nu = rng.random_range(1..60);
        // coarse values in half the cases so ties are common
        let coarse = case % 2 == 0;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..3.0);
                    if coarse { (v * 4.0).round() / 4.0 } else { v }
                })
                .collect()
        };
        let (k, u) = (draw(nk), draw(nu));
        let diff = (auroc(&k, &u).unwrap() - pairwise_auroc(&k, &u)).abs();
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-9, || format!("rank AUROC differs from pairwise by {worst}"))?;
    let h = h_score(0.9, 0.7).unwrap();
    ensure(h == 2.0 * 0.9 * 0.7 / 1.6 && (h - 0.7875).abs() < 1e-15, || format!("H(0.9, 0.7) = {h}"))?;
    ensure(h_score(0.0, 0.0).unwrap() == 0.0, || "H(0, 0) != 0".into())?;
    ensure(h_score(1.0, 0.0).unwrap() == 0.0, || "H(1, 0) != 0".into())?;
    Ok(format!("100 score sets, max |rank - pairwise| = {worst:.1e}; H(0.9,0.7) = {h}"))
}

// -------------------------------------------------------------- end to end

fn end_to_end() -> Outcome {
    let cfg = SynthConfig::default();
    ensure(
        cfg.seed == 7 && cfg.dim == 64 && cfg.num_known == 10 && cfg.num_total == 21 && cfg.cluster_spread == 0.15,
        || "default fixture config changed".into(),
    )?;
    let (ds, bank) = generate_synthetic(&cfg).unwrap();
    let (src, tgt) = (ds.source_split(), ds.target_split());
    let hp = HyperParams::default();
    ensure(hp.epochs == 30 && hp.tau == 0.01, || "default schedule changed".into())?;
    let delta = hp.resolved_delta(10);
    let avg = Averaging::Micro;

    let oda = train(TrainInputs::Joint { source: &src, target: &tgt, bank: &bank }, &hp).unwrap();
    let r_oda = evaluate(&oda.model, &ds, delta, avg).unwrap();

    let pre = train(TrainInputs::Pretrain { source: &src }, &hp).unwrap();
    let r_src = evaluate(&pre.model, &ds, delta, avg).unwrap();

    let sf = train(TrainInputs::Adapt { target: &tgt, bank: &bank, initial: pre.model }, &hp).unwrap();
    let r_sf = evaluate(&sf.model, &ds, delta, avg).unwrap();

    let r_zs = evaluate_zero_shot(&bank, &ds, hp.tau, delta, avg).unwrap();

    let detail = format!(
        "H: ODA {:.4}, source-only {:.4}, SF {:.4}; AUROC: ODA {:.4}, zero-shot {:.4}",
        r_oda.h_score, r_src.h_score, r_sf.h_score, r_oda.auroc, r_zs.auroc
    );
    let a = r_oda.h_score >= r_src.h_score + 0.10;
    let b = (r_sf.h_score - r_oda.h_score).abs() <= 0.05;
    let c = r_oda.auroc >= r_zs.auroc;
    ensure(a && b && c, || format!("(a) {a} (b) {b} (c) {c}; {detail}"))?;
    Ok(detail)
}

fn ablation() -> Outcome {
    let (ds, bank) = generate_synthetic(&SynthConfig::default()).unwrap();
    let rows = run_ablation(&ds, &bank, &HyperParams::default(), &standard_variants(), Averaging::Micro)
        .unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.variant.name.as_str()).collect();
    ensure(
        names == ["full", "w/o L_s", "w/o L_ent", "w/o L_kwn", "w/o L_unk"],
        || format!("rows {names:?}"),
    )?;
    let full = rows[0].report.h_score;
    let summary = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.variant.name, r.report.h_score))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(rows[1..].iter().all(|r| full >= r.report.h_score), || summary.clone())?;
    Ok(summary)
}

// --------------------------------------------------------------------- CLI

struct Cli {
    dir: tempfile::TempDir,
}

impl Cli {
    fn new() -> Self {
        Cli {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> std::process::Output {
        Command::new(env!("CARGO_BIN_EXE_oda"))
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Result<std::process::Output, String> {
        let out = self.run(args);
        ensure(out.status.success(), || {
            format!("`oda {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
        })?;
        Ok(out)
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let cli = Cli::new();
    let fx = ["--source", "fx/source.odae"];
    let tg = ["--target", "fx/target.odae"];
    let pr = ["--prototypes", "fx/prototypes.odap"];
    let short = ["--epochs", "2"];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec![]),
        ("zero-shot", [tg, pr].concat()),
        ("pretrain", [&fx[..], &short].concat()),
        ("train", [fx, tg, pr, short].concat()),
        ("adapt", [&tg[..], &pr, &["--init", "pretrain_a/model.odac"], &short].concat()),
        ("eval", [&tg[..], &["--checkpoint", "train_a/model.odac"]].concat()),
        ("ablate", [fx, tg, pr, short].concat()),
    ];
    cli.ok(&["synth", "--out", "fx"])?;
    let mut checked = 0;
    for (cmd, rest) in &commands {
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let out = format!("{cmd}_{run}");
            let mut args = vec![*cmd, "--out", &out];
            args.extend(rest.iter().copied());
            cli.ok(&args)?;
            outputs.push(dir_contents(&cli.path(&out)));
        }
        ensure(!outputs[0].is_empty(), || format!("{cmd} wrote nothing"))?;
        ensure(
            outputs[0].keys().eq(outputs[1].keys()),
            || format!("{cmd}: file sets differ"),
        )?;
        for (name, bytes) in &outputs[0] {
            ensure(&outputs[1][name] == bytes, || format!("{cmd}: {name} differs between runs"))?;
            checked += 1;
        }
    }
    Ok(format!("{} commands run twice, {checked} artifacts byte-identical", commands.len()))
}

fn source_free_contract() -> Outcome {
    let cli = Cli::new();
    cli.ok(&["synth", "--out", "fx"])?;
    let refused = cli.run(&["adapt", "--source", "fx/source.odae", "--target", "fx/target.odae"]);
    let stderr = String::from_utf8_lossy(&refused.stderr);
    ensure(refused.status.code() == Some(2), || format!("adapt --source exited {:?}", refused.status.code()))?;
    ensure(stderr.contains("adapt is source-free"), || format!("message was: {stderr}"))?;
    let help = cli.ok(&["adapt", "--help"])?;
    ensure(
        !String::from_utf8_lossy(&help.stdout).contains("--source"),
        || "adapt --help lists a source flag".into(),
    )?;
    // A target file that smuggles in source-domain records is refused too.
    let mixed = cli.run(&[
        "adapt", "--target", "fx/source.odae", "--prototypes", "fx/prototypes.odap", "--init", "x.odac",
    ]);
    ensure(mixed.status.code() == Some(2), || format!("mixed target file exited {:?}", mixed.status.code()))?;

    cli.ok(&["pretrain", "--source", "fx/source.odae", "--out", "pre", "--epochs", "2"])?;
    cli.ok(&[
        "adapt", "--target", "fx/target.odae", "--prototypes", "fx/prototypes.odap",
        "--init", "pre/model.odac", "--out", "sf", "--epochs", "2",
    ])?;
    let log = std::fs::read_to_string(cli.path("sf/train_log.csv")).unwrap();
    let mut lines = log.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (ls, ns) = (col("l_source"), col("n_source"));
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        ensure(f[ls].parse::<f64>().unwrap() == 0.0 && f[ns] == "0", || format!("source term in row: {line}"))?;
        rows += 1;
    }
    ensure(rows > 0, || "empty adapt log".into())?;
    Ok(format!("adapt --source exits 2; {rows} logged steps with zero source evaluations"))
}

fn main() {
    let criteria = [
        Criterion { name: "gradient oracles", budget: Some(Duration::from_secs(10)), run: gradient_oracles },
        Criterion { name: "numerics", budget: Some(Duration::from_secs(5)), run: numerics },
        Criterion { name: "entropy separation grid", budget: None, run: entropy_separation_grid },
        Criterion { name: "metric oracles", budget: None, run: metric_oracles },
        Criterion { name: "end-to-end benchmark", budget: Some(Duration::from_secs(60)), run: end_to_end },
        Criterion { name: "ablation harness", budget: None, run: ablation },
        Criterion { name: "determinism", budget: None, run: determinism },
        Criterion { name: "source-free contract", budget: None, run: source_free_contract },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {:<24} [{elapsed:.2?}] {detail}", c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:<24} [{elapsed:.2?}] {detail}", c.name);
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
