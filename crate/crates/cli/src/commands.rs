use std::path::{Path, PathBuf};
use std::time::Instant;

use oda_core::data::{
    generate_synthetic, load_embeddings, load_prototypes, write_embeddings, write_prototypes,
    Domain, EmbeddingDataset, UNLABELED,
};
use oda_core::eval::{evaluate, evaluate_zero_shot, EvalReport};
use oda_core::losses::{training_log_csv, LossToggles};
use oda_core::model::{load_checkpoint, save_checkpoint};
use oda_core::trainer::{
    ablation_csv, run_ablation, standard_variants, train_with_progress, EpochSummary, HyperParams,
    TrainInputs,
};
use oda_core::zero_shot::{predict_all, predictions_csv};
use oda_core::{OdaError, Result};

use crate::args::{
    hyper_params, AblateArgs, AdaptArgs, EvalArgs, PretrainArgs, SynthArgs, TrainArgs,
    ZeroShotArgs,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| OdaError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| OdaError::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(path)
}

fn domain_only(ds: EmbeddingDataset, domain: Domain) -> Result<EmbeddingDataset> {
    let records = ds
        .records()
        .iter()
        .filter(|r| r.domain == domain)
        .cloned()
        .collect();
    EmbeddingDataset::new(ds.dim(), ds.num_known_classes(), ds.num_total_classes(), records)
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_text(dir, "report.txt", &report.text_table())?;
    write_text(dir, "report.csv", &report.scalars_csv())?;
    write_text(dir, "confusion.csv", &report.confusion_csv())?;
    write_text(dir, "entropy_hist.csv", &report.entropy_hist_csv())?;
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = args.config();
    let (ds, bank) = generate_synthetic(&cfg)?;
    let dir = &args.out.out;
    ensure_dir(dir)?;
    let source = domain_only(ds.clone(), Domain::Source)?;
    let target = domain_only(ds, Domain::Target)?;
    let paths = [
        dir.join("source.odae"),
        dir.join("target.odae"),
        dir.join("prototypes.odap"),
    ];
    write_embeddings(&source, &paths[0])?;
    write_embeddings(&target, &paths[1])?;
    write_prototypes(&bank, &paths[2])?;
    for p in &paths {
        println!("wrote {}", p.display());
    }
    println!(
        "{} source records ({} classes x {}), {} target records ({} classes x {}), dim {}, {} prototypes",
        source.records().len(),
        cfg.num_known,
        cfg.source_per_class,
        target.records().len(),
        cfg.num_total,
        cfg.target_per_class,
        cfg.dim,
        bank.len()
    );
    Ok(())
}

pub fn zero_shot(args: &ZeroShotArgs) -> Result<()> {
    let ds = load_embeddings(&args.target)?;
    let bank = load_prototypes(&args.prototypes)?;
    let hp = HyperParams {
        tau: args.zs.tau,
        delta: args.threshold.delta,
        clip_delta: args.zs.clip_delta,
        ..HyperParams::default()
    };
    hp.validate()?;
    let delta = hp.resolved_clip_delta(ds.num_known_classes());
    let preds = predict_all(&ds.target_split(), &bank, hp.tau, delta)?;
    let dir = &args.out.out;
    ensure_dir(dir)?;
    let path = write_text(dir, "predictions.csv", &predictions_csv(&preds))?;
    let rejected = preds.iter().filter(|p| p.is_unknown()).count();
    println!(
        "{} target records, {} rejected as unknown (delta {delta:.5}); wrote {}",
        preds.len(),
        rejected,
        path.display()
    );
    let labeled = ds
        .records_in(Domain::Target)
        .all(|r| r.label != UNLABELED);
    if labeled && !preds.is_empty() {
        let report = evaluate_zero_shot(&bank, &ds, hp.tau, delta, args.avg.averaging())?;
        write_report(dir, &report)?;
        print!("{}", report.text_table());
    } else {
        log::info!("target labels incomplete; skipping report");
    }
    Ok(())
}

fn progress(epochs: usize) -> impl FnMut(&EpochSummary) {
    let start = Instant::now();
    move |s| {
        println!(
            "epoch {:>3}/{epochs}  mean_total {:.6}  elapsed {:.2}s",
            s.epoch + 1,
            s.mean_total,
            start.elapsed().as_secs_f64()
        );
    }
}

/// Runs training and writes `model.odac` plus `train_log.csv`. On divergence
/// the last finite parameters are saved as `last_finite.odac` before the
/// error is returned.
fn run_and_save(inputs: TrainInputs<'_>, hp: &HyperParams, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let run = match train_with_progress(inputs, hp, progress(hp.epochs)) {
        Ok(run) => run,
        Err(OdaError::NonFiniteLoss { step, last_finite }) => {
            let path = dir.join("last_finite.odac");
            save_checkpoint(&last_finite, &path)?;
            eprintln!("last finite parameters saved to {}", path.display());
            return Err(OdaError::NonFiniteLoss { step, last_finite });
        }
        Err(e) => return Err(e),
    };
    let model_path = dir.join("model.odac");
    save_checkpoint(&run.model, &model_path)?;
    let log_path = write_text(dir, "train_log.csv", &training_log_csv(&run.history))?;
    if let Some(p) = &run.partition {
        println!(
            "zero-shot partition: {} known, {} unknown",
            p.known_ids.len(),
            p.unknown_ids.len()
        );
    }
    println!(
        "{} mode, {} steps; wrote {} and {}",
        run.mode.as_str(),
        run.history.len(),
        model_path.display(),
        log_path.display()
    );
    Ok(())
}

pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let source = load_embeddings(&args.source)?.source_split();
    let hp = hyper_params(&args.optim, None, None, None, LossToggles::default());
    run_and_save(TrainInputs::Pretrain { source: &source }, &hp, &args.out.out)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let source = load_embeddings(&args.source)?.source_split();
    let target = load_embeddings(&args.target)?.target_split();
    let bank = load_prototypes(&args.prototypes)?;
    let hp = hyper_params(
        &args.optim,
        Some(&args.zs),
        Some(&args.threshold),
        Some(&args.margin),
        args.toggles.toggles(!args.no_source),
    );
    run_and_save(
        TrainInputs::Joint {
            source: &source,
            target: &target,
            bank: &bank,
        },
        &hp,
        &args.out.out,
    )
}

pub fn adapt(args: &AdaptArgs) -> Result<()> {
    let ds = load_embeddings(&args.target)?;
    let n_source = ds.count(Domain::Source);
    if n_source > 0 {
        return Err(OdaError::InvalidConfig(format!(
            "adapt is source-free, but {} holds {n_source} source-domain records",
            args.target.display()
        )));
    }
    let target = ds.target_split();
    let bank = load_prototypes(&args.prototypes)?;
    let initial = load_checkpoint(&args.init)?;
    let hp = hyper_params(
        &args.optim,
        Some(&args.zs),
        Some(&args.threshold),
        Some(&args.margin),
        args.toggles.toggles(false),
    );
    run_and_save(
        TrainInputs::Adapt {
            target: &target,
            bank: &bank,
            initial,
        },
        &hp,
        &args.out.out,
    )
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ds = domain_only(load_embeddings(&args.target)?, Domain::Target)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let hp = HyperParams {
        delta: args.threshold.delta,
        ..HyperParams::default()
    };
    hp.validate()?;
    let delta = hp.resolved_delta(ds.num_known_classes());
    let report = evaluate(&model, &ds, delta, args.avg.averaging())?;
    let dir = &args.out.out;
    ensure_dir(dir)?;
    write_report(dir, &report)?;
    print!("{}", report.text_table());
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let source = domain_only(load_embeddings(&args.source)?, Domain::Source)?;
    let target = domain_only(load_embeddings(&args.target)?, Domain::Target)?;
    if source.dim() != target.dim() || source.num_known_classes() != target.num_known_classes() {
        return Err(OdaError::Invariant(
            "source and target files disagree on dimension or class counts".into(),
        ));
    }
    let mut records = source.records().to_vec();
    records.extend(target.records().iter().cloned());
    let ds = EmbeddingDataset::new(
        target.dim(),
        target.num_known_classes(),
        target.num_total_classes(),
        records,
    )?;
    let bank = load_prototypes(&args.prototypes)?;
    let hp = hyper_params(
        &args.optim,
        Some(&args.zs),
        Some(&args.threshold),
        Some(&args.margin),
        LossToggles::default(),
    );
    let rows = run_ablation(&ds, &bank, &hp, &standard_variants(), args.avg.averaging())?;
    let dir = &args.out.out;
    ensure_dir(dir)?;
    let path = write_text(dir, "ablation.csv", &ablation_csv(&rows))?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>8}", "variant", "acc_kwn", "acc_unk", "h_score", "auroc");
    for r in &rows {
        println!(
            "{:<10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.variant.name, r.report.acc_kwn, r.report.acc_unk, r.report.h_score, r.report.auroc
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
