use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use oda_core::data::{DomainShift, SynthConfig};
use oda_core::eval::Averaging;
use oda_core::losses::LossToggles;
use oda_core::trainer::HyperParams;

#[derive(Debug, Parser)]
#[command(
    name = "oda",
    version,
    about = "Open-set domain adaptation over precomputed embeddings, guided by zero-shot prototypes",
    after_help = "Log verbosity is read from ODA_LOG_LEVEL (error, info, debug). Exit codes: 2 usage, 3 I/O or file format, 4 non-finite loss, 5 invariant violation."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic benchmark (source.odae, target.odae, prototypes.odap).
    Synth(SynthArgs),
    /// Classify target records with the prototype bank alone.
    ZeroShot(ZeroShotArgs),
    /// Train on labeled source data only (source cross-entropy).
    Pretrain(PretrainArgs),
    /// Joint open-set adaptation using source and target data.
    Train(TrainArgs),
    /// Source-free adaptation of a pretrained checkpoint on target data.
    Adapt(AdaptArgs),
    /// Evaluate a checkpoint on labeled target data.
    Eval(EvalArgs),
    /// Train the full objective and each single-loss removal, one report row each.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Number of known (shared) classes.
    #[arg(long, default_value_t = 10)]
    pub known: usize,
    /// Number of target classes, known plus unknown.
    #[arg(long, default_value_t = 21)]
    pub total: usize,
    #[arg(long, default_value_t = 50)]
    pub source_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub target_per_class: usize,
    /// RMS norm of the per-record noise vector.
    #[arg(long, default_value_t = 0.15)]
    pub spread: f64,
    /// Norm of the source-to-target offset (random direction).
    #[arg(long, default_value_t = 0.2)]
    pub shift: f64,
    /// Weight of the direction shared by all class centers, in [0, 1).
    #[arg(long, default_value_t = 0.93)]
    pub shared_direction: f64,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            dim: self.dim,
            num_known: self.known,
            num_total: self.total,
            source_per_class: self.source_per_class,
            target_per_class: self.target_per_class,
            cluster_spread: self.spread,
            domain_shift: DomainShift::Magnitude(self.shift),
            shared_direction: self.shared_direction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Entropy threshold for rejection and entropy separation [default: ln(known classes)/2].
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ZeroShotParams {
    /// Zero-shot softmax temperature.
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    /// Entropy threshold for the zero-shot known/unknown split [default: same as --delta].
    #[arg(long)]
    pub clip_delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// Seed for initialization and batch order.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Number of passes over the larger split.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Mini-batch size per domain.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct MarginArg {
    /// Entropy-separation margin m.
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct TargetToggles {
    /// Drop the entropy-separation term.
    #[arg(long)]
    pub no_ent: bool,
    /// Drop the zero-shot known (soft pseudo-label) term.
    #[arg(long)]
    pub no_kwn: bool,
    /// Drop the zero-shot unknown (entropy maximization) term.
    #[arg(long)]
    pub no_unk: bool,
}

#[derive(Debug, Args)]
pub struct AveragingArg {
    /// Average known-class accuracy over classes instead of pooling samples.
    #[arg(long = "macro")]
    pub macro_avg: bool,
}

impl AveragingArg {
    pub fn averaging(&self) -> Averaging {
        if self.macro_avg {
            Averaging::Macro
        } else {
            Averaging::Micro
        }
    }
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Target embeddings (.odae).
    #[arg(long)]
    pub target: PathBuf,
    /// Prototype bank (.odap).
    #[arg(long)]
    pub prototypes: PathBuf,
    #[command(flatten)]
    pub zs: ZeroShotParams,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub avg: AveragingArg,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Source embeddings (.odae).
    #[arg(long)]
    pub source: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Source embeddings (.odae).
    #[arg(long)]
    pub source: PathBuf,
    /// Target embeddings (.odae).
    #[arg(long)]
    pub target: PathBuf,
    /// Prototype bank (.odap).
    #[arg(long)]
    pub prototypes: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub zs: ZeroShotParams,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub margin: MarginArg,
    /// Drop the source cross-entropy term.
    #[arg(long)]
    pub no_source: bool,
    #[command(flatten)]
    pub toggles: TargetToggles,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Target embeddings (.odae); must not contain source-domain records.
    #[arg(long)]
    pub target: PathBuf,
    /// Prototype bank (.odap).
    #[arg(long)]
    pub prototypes: PathBuf,
    /// Pretrained checkpoint (.odac) to adapt.
    #[arg(long)]
    pub init: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub zs: ZeroShotParams,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub margin: MarginArg,
    #[command(flatten)]
    pub toggles: TargetToggles,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Labeled target embeddings (.odae).
    #[arg(long)]
    pub target: PathBuf,
    /// Checkpoint (.odac) to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub avg: AveragingArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Source embeddings (.odae).
    #[arg(long)]
    pub source: PathBuf,
    /// Labeled target embeddings (.odae).
    #[arg(long)]
    pub target: PathBuf,
    /// Prototype bank (.odap).
    #[arg(long)]
    pub prototypes: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub zs: ZeroShotParams,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[command(flatten)]
    pub margin: MarginArg,
    #[command(flatten)]
    pub avg: AveragingArg,
}

/// Assembles hyperparameters; flags a command does not take keep their defaults.
pub fn hyper_params(
    optim: &OptimArgs,
    zs: Option<&ZeroShotParams>,
    threshold: Option<&ThresholdArgs>,
    margin: Option<&MarginArg>,
    toggles: LossToggles,
) -> HyperParams {
    let d = HyperParams::default();
    HyperParams {
        tau: zs.map_or(d.tau, |z| z.tau),
        delta: threshold.and_then(|t| t.delta),
        clip_delta: zs.and_then(|z| z.clip_delta),
        margin: margin.map_or(d.margin, |m| m.margin),
        batch_size: optim.batch,
        epochs: optim.epochs,
        lr: optim.lr,
        momentum: optim.momentum,
        seed: optim.seed,
        toggles,
    }
}

impl TargetToggles {
    pub fn toggles(&self, use_source: bool) -> LossToggles {
        LossToggles {
            use_source,
            use_ent: !self.no_ent,
            use_kwn: !self.no_kwn,
            use_unk: !self.no_unk,
        }
    }
}
