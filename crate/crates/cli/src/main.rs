//! `rdvae` command-line tool: dataset generation, training, analysis,
//! rate-distortion checks and parameter sweeps.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rdvae::losses::{CodingLoss, LossTag, Reduction};
use rdvae::vae::LossForm;

use config::{DatasetKind, RunConfig};
use error::CliResult;

#[derive(Parser)]
#[command(name = "rdvae", version, about = "Rate-distortion analysis of β-VAE latent spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset.
    Gen(Common),
    /// Train a model and write checkpoint.json and history.csv.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write a checkpoint every this many epochs.
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Compute the latent-space statistics of a trained model.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the water-filling curve and the quantized-rate identity grid.
    Rdcheck {
        #[command(flatten)]
        common: Common,
        /// Channel variances of the rate-distortion curve.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0 / 6.0, 2.0 / 3.0, 8.0 / 3.0])]
        sigma2: Vec<f64>,
    },
    /// Train and analyze every dataset × loss × λ cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values = ["mix", "ramp", "norm"])]
        datasets: Vec<DatasetArg>,
        #[arg(long, value_delimiter = ',', default_values = ["mse", "down", "up"])]
        losses: Vec<LossArg>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 100.0, 1000.0])]
        lambdas: Vec<f64>,
        /// Worker threads; cells are independent and results keep cell order.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    Mix,
    Ramp,
    Norm,
    Idx,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mix => Self::Mix,
            DatasetArg::Ramp => Self::Ramp,
            DatasetArg::Norm => Self::Norm,
            DatasetArg::Idx => Self::Idx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Down,
    Up,
    Bce,
    Ssim,
}

impl From<LossArg> for LossTag {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => Self::SquareError,
            LossArg::Down => Self::DownwardConvex,
            LossArg::Up => Self::UpwardConvex,
            LossArg::Bce => Self::Bce,
            LossArg::Ssim => Self::Ssim,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Mean,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossFormArg {
    Conventional,
    Decomposed,
}

/// Flags shared by every command; each overrides the matching config key.
#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for both data generation and training.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, action = clap::ArgAction::Set)]
    deterministic: Option<bool>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    loss_form: Option<LossFormArg>,
    /// How the coding loss combines over input dimensions.
    #[arg(long, value_enum)]
    reduction: Option<ReductionArg>,
    /// Step of the coding-loss second derivative.
    #[arg(long)]
    eps: Option<f64>,
    /// Number of toy samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Directory of a generated toy dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    idx_images: Option<PathBuf>,
    #[arg(long)]
    idx_labels: Option<PathBuf>,
}

impl Common {
    fn run_config(&self, base: Option<RunConfig>) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(b)) => b,
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.dataset.seed = s;
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(d) = self.deterministic {
            cfg.deterministic = d;
        }
        if let Some(d) = self.dataset {
            cfg.dataset.kind = d.into();
        }
        if let Some(l) = self.loss {
            let tag = LossTag::from(l);
            cfg.loss = Some(match cfg.loss {
                Some(prev) => CodingLoss { tag, ..prev },
                None => CodingLoss::new(tag),
            });
        }
        if let Some(v) = self.lambda {
            cfg.train.lambda = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.train.batch_size = v;
        }
        if let Some(f) = self.loss_form {
            cfg.train.loss_form = match f {
                LossFormArg::Conventional => LossForm::Conventional,
                LossFormArg::Decomposed => LossForm::Decomposed,
            };
        }
        if let Some(r) = self.reduction {
            cfg.reduction = Some(match r {
                ReductionArg::Mean => Reduction::Mean,
                ReductionArg::Sum => Reduction::Sum,
            });
        }
        if let Some(v) = self.eps {
            cfg.analysis.eps = v;
        }
        if let Some(v) = self.n {
            cfg.dataset.n_samples = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = Some(v);
            cfg.model = None;
        }
        if let Some(p) = &self.data {
            cfg.dataset.path = Some(p.clone());
        }
        if let Some(p) = &self.idx_images {
            cfg.dataset.idx_images = Some(p.clone());
        }
        if let Some(p) = &self.idx_labels {
            cfg.dataset.idx_labels = Some(p.clone());
        }
        Ok(cfg)
    }
}

/// The `config.json` written next to a checkpoint, used as the base
/// configuration when `--config` is absent.
fn sibling_config(common: &Common, checkpoint: &Path) -> CliResult<Option<RunConfig>> {
    let sibling = checkpoint.parent().map(|d| d.join("config.json"));
    Ok(match sibling {
        Some(p) if common.config.is_none() && p.exists() => {
            let mut b = RunConfig::load(&p)?;
            b.out = None;
            Some(b)
        }
        _ => None,
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(c) => commands::gen(&c.run_config(None)?),
        Command::Train {
            common,
            resume,
            checkpoint_every,
        } => {
            let base = match &resume {
                Some(p) => sibling_config(&common, p)?,
                None => None,
            };
            commands::train(
                common.run_config(base)?,
                resume.as_deref(),
                common.epochs,
                checkpoint_every,
            )
        }
        Command::Analyze { common, checkpoint } => {
            let base = sibling_config(&common, &checkpoint)?;
            commands::analyze(common.run_config(base)?, &checkpoint)
        }
        Command::Rdcheck { common, sigma2 } => commands::rdcheck(&common.run_config(None)?, &sigma2),
        Command::Sweep {
            common,
            datasets,
            losses,
            lambdas,
            jobs,
        } => {
            let cfg = common.run_config(None)?;
            let datasets: Vec<DatasetKind> = datasets.into_iter().map(Into::into).collect();
            let losses: Vec<LossTag> = losses.into_iter().map(Into::into).collect();
            commands::sweep(&cfg, &datasets, &losses, &lambdas, jobs, common.epochs.is_some())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rdvae: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
