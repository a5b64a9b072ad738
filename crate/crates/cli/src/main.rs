//! `dagcn` command-line entry point.
//!
//! Exit codes: 0 on success, 1 on I/O or environment failures, 2 on bad
//! user input or configuration.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Error caused by user input; maps to exit code 2.
#[derive(Debug)]
pub struct UserError(String);

impl UserError {
    pub fn new(msg: impl Into<String>) -> Self {
        UserError(msg.into())
    }
}

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

#[derive(Parser, Debug)]
#[command(
    name = "dagcn",
    version,
    about = "Shared-account cross-domain sequential recommender"
)]
struct Cli {
    /// Worker threads (1 = fully serial).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the graph from a log and export its edge lists.
    BuildGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Print metrics of a checkpoint on one split as JSON.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
    },
    /// Generate a synthetic shared-account log.
    GenSynth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with finite differences on a toy model.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corrupt the analytic gradient of W1 before comparing.
        #[arg(long)]
        inject_fault: bool,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

/// Command-line mirrors of the config file keys. Flags win over the file.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigFlags {
    /// Disable both attention schemes (uniform weights).
    #[arg(long)]
    no_attention: bool,
    /// Drop item-item transition edges.
    #[arg(long)]
    no_sequential: bool,
    /// Latent users per account, 1 to 5.
    #[arg(long)]
    h: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    d_prime: Option<String>,
    #[arg(long)]
    leaky_slope: Option<String>,
    #[arg(long)]
    attention_mode: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    seq_pooling: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    clip_min: Option<String>,
    #[arg(long)]
    clip_max: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    domain_weight: Option<String>,
    /// Minimum count of a kept transition edge.
    #[arg(long)]
    min_count: Option<String>,
    #[arg(long)]
    train_ratio: Option<String>,
    #[arg(long)]
    valid_ratio: Option<String>,
    #[arg(long)]
    test_ratio: Option<String>,
}

impl ConfigFlags {
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((k.to_owned(), v.clone()));
            }
        };
        push("h", &self.h);
        push("d", &self.d);
        push("d_prime", &self.d_prime);
        push("leaky_slope", &self.leaky_slope);
        push("attention_mode", &self.attention_mode);
        push("layers", &self.layers);
        push("seq_pooling", &self.seq_pooling);
        push("lr", &self.lr);
        push("batch_size", &self.batch_size);
        push("clip_min", &self.clip_min);
        push("clip_max", &self.clip_max);
        push("max_epochs", &self.max_epochs);
        push("patience", &self.patience);
        push("seed", &self.seed);
        push("domain_weight", &self.domain_weight);
        push("min_edge_count", &self.min_count);
        push("train_ratio", &self.train_ratio);
        push("valid_ratio", &self.valid_ratio);
        push("test_ratio", &self.test_ratio);
        if self.no_attention {
            out.push(("use_attention".into(), "false".into()));
        }
        if self.no_sequential {
            out.push(("include_sequential_edges".into(), "false".into()));
        }
        out
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UserError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dagcn::Error>() {
            return if e.is_environmental() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::InvalidData {
                2
            } else {
                1
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UserError::new("--threads must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    let threads = cli.threads;
    match cli.command {
        Command::BuildGraph {
            input,
            out,
            config,
            flags,
        } => commands::build_graph(&input, &out, config.as_deref(), &flags, threads),
        Command::Train {
            input,
            config,
            out,
            flags,
        } => commands::train(&input, config.as_deref(), &out, &flags, threads),
        Command::Evaluate { ckpt, input, split } => {
            commands::evaluate(&ckpt, &input, split, threads)
        }
        Command::GenSynth { spec, out } => commands::gen_synth(&spec, &out, threads),
        Command::GradCheck {
            config,
            inject_fault,
            tolerance,
            flags,
        } => commands::grad_check(config.as_deref(), inject_fault, tolerance, &flags, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
