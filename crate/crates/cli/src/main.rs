mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{ExportKind, SynthArgs};
use config::RunConfig;
use intentgraph_core::ingest::Split;

#[derive(Parser, Debug)]
#[command(name = "intentgraph", version, about = "Hierarchical user-intent graph recommender")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run configuration file.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set train.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted intents.
    Synth {
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 400)]
        items: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 2])]
        levels: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "visual")]
        modalities: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the co-interaction graph and report its statistics.
    BuildGraph {
        #[command(flatten)]
        config: ConfigArgs,
        /// Threshold or inclusive sweep such as `3..7`.
        #[arg(long)]
        min_cousers: Option<String>,
    },
    /// Train a model and write its best checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Drop the assignment-entropy loss.
        #[arg(long)]
        no_l1: bool,
        /// Drop the supernode-independence loss.
        #[arg(long)]
        no_l2: bool,
        /// Supernode counts per level, e.g. `32,8,4`.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        /// Restrict to these modalities.
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<String>>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        min_cousers: Option<usize>,
        /// Start from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Rank held-out items and report P/R/NDCG@K.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to the run's own checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Also write per-user rankings.
        #[arg(long)]
        per_user: bool,
    },
    /// Export representations or intent assignments.
    Export {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        what: ExportKind,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

fn list<T: ToString>(items: &[T], quote: bool) -> String {
    let parts: Vec<String> = items
        .iter()
        .map(|v| if quote { format!("\"{}\"", v.to_string()) } else { v.to_string() })
        .collect();
    format!("[{}]", parts.join(","))
}

fn load(args: &ConfigArgs, mut extra: Vec<String>) -> Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    overrides.append(&mut extra);
    RunConfig::load(&args.config, &overrides)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            users,
            items,
            levels,
            density,
            seed,
            feature_dim,
            modalities,
            out,
        } => commands::synth(&SynthArgs {
            users,
            items,
            levels,
            density,
            seed,
            feature_dim,
            modalities,
            out,
        }),
        Command::BuildGraph { config, min_cousers } => {
            let cfg = load(&config, vec![])?;
            let sweep = min_cousers.as_deref().map(commands::parse_threshold_range).transpose()?;
            commands::build_graph(&cfg, sweep)
        }
        Command::Train {
            config,
            no_l1,
            no_l2,
            levels,
            modalities,
            max_epochs,
            seed,
            min_cousers,
            resume,
        } => {
            let mut extra = Vec::new();
            if no_l1 {
                extra.push("train.lambda_assignment=0.0".into());
            }
            if no_l2 {
                extra.push("train.lambda_independence=0.0".into());
            }
            if let Some(l) = levels {
                extra.push(format!("model.levels={}", list(&l, false)));
            }
            if let Some(m) = modalities {
                extra.push(format!("model.modalities={}", list(&m, true)));
            }
            if let Some(e) = max_epochs {
                extra.push(format!("train.max_epochs={e}"));
            }
            if let Some(s) = seed {
                extra.push(format!("train.seed={s}"));
            }
            if let Some(k) = min_cousers {
                extra.push(format!("graph.min_cousers={k}"));
            }
            let cfg = load(&config, extra)?;
            commands::train_cmd(&cfg, resume.as_deref())
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            ks,
            per_user,
        } => {
            let mut extra = Vec::new();
            if let Some(ks) = ks {
                extra.push(format!("eval.ks={}", list(&ks, false)));
            }
            if per_user {
                extra.push("eval.per_user=true".into());
            }
            let cfg = load(&config, extra)?;
            let split = match split {
                SplitArg::Validation => Split::Validation,
                SplitArg::Test => Split::Test,
            };
            commands::evaluate(&cfg, checkpoint.as_deref(), split)
        }
        Command::Export {
            config,
            checkpoint,
            what,
        } => {
            let cfg = load(&config, vec![])?;
            commands::export(&cfg, checkpoint.as_deref(), what)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
