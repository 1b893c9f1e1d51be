use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use roadex_cli::config::RunConfig;
use roadex_cli::error::Result;
use roadex_cli::pipeline::{self, Source, TrajectoryExpert};
use roadex_core::eval::Protocol;
use roadex_core::fusion::FilterStart;

#[derive(Parser)]
#[command(name = "roadex", version, about = "Traffic anomaly detection pipeline")]
struct Cli {
    /// Run configuration (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for scoring and fusion.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpertArg {
    Interaction,
    Behavior,
    All,
}

impl ExpertArg {
    fn experts(self) -> Vec<TrajectoryExpert> {
        match self {
            ExpertArg::Interaction => vec![TrajectoryExpert::Interaction],
            ExpertArg::Behavior => vec![TrajectoryExpert::Behavior],
            ExpertArg::All => TrajectoryExpert::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and stand-in scene scores.
    Simulate,
    /// Train trajectory experts on the training split.
    Train {
        #[arg(long, value_enum, default_value = "all")]
        expert: ExpertArg,
    },
    /// Score both splits with trained experts.
    Score {
        #[arg(long, value_enum, default_value = "all")]
        expert: ExpertArg,
    },
    /// Fit normalizers on the training split and fuse the test split.
    Fuse {
        /// deferred or immediate
        #[arg(long)]
        mode: Option<FilterStart>,
    },
    /// Frame-level AUC and F1 of one score stream on the test split.
    Eval {
        /// fused, ffp, str, int or beh
        #[arg(long, default_value = "fused")]
        source: Source,
        /// raw or legacy_minmax
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        tau: Option<f64>,
        /// Also write the ROC curve.
        #[arg(long)]
        roc: bool,
    },
    /// Ego versus non-ego classification of fused test videos.
    Classify,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut c = RunConfig::default();
            c.apply_env();
            c
        }
    };
    match cli.command {
        Command::Simulate => {
            let (train, test) = pipeline::cmd_simulate(&cfg)?;
            println!("simulated {train} training and {test} test videos");
        }
        Command::Train { expert } => {
            for e in expert.experts() {
                let r = pipeline::cmd_train(&cfg, e)?;
                println!("{}: final loss {:.6}, checksum {}", e.name(), r.final_loss(), r.checksum);
            }
        }
        Command::Score { expert } => {
            for e in expert.experts() {
                let n = pipeline::cmd_score(&cfg, e, cli.jobs)?;
                println!("{}: scored {n} videos", e.name());
            }
        }
        Command::Fuse { mode } => {
            let stats = pipeline::cmd_fuse(&cfg, mode.unwrap_or(cfg.fusion.mode), cli.jobs)?;
            println!("fused; ensemble threshold {:.4}", stats.threshold());
        }
        Command::Eval {
            source,
            protocol,
            tau,
            roc,
        } => {
            let r = pipeline::cmd_eval(&cfg, source, protocol.unwrap_or(cfg.eval.protocol), tau, roc)?;
            print!("{}", r.to_text());
        }
        Command::Classify => {
            for (class, (hit, n)) in pipeline::cmd_classify(&cfg)? {
                println!("{class}: {hit}/{n} correct");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
