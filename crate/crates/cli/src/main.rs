use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use idattn_cli::commands::{
    cmd_atilde_sweep, cmd_check, cmd_dump_captures, cmd_rank_sweep, cmd_train, WeightsSource,
};
use idattn_cli::config::CommonArgs;
use idattn_cli::CliError;

/// Encoder training and attention-identifiability experiments.
#[derive(Parser)]
#[command(name = "idattn", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the encoder classifier from a dataset manifest; writes
    /// metrics.json and checkpoint.bin into the output directory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Numerical rank and nullity of a head's T over sequence lengths;
    /// writes rank_sweep.csv.
    RankSweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated sequence lengths, e.g. 8,32,64,100,128.
        #[arg(long, value_delimiter = ',', required = true)]
        d_s_list: Vec<usize>,
        /// Inputs sampled per sequence length.
        #[arg(long, default_value_t = 100)]
        n_samples: usize,
        /// Head index whose T is analyzed.
        #[arg(long, default_value_t = 0)]
        head: usize,
        /// Use freshly initialized weights.
        #[arg(long)]
        random_init: bool,
        /// Load weights from a training checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Construct alternative attention matrices over a d_s range and
    /// rank their reconstructed logits; writes atilde_sweep.csv,
    /// analysis.json and analysis_flat.csv.
    AtildeSweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 66)]
        d_s_from: usize,
        #[arg(long, default_value_t = 128)]
        d_s_to: usize,
        /// Constructions per sequence length.
        #[arg(long, default_value_t = 100)]
        n_atilde: usize,
        #[arg(long)]
        random_init: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate the constraint system on matrices dumped as CSV and
    /// print the report as JSON.
    Check {
        /// Attention matrix CSV (stochastic or logits).
        #[arg(long)]
        a: PathBuf,
        /// Perturbation matrix CSV.
        #[arg(long)]
        atilde: PathBuf,
        /// Effective transform T CSV.
        #[arg(long)]
        t: PathBuf,
        #[arg(long)]
        d_k: usize,
    },
    /// Forward one sequence and dump per-head capture matrices
    /// (Q, K, V, logits, weights, T, H) as CSV files.
    DumpCaptures {
        #[command(flatten)]
        common: CommonArgs,
        /// Explicit token indices, e.g. 5,9,23.
        #[arg(long, value_delimiter = ',')]
        tokens: Option<Vec<usize>>,
        /// Sample or draw a sequence of this length instead.
        #[arg(long)]
        d_s: Option<usize>,
        #[arg(long)]
        random_init: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            let cfg = common.resolve()?;
            let summary = cmd_train(&cfg)?;
            println!(
                "wrote {} and {} (best epoch {}, test accuracy {})",
                summary.metrics_path.display(),
                summary.checkpoint_path.display(),
                summary.best_epoch,
                summary
                    .test_accuracy
                    .map(|a| format!("{a:.4}"))
                    .unwrap_or_else(|| "n/a".into()),
            );
        }
        Command::RankSweep {
            common,
            d_s_list,
            n_samples,
            head,
            random_init,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let source = WeightsSource::from_flags(random_init, checkpoint)?;
            let path = cmd_rank_sweep(&cfg, &d_s_list, n_samples, head, &source)?;
            println!("wrote {}", path.display());
        }
        Command::AtildeSweep {
            common,
            d_s_from,
            d_s_to,
            n_atilde,
            random_init,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let source = WeightsSource::from_flags(random_init, checkpoint)?;
            let out = cmd_atilde_sweep(&cfg, d_s_from, d_s_to, n_atilde, &source)?;
            println!(
                "wrote {}, {} and {}",
                out.csv_path.display(),
                out.analysis_json_path.display(),
                out.analysis_csv_path.display()
            );
        }
        Command::Check { a, atilde, t, d_k } => {
            let report = cmd_check(&a, &atilde, &t, d_k)?;
            println!("{report}");
        }
        Command::DumpCaptures {
            common,
            tokens,
            d_s,
            random_init,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let source = WeightsSource::from_flags(random_init, checkpoint)?;
            let dir = cmd_dump_captures(&cfg, tokens, d_s, &source)?;
            println!("wrote captures under {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // Machine-readable failure on stderr, non-zero exit.
            let doc = serde_json::json!({ "error": err.to_string() });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}
