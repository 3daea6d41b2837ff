//! `streamsap`: streaming-perception evaluation and diagnostics.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical error.

mod config;
mod data;
mod eval;
mod flow;
mod lkbb;
mod mcl;
mod report;
mod stream;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigFile, UsageError};

#[derive(Debug, Parser)]
#[command(name = "streamsap", version, about = "Latency-aware 3D detection evaluation and diagnostics")]
struct Cli {
    /// Flat `key = value` file. Flags override it; it overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Offline AP: frame k detections against frame k ground truth.
    Eval(eval::EvalArgs),
    /// Streaming AP of raw detection dumps under a latency model.
    StreamEval(stream::StreamEvalArgs),
    /// Streaming AP of Kalman forecasts built from detection dumps.
    Streamer(stream::StreamerArgs),
    /// Feature flow, pseudo-next map and fusion for two FGRD grids.
    Flow(flow::FlowArgs),
    /// Motion consistency loss for one prediction set.
    Mcl(mcl::MclArgs),
    /// Parameters, FLOPs and receptive field of a layer chain.
    Lkbb(lkbb::LkbbArgs),
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    let numerical = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<streamsap::Error>(), Some(streamsap::Error::Numerical(_))));
    if numerical {
        4
    } else {
        3
    }
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Eval(a) => eval::run(a, &file),
        Command::StreamEval(a) => stream::run_stream_eval(a, &file),
        Command::Streamer(a) => stream::run_streamer(a, &file),
        Command::Flow(a) => flow::run(a, &file),
        Command::Mcl(a) => mcl::run(a, &file),
        Command::Lkbb(a) => lkbb::run(a, &file),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
