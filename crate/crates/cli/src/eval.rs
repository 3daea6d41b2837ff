//! `eval`: offline AP, frame k detections against frame k ground truth.

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use streamsap::metrics::{sap_report, PairedFrame, ReportConfig, SapReport};

use crate::config::ConfigFile;
use crate::data::{load_sequences, sequence_info, streams, DataArgs, DataConfig, SequenceInfo};
use crate::report::{write_sap, MetricArgs, OutputArgs, OutputConfig};

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Serialize)]
pub struct EvalConfig {
    pub command: &'static str,
    pub data: DataConfig,
    pub metrics: ReportConfig,
    pub output: OutputConfig,
}

#[derive(Serialize)]
struct EvalJson<'a> {
    config: &'a EvalConfig,
    sequences: Vec<SequenceInfo>,
    report: &'a SapReport,
}

pub fn run(args: EvalArgs, file: &ConfigFile) -> Result<String> {
    let cfg = EvalConfig {
        command: "eval",
        data: args.data.resolve(file)?,
        metrics: args.metric.resolve(file)?,
        output: args.output.resolve(file)?,
    };
    let seqs = load_sequences(&cfg.data)?;
    let pairs: Vec<PairedFrame<'_>> = streams(&seqs, cfg.data.split, cfg.data.chunk)?
        .into_iter()
        .flat_map(|s| s.det.iter().zip(s.gt).map(|(d, g)| (d.as_slice(), g.as_slice())))
        .collect();
    let report = sap_report(&pairs, &cfg.metrics)?;
    let json = EvalJson {
        config: &cfg,
        sequences: sequence_info(&seqs),
        report: &report,
    };
    write_sap(&cfg.output, "eval", &cfg, &json, &report)?;
    Ok(report.to_csv())
}
