//! `stream-eval` and `streamer`: latency-aware evaluation of detection dumps,
//! raw or through the Kalman forecaster.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use streamsap::forecast::KfConfig;
use streamsap::kitti_io::{write_tracking_labels, FrameLabels, LabeledBox};
use streamsap::metrics::{sap_report, PairedFrame, ReportConfig, SapReport};
use streamsap::par::*;
use streamsap::streaming::{
    build_schedule, pair_stream, paired_sets, parse_latency_trace, streamer_forecasts, LatencyModel,
    StreamSchedule,
};

use crate::config::{pick, pick_bool, read_text, require_exists, usage, ConfigFile};
use crate::data::{load_sequences, sequence_info, streams, ClassIds, DataArgs, DataConfig, SequenceInfo, Stream};
use crate::report::{config_comment, write_sap, MetricArgs, OutputArgs, OutputConfig};

#[derive(Debug, Args)]
pub struct StreamArgs {
    /// Time between frames.
    #[arg(long)]
    pub interval_ms: Option<f64>,
    /// Constant detector latency.
    #[arg(long, conflicts_with = "latency_trace")]
    pub latency_ms: Option<f64>,
    /// Per-frame latency file, one value in ms per line.
    #[arg(long)]
    pub latency_trace: Option<PathBuf>,
    /// Drop frames that arrive while the detector is busy.
    #[arg(long, overrides_with = "no_skip_stale")]
    pub skip_stale: bool,
    #[arg(long, hide = true)]
    pub no_skip_stale: bool,
    /// GT instants to leave out at the start of every stream.
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamConfig {
    pub interval_ms: f64,
    pub latency: LatencyModel,
    pub latency_trace: Option<PathBuf>,
    pub skip_stale: bool,
    pub warmup: usize,
}

impl StreamArgs {
    pub fn resolve(self, file: &ConfigFile) -> Result<StreamConfig> {
        let skip_flag = match (self.skip_stale, self.no_skip_stale) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        };
        // A flag of either kind beats both file keys.
        let (ms, trace) = match (self.latency_ms, self.latency_trace) {
            (None, None) => (file.get::<f64>("latency-ms")?, file.get::<PathBuf>("latency-trace")?),
            flags => flags,
        };
        let (latency, latency_trace) = match (ms, trace) {
            (Some(_), Some(_)) => return Err(usage("give either latency-ms or latency-trace, not both")),
            (Some(ms), None) => (LatencyModel::constant(ms), None),
            (None, Some(p)) => {
                require_exists(&p, "latency-trace")?;
                let t = parse_latency_trace(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?;
                (LatencyModel::trace(t), Some(p))
            }
            (None, None) => return Err(usage("a latency model is required: --latency-ms or --latency-trace")),
        };
        if let LatencyModel::Constant { ms } = latency {
            if !(ms >= 0.0 && ms.is_finite()) {
                return Err(usage(format!("latency-ms must be >= 0, got {ms}")));
            }
        }
        let interval_ms = pick(self.interval_ms, file, "interval-ms", 100.0)?;
        if !(interval_ms > 0.0 && interval_ms.is_finite()) {
            return Err(usage(format!("interval-ms must be > 0, got {interval_ms}")));
        }
        Ok(StreamConfig {
            interval_ms,
            latency,
            latency_trace,
            skip_stale: pick_bool(skip_flag, file, "skip-stale", false)?,
            warmup: pick(self.warmup, file, "warmup", 0)?,
        })
    }

    /// Latency model for a stream of `n` frames. Traces are indexed from the
    /// stream's first frame; a longer trace is cut, a shorter one rejected.
    fn model_for(cfg: &StreamConfig, n: usize) -> Result<LatencyModel> {
        Ok(match &cfg.latency {
            LatencyModel::PerFrameTrace { trace } if trace.len() < n => anyhow::bail!(
                "latency trace has {} entries but a stream has {n} frames",
                trace.len()
            ),
            LatencyModel::PerFrameTrace { trace } => LatencyModel::trace(trace[..n].to_vec()),
            m => m.clone(),
        })
    }
}

#[derive(Debug, Args)]
pub struct KfArgs {
    /// Minimum BEV IoU for associating a detection with a track.
    #[arg(long)]
    pub assoc_iou: Option<f64>,
    /// Consecutive misses before a track is dropped.
    #[arg(long)]
    pub max_misses: Option<u32>,
    /// Hits before a track is reported.
    #[arg(long)]
    pub min_hits: Option<u32>,
}

impl KfArgs {
    fn resolve(self, file: &ConfigFile) -> Result<KfConfig> {
        let def = KfConfig::default();
        let cfg = KfConfig {
            association_iou_threshold: pick(self.assoc_iou, file, "assoc-iou", def.association_iou_threshold)?,
            max_misses: pick(self.max_misses, file, "max-misses", def.max_misses)?,
            min_hits: pick(self.min_hits, file, "min-hits", def.min_hits)?,
            ..def
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct StreamEvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct StreamerArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub kf: KfArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Serialize)]
pub struct StreamRunConfig {
    pub command: &'static str,
    pub data: DataConfig,
    pub stream: StreamConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kalman: Option<KfConfig>,
    pub metrics: ReportConfig,
    pub output: OutputConfig,
}

/// Per-stream timing summary.
#[derive(Debug, Clone, Serialize)]
pub struct StreamStats {
    pub sequence: String,
    pub start_frame: usize,
    pub frames: usize,
    pub processed: usize,
    pub dropped: usize,
    pub evaluated_instants: usize,
    /// Mean of `gt_frame - source_frame` over instants that have an output.
    pub mean_staleness_frames: Option<f64>,
    /// Instants with no finished output yet.
    pub empty_instants: usize,
    pub mean_latency_ms: f64,
}

struct StreamRun {
    stats: StreamStats,
    schedule: StreamSchedule,
}

fn simulate(s: &Stream<'_>, cfg: &StreamConfig) -> Result<StreamRun> {
    let n = s.gt.len();
    let model = StreamArgs::model_for(cfg, n)?;
    let schedule = build_schedule(n, cfg.interval_ms, &model, cfg.skip_stale)?;
    let pairs = pair_stream(&schedule, n);
    let kept = &pairs[cfg.warmup.min(n)..];
    let stale: Vec<f64> = kept
        .iter()
        .filter_map(|p| p.source_frame.map(|k| (p.gt_frame - k) as f64))
        .collect();
    let processed = schedule.processed().count();
    let stats = StreamStats {
        sequence: s.sequence.to_string(),
        start_frame: s.start,
        frames: n,
        processed,
        dropped: n - processed,
        evaluated_instants: kept.len(),
        mean_staleness_frames: (!stale.is_empty()).then(|| stale.iter().sum::<f64>() / stale.len() as f64),
        empty_instants: kept.len() - stale.len(),
        mean_latency_ms: (0..n).map(|k| model.at(k)).sum::<f64>() / n as f64,
    };
    Ok(StreamRun { stats, schedule })
}

fn stale_pairs<'a>(s: &Stream<'a>, run: &StreamRun, warmup: usize) -> Vec<PairedFrame<'a>> {
    let n = s.gt.len();
    let pairs = pair_stream(&run.schedule, n);
    paired_sets(&pairs, s.det, s.gt).into_iter().skip(warmup).collect()
}

#[derive(Serialize)]
struct StreamJson<'a> {
    config: &'a StreamRunConfig,
    sequences: Vec<SequenceInfo>,
    streams: Vec<StreamStats>,
    report: &'a SapReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    stale_report: Option<&'a SapReport>,
}

pub fn run_stream_eval(args: StreamEvalArgs, file: &ConfigFile) -> Result<String> {
    let cfg = StreamRunConfig {
        command: "stream-eval",
        data: args.data.resolve(file)?,
        stream: args.stream.resolve(file)?,
        kalman: None,
        metrics: args.metric.resolve(file)?,
        output: args.output.resolve(file)?,
    };
    let seqs = load_sequences(&cfg.data)?;
    let streams = streams(&seqs, cfg.data.split, cfg.data.chunk)?;
    let runs = streams
        .par_iter()
        .map(|s| simulate(s, &cfg.stream))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<PairedFrame<'_>> = streams
        .iter()
        .zip(&runs)
        .flat_map(|(s, r)| stale_pairs(s, r, cfg.stream.warmup))
        .collect();
    let report = sap_report(&pairs, &cfg.metrics)?;
    let json = StreamJson {
        config: &cfg,
        sequences: sequence_info(&seqs),
        streams: runs.into_iter().map(|r| r.stats).collect(),
        report: &report,
        stale_report: None,
    };
    write_sap(&cfg.output, "stream_eval", &cfg, &json, &report)?;
    Ok(report.to_csv())
}

/// Forecasts for every GT instant of one stream, as labelled rows with
/// sequence frame indices.
fn forecast_stream(s: &Stream<'_>, run: &StreamRun, kf: &KfConfig, ids: &ClassIds) -> Result<Vec<Vec<LabeledBox>>> {
    let outputs: Vec<_> = s
        .det
        .iter()
        .map(|rows| {
            rows.iter()
                .filter(|b| !b.is_dont_care())
                .map(|b| b.to_box3d(ids.id(&b.class_name)))
                .collect::<Vec<_>>()
        })
        .collect();
    let forecasts = streamer_forecasts(&run.schedule, &outputs, s.gt.len(), kf)?;
    Ok(forecasts
        .into_iter()
        .enumerate()
        .map(|(j, boxes)| {
            let frame = (s.start + j) as u32;
            boxes
                .iter()
                .map(|b| LabeledBox::from_box3d(b, frame, ids.name(b.class_id)))
                .collect()
        })
        .collect())
}

pub fn run_streamer(args: StreamerArgs, file: &ConfigFile) -> Result<String> {
    let cfg = StreamRunConfig {
        command: "streamer",
        data: args.data.resolve(file)?,
        stream: args.stream.resolve(file)?,
        kalman: Some(args.kf.resolve(file)?),
        metrics: args.metric.resolve(file)?,
        output: args.output.resolve(file)?,
    };
    let kf = cfg.kalman.as_ref().unwrap();
    let seqs = load_sequences(&cfg.data)?;
    let ids = ClassIds::from_rows(seqs.iter().flat_map(|s| s.det.iter().flatten()));
    let streams = streams(&seqs, cfg.data.split, cfg.data.chunk)?;
    let runs = streams
        .par_iter()
        .map(|s| {
            let run = simulate(s, &cfg.stream)?;
            let fc = forecast_stream(s, &run, kf, &ids)?;
            Ok((run, fc))
        })
        .collect::<Result<Vec<_>>>()?;

    let warmup = cfg.stream.warmup;
    let pairs: Vec<PairedFrame<'_>> = streams
        .iter()
        .zip(&runs)
        .flat_map(|(s, (_, fc))| fc.iter().zip(s.gt).skip(warmup).map(|(f, g)| (f.as_slice(), g.as_slice())))
        .collect();
    let report = sap_report(&pairs, &cfg.metrics)?;
    let stale: Vec<PairedFrame<'_>> = streams
        .iter()
        .zip(&runs)
        .flat_map(|(s, (r, _))| stale_pairs(s, r, warmup))
        .collect();
    let stale_report = sap_report(&stale, &cfg.metrics)?;

    if cfg.output.dir().is_some() {
        let mut per_seq: BTreeMap<&str, FrameLabels> = BTreeMap::new();
        for (s, (_, fc)) in streams.iter().zip(&runs) {
            let frames = per_seq.entry(s.sequence).or_default();
            for (j, rows) in fc.iter().enumerate() {
                frames.insert((s.start + j) as u32, rows.clone());
            }
        }
        for (name, frames) in &per_seq {
            cfg.output.write(&format!("forecasts/{name}.txt"), write_tracking_labels(frames))?;
        }
    }
    let json = StreamJson {
        config: &cfg,
        sequences: sequence_info(&seqs),
        streams: runs.into_iter().map(|(r, _)| r.stats).collect(),
        report: &report,
        stale_report: Some(&stale_report),
    };
    write_sap(&cfg.output, "streamer", &cfg, &json, &report)?;
    if cfg.output.csv() {
        cfg.output.write("streamer_stale.csv", config_comment(&cfg) + &stale_report.to_csv())?;
    }
    Ok(report.to_csv())
}
