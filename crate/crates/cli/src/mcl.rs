//! `mcl`: motion consistency loss of next-frame predictions against three
//! frames of tracked ground truth.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use streamsap::geometry::Box3D;
use streamsap::kitti_io::{parse_tracking_labels, LabeledBox};
use streamsap::motion_loss::{mcl_batch, BatchLoss, DEFAULT_BETA, DEFAULT_TAU};
use streamsap::IouKind;

use crate::config::{pick, read_text, require_exists, usage, ConfigFile};
use crate::data::ClassIds;
use crate::report::{config_comment, to_json, OutputArgs, OutputConfig};

#[derive(Debug, Args)]
pub struct MclArgs {
    /// Predictions for frame t+1.
    #[arg(long)]
    pub pred: PathBuf,
    /// Tracked ground truth at t.
    #[arg(long)]
    pub gt_t: PathBuf,
    /// Tracked ground truth at t-1.
    #[arg(long)]
    pub gt_tm1: PathBuf,
    /// Tracked ground truth at t-2.
    #[arg(long)]
    pub gt_tm2: PathBuf,
    /// Weight of the acceleration term.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Smooth-L1 transition point.
    #[arg(long)]
    pub beta: Option<f64>,
    /// IoU used to match predictions to ground truth: `bev` or `3d`.
    #[arg(long)]
    pub iou_kind: Option<IouKind>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Serialize)]
pub struct MclConfig {
    pub command: &'static str,
    pub pred: PathBuf,
    pub gt_t: PathBuf,
    pub gt_tm1: PathBuf,
    pub gt_tm2: PathBuf,
    pub tau: f64,
    pub beta: f64,
    pub iou_kind: IouKind,
    pub output: OutputConfig,
}

#[derive(Serialize)]
struct MclJson<'a> {
    config: &'a MclConfig,
    n_pred: usize,
    n_gt_t: usize,
    loss: &'a BatchLoss,
}

/// All non-DontCare rows of a label file, whatever their frame column.
fn rows(p: &Path) -> Result<Vec<LabeledBox>> {
    let frames = parse_tracking_labels(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?;
    Ok(frames.into_values().flatten().filter(|b| !b.is_dont_care()).collect())
}

pub fn run(args: MclArgs, file: &ConfigFile) -> Result<String> {
    for (p, what) in [(&args.pred, "pred"), (&args.gt_t, "gt-t"), (&args.gt_tm1, "gt-tm1"), (&args.gt_tm2, "gt-tm2")] {
        require_exists(p, what)?;
    }
    let cfg = MclConfig {
        command: "mcl",
        pred: args.pred,
        gt_t: args.gt_t,
        gt_tm1: args.gt_tm1,
        gt_tm2: args.gt_tm2,
        tau: pick(args.tau, file, "tau", DEFAULT_TAU)?,
        beta: pick(args.beta, file, "beta", DEFAULT_BETA)?,
        iou_kind: pick(args.iou_kind, file, "iou-kind", IouKind::Bev)?,
        output: args.output.resolve(file)?,
    };
    if cfg.tau.is_nan() || cfg.tau < 0.0 || cfg.beta.is_nan() || cfg.beta <= 0.0 {
        return Err(usage("tau must be >= 0 and beta > 0"));
    }
    let sets = [&cfg.pred, &cfg.gt_t, &cfg.gt_tm1, &cfg.gt_tm2]
        .into_iter()
        .map(|p| rows(p))
        .collect::<Result<Vec<_>>>()?;
    let ids = ClassIds::from_rows(sets.iter().flatten());
    let boxes: Vec<Vec<Box3D>> = sets
        .iter()
        .map(|s| s.iter().map(|b| b.to_box3d(ids.id(&b.class_name))).collect())
        .collect();
    let loss = mcl_batch(&boxes[0], &boxes[1], &boxes[2], &boxes[3], cfg.iou_kind, cfg.tau, cfg.beta)?;

    if cfg.output.csv() {
        let mut csv = config_comment(&cfg);
        csv.push_str("pred,gt_t,track_id,velocity,acceleration,value,has_velocity,has_acceleration\n");
        for o in &loss.objects {
            let c = o.correspondence;
            let t = &o.terms;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.pred,
                c.gt_t,
                boxes[1][c.gt_t].track_id.unwrap_or(-1),
                t.velocity,
                t.acceleration,
                t.value,
                t.has_velocity,
                t.has_acceleration
            ));
        }
        cfg.output.write("mcl.csv", csv)?;
    }
    let json = to_json(&MclJson {
        config: &cfg,
        n_pred: boxes[0].len(),
        n_gt_t: boxes[1].len(),
        loss: &loss,
    });
    if cfg.output.json() {
        cfg.output.write("mcl.json", &json)?;
    }
    Ok(json)
}
