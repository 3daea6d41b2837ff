//! KITTI-style 3D detection metrics.
//!
//! Difficulty tiers, greedy per-frame matching, precision-recall curves, AP
//! at 40 recall positions, and the per-cell (s)AP report. The streaming
//! variant differs from offline AP only in which prediction set is paired
//! with each ground-truth frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_matrix, Box3D, IouKind};
use crate::kitti_io::LabeledBox;
use crate::par::*;

pub const RECALL_POSITIONS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyLevel {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl DifficultyLevel {
    pub const EVAL_LEVELS: [DifficultyLevel; 3] =
        [DifficultyLevel::Easy, DifficultyLevel::Moderate, DifficultyLevel::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyLevel::Easy => "easy",
            DifficultyLevel::Moderate => "moderate",
            DifficultyLevel::Hard => "hard",
            DifficultyLevel::Ignored => "ignored",
        }
    }
}

impl FromStr for DifficultyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(DifficultyLevel::Easy),
            "moderate" => Ok(DifficultyLevel::Moderate),
            "hard" => Ok(DifficultyLevel::Hard),
            _ => Err(Error::invalid(format!("unknown difficulty level {s:?}"))),
        }
    }
}

/// Per-tier limits, indexed Easy, Moderate, Hard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyThresholds {
    pub min_height: [f64; 3],
    pub max_occlusion: [i32; 3],
    pub max_truncation: [f64; 3],
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        DifficultyThresholds {
            min_height: [40.0, 25.0, 25.0],
            max_occlusion: [0, 1, 2],
            max_truncation: [0.15, 0.3, 0.5],
        }
    }
}

pub fn difficulty_of(gt: &LabeledBox) -> DifficultyLevel {
    difficulty_with(gt, &DifficultyThresholds::default())
}

pub fn difficulty_with(gt: &LabeledBox, t: &DifficultyThresholds) -> DifficultyLevel {
    let h = gt.bbox_height();
    for (i, level) in DifficultyLevel::EVAL_LEVELS.into_iter().enumerate() {
        if h >= t.min_height[i] && gt.occlusion <= t.max_occlusion[i] && gt.truncation <= t.max_truncation[i]
        {
            return level;
        }
    }
    DifficultyLevel::Ignored
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GtRole {
    InScope,
    /// Neither a hit nor a miss; detections overlapping it are not penalised.
    Ignorable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtEntry {
    pub box3d: Box3D,
    pub role: GtRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetOutcome {
    Tp,
    Fp,
    IgnoredMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// Outcome per detection, in input order.
    pub detections: Vec<DetOutcome>,
    /// Whether each GT was claimed; always false for ignorable GT.
    pub gt_matched: Vec<bool>,
}

impl FrameMatch {
    pub fn count(&self, o: DetOutcome) -> usize {
        self.detections.iter().filter(|&&d| d == o).count()
    }
}

/// Detections in descending score order (input order among ties) each claim
/// the unclaimed in-scope GT of highest IoU ≥ `threshold`, else fall back to
/// any ignorable GT ≥ `threshold`, else count as false positives.
pub fn match_boxes(preds: &[Box3D], gts: &[GtEntry], threshold: f64, kind: IouKind) -> FrameMatch {
    let gt_boxes: Vec<Box3D> = gts.iter().map(|g| g.box3d.clone()).collect();
    let m = iou_matrix(preds, &gt_boxes, kind);
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    let mut claimed = vec![false; gts.len()];
    let mut detections = vec![DetOutcome::Fp; preds.len()];
    for d in order {
        let row = m.row(d);
        let mut best: Option<(usize, f64)> = None;
        let mut ignorable = false;
        for (g, gt) in gts.iter().enumerate() {
            let v = row[g];
            if v < threshold {
                continue;
            }
            match gt.role {
                GtRole::InScope if !claimed[g] => {
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((g, v));
                    }
                }
                GtRole::Ignorable => ignorable = true,
                GtRole::InScope => {}
            }
        }
        detections[d] = match best {
            Some((g, _)) => {
                claimed[g] = true;
                DetOutcome::Tp
            }
            None if ignorable => DetOutcome::IgnoredMatch,
            None => DetOutcome::Fp,
        };
    }
    FrameMatch {
        detections,
        gt_matched: claimed,
    }
}

/// A class and the label names counted as it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl ClassSpec {
    pub fn new(name: &str) -> Self {
        ClassSpec {
            name: name.to_string(),
            aliases: Vec::new(),
        }
    }

    pub fn matches(&self, label: &str) -> bool {
        label == self.name || self.aliases.iter().any(|a| a == label)
    }

    pub fn defaults() -> Vec<ClassSpec> {
        ["Car", "Pedestrian", "Cyclist"].iter().map(|n| ClassSpec::new(n)).collect()
    }

    /// Builds class specs from names plus an alias map (alias → class).
    pub fn with_aliases(names: &[String], aliases: &BTreeMap<String, String>) -> Vec<ClassSpec> {
        names
            .iter()
            .map(|n| ClassSpec {
                name: n.clone(),
                aliases: aliases
                    .iter()
                    .filter(|(_, target)| *target == n)
                    .map(|(alias, _)| alias.clone())
                    .collect(),
            })
            .collect()
    }
}

/// GT roles for one class at one level: DontCare rows are ignorable at every
/// level; same-class GT stricter than `level` or untiered are ignorable;
/// other classes are dropped.
pub fn gt_entries(
    gts: &[LabeledBox],
    class: &ClassSpec,
    level: DifficultyLevel,
    thresholds: &DifficultyThresholds,
) -> Vec<GtEntry> {
    gts.iter()
        .filter_map(|g| {
            let role = if g.is_dont_care() {
                GtRole::Ignorable
            } else if class.matches(&g.class_name) {
                let d = difficulty_with(g, thresholds);
                if d != DifficultyLevel::Ignored && d <= level {
                    GtRole::InScope
                } else {
                    GtRole::Ignorable
                }
            } else {
                return None;
            };
            Some(GtEntry {
                box3d: g.to_box3d(0),
                role,
            })
        })
        .collect()
}

/// Detections of `class` as boxes. A missing score counts as 1.
pub fn class_detections(preds: &[LabeledBox], class: &ClassSpec) -> Vec<Box3D> {
    preds
        .iter()
        .filter(|p| class.matches(&p.class_name))
        .map(|p| p.to_box3d(0).with_score(p.score.unwrap_or(1.0)))
        .collect()
}

/// Scored outcomes for one frame, ready for PR accumulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameResult {
    /// `(score, is_tp)` for every detection that was not ignore-matched.
    pub scored: Vec<(f64, bool)>,
    pub n_gt: usize,
}

pub fn frame_result(preds: &[Box3D], gts: &[GtEntry], threshold: f64, kind: IouKind) -> FrameResult {
    let m = match_boxes(preds, gts, threshold, kind);
    FrameResult {
        scored: preds
            .iter()
            .zip(&m.detections)
            .filter(|(_, &o)| o != DetOutcome::IgnoredMatch)
            .map(|(p, &o)| (p.score, o == DetOutcome::Tp))
            .collect(),
        n_gt: gts.iter().filter(|g| g.role == GtRole::InScope).count(),
    }
}

pub fn match_frame(
    preds: &[LabeledBox],
    gts: &[LabeledBox],
    class: &ClassSpec,
    level: DifficultyLevel,
    threshold: f64,
    kind: IouKind,
    thresholds: &DifficultyThresholds,
) -> FrameResult {
    frame_result(
        &class_detections(preds, class),
        &gt_entries(gts, class, level, thresholds),
        threshold,
        kind,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

/// One operating point per distinct score, thresholding at `score ≥ s`.
/// Frames are reduced in order so the result does not depend on scheduling.
pub fn pr_curve(frames: &[FrameResult]) -> PrCurve {
    let n_gt = frames.iter().map(|f| f.n_gt).sum();
    let mut all: Vec<(f64, bool)> = frames.iter().flat_map(|f| f.scored.iter().copied()).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(score, hit)) in all.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = all.get(i + 1).is_none_or(|n| n.0 != score);
        if last_of_group {
            points.push(PrPoint {
                score_threshold: score,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                tp,
                fp,
            });
        }
    }
    PrCurve { points, n_gt }
}

/// Mean interpolated precision at recall 1/40, 2/40, …, 1. `None` when there
/// is no in-scope ground truth.
pub fn ap_r40(curve: &PrCurve) -> Option<f64> {
    if curve.n_gt == 0 {
        return None;
    }
    let n = RECALL_POSITIONS;
    let mut sum = 0.0;
    for i in 1..=n {
        // recall ≥ i/n, compared in integers
        let p = curve
            .points
            .iter()
            .filter(|p| p.tp * n >= i * curve.n_gt)
            .map(|p| p.precision)
            .fold(0.0, f64::max);
        sum += p;
    }
    Some(sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub classes: Vec<ClassSpec>,
    pub iou_thresholds: Vec<f64>,
    pub kinds: Vec<IouKind>,
    pub levels: Vec<DifficultyLevel>,
    pub difficulty: DifficultyThresholds,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            classes: ClassSpec::defaults(),
            iou_thresholds: vec![0.7, 0.5],
            kinds: vec![IouKind::Bev, IouKind::ThreeD],
            levels: DifficultyLevel::EVAL_LEVELS.to_vec(),
            difficulty: DifficultyThresholds::default(),
        }
    }
}

impl ReportConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.iou_thresholds.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            return Err(Error::invalid(format!("IoU threshold {t} outside (0, 1]")));
        }
        if self.levels.contains(&DifficultyLevel::Ignored) {
            return Err(Error::invalid("\"ignored\" is not an evaluation level"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapCell {
    pub class: String,
    pub kind: IouKind,
    pub iou: f64,
    pub level: DifficultyLevel,
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
    #[serde(skip)]
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapReport {
    pub instants: usize,
    pub cells: Vec<SapCell>,
}

pub type PairedFrame<'a> = (&'a [LabeledBox], &'a [LabeledBox]);

/// One AP cell per (class, kind, threshold, level) over paired frames.
/// Offline evaluation pairs frame k with frame k; streaming evaluation uses
/// the pairs from the stream simulation.
pub fn sap_report(pairs: &[PairedFrame<'_>], cfg: &ReportConfig) -> Result<SapReport> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for class in &cfg.classes {
        for &kind in &cfg.kinds {
            for &iou in &cfg.iou_thresholds {
                for &level in &cfg.levels {
                    keys.push((class, kind, iou, level));
                }
            }
        }
    }
    let cells = keys
        .par_iter()
        .map(|&(class, kind, iou, level)| {
            let frames: Vec<FrameResult> = pairs
                .iter()
                .map(|(p, g)| match_frame(p, g, class, level, iou, kind, &cfg.difficulty))
                .collect();
            let curve = pr_curve(&frames);
            SapCell {
                class: class.name.clone(),
                kind,
                iou,
                level,
                ap: ap_r40(&curve),
                n_gt: curve.n_gt,
                n_det: frames.iter().map(|f| f.scored.len()).sum(),
                curve,
            }
        })
        .collect();
    Ok(SapReport {
        instants: pairs.len(),
        cells,
    })
}

impl SapReport {
    pub fn cell(&self, class: &str, kind: IouKind, iou: f64, level: DifficultyLevel) -> Option<&SapCell> {
        self.cells
            .iter()
            .find(|c| c.class == class && c.kind == kind && c.iou == iou && c.level == level)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,kind,iou,level,ap,n_gt,n_det\n");
        for c in &self.cells {
            let ap = c.ap.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.class,
                c.kind.as_str(),
                c.iou,
                c.level.as_str(),
                ap,
                c.n_gt,
                c.n_det
            );
        }
        s
    }

    /// Gnuplot-readable PR curves, one indexed block per cell.
    pub fn pr_dump(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            let _ = writeln!(
                s,
                "# {} {} iou={} {}\n# score precision recall",
                c.class,
                c.kind.as_str(),
                c.iou,
                c.level.as_str()
            );
            for p in &c.curve.points {
                let _ = writeln!(s, "{} {} {}", p.score_threshold, p.precision, p.recall);
            }
            s.push_str("\n\n");
        }
        s
    }
}
