//! KITTI-Tracking label and detection files.
//!
//! One object per line, whitespace separated:
//!
//! ```text
//! frame track_id type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]
//! ```
//!
//! Ground-truth files carry 17 fields, detection dumps 18 (trailing score).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box3D, Dims};

pub const DONT_CARE: &str = "DontCare";

const GT_FIELDS: usize = 17;
const DET_FIELDS: usize = 18;

/// One row of a KITTI-Tracking file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub frame_index: u32,
    /// `-1` when the row carries no identity.
    pub track_id: i64,
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub bbox2d: [f64; 4],
    pub dims: Dims,
    /// Camera frame: x right, y down, z forward. `y` is the bottom of the box.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabeledBox {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox2d[3] - self.bbox2d[1]
    }

    pub fn to_box3d(&self, class_id: i32) -> Box3D {
        Box3D {
            center: self.location,
            dims: self.dims,
            yaw: self.rotation_y,
            score: self.score.unwrap_or(1.0),
            class_id,
            track_id: (self.track_id >= 0).then_some(self.track_id),
            bbox2d: Some(self.bbox2d),
        }
    }

    /// Builds a detection row from a box. Missing image-plane boxes are written
    /// as a unit square at the origin.
    pub fn from_box3d(b: &Box3D, frame_index: u32, class_name: &str) -> Self {
        let alpha = b.yaw - b.center[0].atan2(b.center[2]);
        LabeledBox {
            frame_index,
            track_id: b.track_id.unwrap_or(-1),
            class_name: class_name.to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha: crate::geometry::normalize_angle(alpha),
            bbox2d: b.bbox2d.unwrap_or([0.0, 0.0, 1.0, 1.0]),
            dims: b.dims,
            location: b.center,
            rotation_y: b.yaw,
            score: Some(b.score),
        }
    }

    /// Serializes to one line. Floats use shortest round-trip formatting so
    /// that parsing the output reproduces the same values.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {} {}",
            self.frame_index,
            self.track_id,
            self.class_name,
            self.truncation,
            self.occlusion,
            self.alpha
        );
        let dims = [self.dims.h, self.dims.w, self.dims.l];
        let fields = self
            .bbox2d
            .iter()
            .chain(dims.iter())
            .chain(self.location.iter())
            .chain(std::iter::once(&self.rotation_y));
        for v in fields {
            let _ = write!(s, " {v}");
        }
        if let Some(score) = self.score {
            let _ = write!(s, " {score}");
        }
        s
    }

    fn validate(&self, line: usize) -> Result<()> {
        // DontCare rows use -1/-1000 placeholders for everything but the 2D box.
        if self.is_dont_care() {
            return Ok(());
        }
        let [l, t, r, b] = self.bbox2d;
        if !(r > l) || !(b > t) {
            return Err(Error::parse(line, format!("degenerate 2D box {:?}", self.bbox2d)));
        }
        if !(self.dims.h > 0.0 && self.dims.w > 0.0 && self.dims.l > 0.0) {
            return Err(Error::parse(line, "box dimensions must be positive"));
        }
        if !(0..=3).contains(&self.occlusion) {
            return Err(Error::parse(line, format!("occlusion {} not in 0..=3", self.occlusion)));
        }
        Ok(())
    }
}

pub type FrameLabels = BTreeMap<u32, Vec<LabeledBox>>;

fn num<T: std::str::FromStr>(tok: &str, name: &str, line: usize) -> Result<T> {
    tok.parse::<T>()
        .map_err(|_| Error::parse(line, format!("field `{name}`: cannot parse {tok:?}")))
}

/// Parses one line (1-based `line` is used for error messages).
pub fn parse_line(text: &str, line: usize) -> Result<LabeledBox> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != GT_FIELDS && toks.len() != DET_FIELDS {
        return Err(Error::parse(
            line,
            format!("expected {GT_FIELDS} or {DET_FIELDS} fields, found {}", toks.len()),
        ));
    }
    let f = |i: usize, name: &str| num::<f64>(toks[i], name, line);
    // Some dumps write integer columns as floats ("0.00"); accept both.
    let int = |i: usize, name: &str| -> Result<i64> {
        toks[i].parse::<i64>().or_else(|_| {
            let v = num::<f64>(toks[i], name, line)?;
            if v.fract() == 0.0 {
                Ok(v as i64)
            } else {
                Err(Error::parse(line, format!("field `{name}`: {:?} is not an integer", toks[i])))
            }
        })
    };
    let frame = int(0, "frame")?;
    if frame < 0 {
        return Err(Error::parse(line, "negative frame index"));
    }
    let b = LabeledBox {
        frame_index: frame as u32,
        track_id: int(1, "track_id")?,
        class_name: toks[2].to_string(),
        truncation: f(3, "truncated")?,
        occlusion: int(4, "occluded")? as i32,
        alpha: f(5, "alpha")?,
        bbox2d: [f(6, "left")?, f(7, "top")?, f(8, "right")?, f(9, "bottom")?],
        dims: Dims {
            h: f(10, "height")?,
            w: f(11, "width")?,
            l: f(12, "length")?,
        },
        location: [f(13, "x")?, f(14, "y")?, f(15, "z")?],
        rotation_y: f(16, "rotation_y")?,
        score: if toks.len() == DET_FIELDS {
            Some(f(17, "score")?)
        } else {
            None
        },
    };
    b.validate(line)?;
    Ok(b)
}

/// Parses a whole file, grouping rows by frame in file order. Blank lines are skipped.
pub fn parse_tracking_labels(text: &str) -> Result<FrameLabels> {
    let mut frames = FrameLabels::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let b = parse_line(raw, i + 1)?;
        frames.entry(b.frame_index).or_default().push(b);
    }
    Ok(frames)
}

pub fn write_tracking_labels(frames: &FrameLabels) -> String {
    let mut out = String::new();
    for boxes in frames.values() {
        for b in boxes {
            out.push_str(&b.to_line());
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSplit {
    pub sequence_id: usize,
    pub frames: Vec<usize>,
    pub role: SplitRole,
}

/// Chops `frame_count` frames into consecutive chunks of `chunk` frames.
/// Even-numbered chunks are training data, odd-numbered chunks test data.
pub fn split_sequences(frame_count: usize, chunk: usize) -> Result<Vec<SequenceSplit>> {
    if chunk == 0 {
        return Err(Error::invalid("chunk length must be at least 1"));
    }
    if frame_count == 0 {
        return Err(Error::invalid("frame_count must be at least 1"));
    }
    Ok((0..frame_count)
        .step_by(chunk)
        .enumerate()
        .map(|(k, start)| SequenceSplit {
            sequence_id: k,
            frames: (start..(start + chunk).min(frame_count)).collect(),
            role: if k % 2 == 0 {
                SplitRole::Train
            } else {
                SplitRole::Test
            },
        })
        .collect())
}

/// Closed per-axis bounds in camera coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRange {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl Default for EvalRange {
    fn default() -> Self {
        EvalRange {
            x: [-28.8, 28.8],
            y: [-1.0, 3.0],
            z: [2.0, 53.2],
        }
    }
}

impl EvalRange {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if !(lo <= hi) {
                return Err(Error::invalid(format!("range axis {name}: min {lo} > max {hi}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let inside = |v: f64, [lo, hi]: [f64; 2]| v >= lo && v <= hi;
        inside(p[0], self.x) && inside(p[1], self.y) && inside(p[2], self.z)
    }
}

pub fn apply_range_filter(boxes: &[LabeledBox], range: &EvalRange) -> Result<Vec<LabeledBox>> {
    range.validate()?;
    Ok(boxes
        .iter()
        .filter(|b| range.contains(b.location))
        .cloned()
        .collect())
}
