//! Loading GT/detection sequences and cutting them into evaluation streams.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use streamsap::kitti_io::{parse_tracking_labels, split_sequences, EvalRange, FrameLabels, LabeledBox, SplitRole};

use crate::config::{pick, pick_bool, read_text, require_exists, usage, ConfigFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Split as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Ground-truth label file, or a directory of per-sequence `.txt` files.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Detection dump file, or a directory matching `--gt` by file name.
    #[arg(long)]
    pub det: Option<PathBuf>,
    /// Evaluate every frame, or only the train/test chunks.
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    /// Chunk length for `--split train|test`.
    #[arg(long)]
    pub chunk: Option<usize>,
    /// Keep boxes outside the evaluation range.
    #[arg(long, overrides_with = "range_filter")]
    pub no_range_filter: bool,
    #[arg(long, hide = true)]
    pub range_filter: bool,
    /// Range bounds `min,max` in meters (camera x).
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    pub range_x: Option<Vec<f64>>,
    /// Range bounds `min,max` in meters (camera y).
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    pub range_y: Option<Vec<f64>>,
    /// Range bounds `min,max` in meters (camera z).
    #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
    pub range_z: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub gt: PathBuf,
    pub det: PathBuf,
    pub split: Split,
    pub chunk: usize,
    pub range_filter: bool,
    pub range: EvalRange,
}

fn pick_range(flag: Option<Vec<f64>>, file: &ConfigFile, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
    let v = match flag {
        Some(v) => v,
        None => file.get_list::<f64>(key)?.unwrap_or(default.to_vec()),
    };
    match v[..] {
        [lo, hi] if lo <= hi => Ok([lo, hi]),
        _ => Err(usage(format!("`{key}` must be `min,max` with min <= max"))),
    }
}

fn pick_path(flag: Option<PathBuf>, file: &ConfigFile, key: &str) -> Result<PathBuf> {
    let p = match flag {
        Some(p) => p,
        None => file
            .get::<PathBuf>(key)?
            .ok_or_else(|| usage(format!("--{key} is required")))?,
    };
    require_exists(&p, key)?;
    Ok(p)
}

impl DataArgs {
    pub fn resolve(self, file: &ConfigFile) -> Result<DataConfig> {
        let def = EvalRange::default();
        let range_flag = match (self.no_range_filter, self.range_filter) {
            (true, _) => Some(false),
            (_, true) => Some(true),
            _ => None,
        };
        let cfg = DataConfig {
            gt: pick_path(self.gt, file, "gt")?,
            det: pick_path(self.det, file, "det")?,
            split: pick(self.split, file, "split", Split::All)?,
            chunk: pick(self.chunk, file, "chunk", 40)?,
            range_filter: pick_bool(range_flag, file, "range-filter", true)?,
            range: EvalRange {
                x: pick_range(self.range_x, file, "range-x", def.x)?,
                y: pick_range(self.range_y, file, "range-y", def.y)?,
                z: pick_range(self.range_z, file, "range-z", def.z)?,
            },
        };
        if cfg.chunk == 0 {
            return Err(usage("`chunk` must be at least 1"));
        }
        if cfg.gt.is_dir() != cfg.det.is_dir() {
            return Err(usage("--gt and --det must both be files or both be directories"));
        }
        Ok(cfg)
    }
}

/// One sequence with `frames` GT and detection slots (frame k at index k).
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub gt: Vec<Vec<LabeledBox>>,
    pub det: Vec<Vec<LabeledBox>>,
    /// Frames without a single detection row, before any filtering.
    pub missing_frames: Vec<usize>,
    pub det_file_missing: bool,
}

fn to_frames(labels: FrameLabels, n: usize) -> Vec<Vec<LabeledBox>> {
    let mut out = vec![Vec::new(); n];
    for (k, rows) in labels {
        out[k as usize] = rows;
    }
    out
}

fn parse_file(path: &Path) -> Result<FrameLabels> {
    parse_tracking_labels(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_sequence(name: String, gt: &Path, det: Option<&Path>) -> Result<Sequence> {
    let g = parse_file(gt)?;
    let d = match det {
        Some(p) => parse_file(p)?,
        None => FrameLabels::new(),
    };
    let n = g.keys().chain(d.keys()).max().map_or(0, |&k| k as usize + 1);
    let missing_frames = (0..n).filter(|&k| !d.contains_key(&(k as u32))).collect();
    Ok(Sequence {
        name,
        gt: to_frames(g, n),
        det: to_frames(d, n),
        missing_frames,
        det_file_missing: det.is_none(),
    })
}

/// Loads one sequence per GT file. A directory's `.txt` files are taken in
/// name order; a GT sequence without a detection file gets no detections.
pub fn load_sequences(cfg: &DataConfig) -> Result<Vec<Sequence>> {
    let mut seqs = if cfg.gt.is_dir() {
        let mut names = BTreeSet::new();
        for entry in std::fs::read_dir(&cfg.gt).with_context(|| format!("listing {}", cfg.gt.display()))? {
            let path = entry?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "txt") {
                names.insert(path.file_name().unwrap().to_owned());
            }
        }
        if names.is_empty() {
            anyhow::bail!("no .txt label files in {}", cfg.gt.display());
        }
        names
            .into_iter()
            .map(|f| {
                let det = cfg.det.join(&f);
                let stem = Path::new(&f).file_stem().unwrap().to_string_lossy().into_owned();
                load_sequence(stem, &cfg.gt.join(&f), det.is_file().then_some(det.as_path()))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let stem = cfg.gt.file_stem().map_or("sequence".into(), |s| s.to_string_lossy().into_owned());
        vec![load_sequence(stem, &cfg.gt, Some(&cfg.det))?]
    };
    if cfg.range_filter {
        cfg.range.validate()?;
        for s in &mut seqs {
            for frame in s.gt.iter_mut().chain(s.det.iter_mut()) {
                // DontCare rows carry placeholder locations; keep them.
                frame.retain(|b| b.is_dont_care() || cfg.range.contains(b.location));
            }
        }
    }
    Ok(seqs)
}

/// A contiguous run of frames evaluated as one stream; frame 0 of the stream
/// is frame `start` of the sequence.
#[derive(Debug, Clone, Copy)]
pub struct Stream<'a> {
    pub sequence: &'a str,
    pub start: usize,
    pub gt: &'a [Vec<LabeledBox>],
    pub det: &'a [Vec<LabeledBox>],
}

pub fn streams<'a>(seqs: &'a [Sequence], split: Split, chunk: usize) -> Result<Vec<Stream<'a>>> {
    let mut out = Vec::new();
    for s in seqs {
        let n = s.gt.len();
        if n == 0 {
            continue;
        }
        let whole = |start: usize, end: usize| Stream {
            sequence: &s.name,
            start,
            gt: &s.gt[start..end],
            det: &s.det[start..end],
        };
        let role = match split {
            Split::All => {
                out.push(whole(0, n));
                continue;
            }
            Split::Train => SplitRole::Train,
            Split::Test => SplitRole::Test,
        };
        for c in split_sequences(n, chunk)?.into_iter().filter(|c| c.role == role) {
            out.push(whole(c.frames[0], c.frames[c.frames.len() - 1] + 1));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceInfo {
    pub name: String,
    pub frames: usize,
    pub det_file_missing: bool,
    pub missing_frames: Vec<usize>,
}

pub fn sequence_info(seqs: &[Sequence]) -> Vec<SequenceInfo> {
    seqs.iter()
        .map(|s| SequenceInfo {
            name: s.name.clone(),
            frames: s.gt.len(),
            det_file_missing: s.det_file_missing,
            missing_frames: s.missing_frames.clone(),
        })
        .collect()
}

/// Stable class ids for the Kalman tracker and the motion loss: the sorted
/// set of class names seen.
#[derive(Debug, Clone, Default)]
pub struct ClassIds(Vec<String>);

impl ClassIds {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a LabeledBox>) -> Self {
        let set: BTreeSet<&str> = rows.into_iter().map(|b| b.class_name.as_str()).collect();
        ClassIds(set.into_iter().map(str::to_string).collect())
    }

    pub fn id(&self, name: &str) -> i32 {
        self.0.binary_search_by(|n| n.as_str().cmp(name)).map_or(-1, |i| i as i32)
    }

    pub fn name(&self, id: i32) -> &str {
        usize::try_from(id).ok().and_then(|i| self.0.get(i)).map_or("Unknown", String::as_str)
    }
}
