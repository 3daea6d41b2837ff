//! Feature-flow fusion.
//!
//! Two consecutive BEV feature maps are matched over a discrete square search
//! window by cosine similarity. The best shift per pixel gives a motion field,
//! which is then used to warp the current map one step further in time
//! (the "pseudo-next" feature). Nothing here is learned.
//!
//! Sign convention: a shift `s` compares the current pixel `p` with the
//! previous map at `p - s`, so the winning shift is the motion of the content
//! from `t-1` to `t` expressed on the grid at `t`. Warping samples the current
//! map at `p - m`, which continues that motion for one more step. For a map
//! translated by `δ` between frames, the warped result is the previous map
//! translated by `2δ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, ConvSpec, FeatureGrid};
use crate::par::*;

/// Search window `[-d, d]²` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftSet {
    pub max_displacement: usize,
    pub shifts: Vec<(i32, i32)>,
}

impl ShiftSet {
    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }
}

pub fn shift_set(d: usize) -> ShiftSet {
    let d_i = d as i32;
    let shifts = (-d_i..=d_i)
        .flat_map(|r| (-d_i..=d_i).map(move |c| (r, c)))
        .collect();
    ShiftSet {
        max_displacement: d,
        shifts,
    }
}

/// Marks shifts that leave the grid. Never wins an argmax against a real value.
pub const INVALID_SIMILARITY: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVolume {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    /// `height × width × depth`, row-major.
    pub values: Vec<f64>,
}

impl SimilarityVolume {
    pub fn at(&self, r: usize, c: usize) -> &[f64] {
        let o = (r * self.width + c) * self.depth;
        &self.values[o..o + self.depth]
    }

    pub fn get(&self, r: usize, c: usize, k: usize) -> f64 {
        self.at(r, c)[k]
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

fn check_same_shape(a: &FeatureGrid, b: &FeatureGrid) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "feature maps differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Cosine similarity between `f_t(p)` and `f_tm1(p - s)` for every pixel `p`
/// and shift `s`. Out-of-grid partners get [`INVALID_SIMILARITY`]; zero
/// vectors on either side give 0.
pub fn similarity_volume(
    f_t: &FeatureGrid,
    f_tm1: &FeatureGrid,
    shifts: &ShiftSet,
) -> Result<SimilarityVolume> {
    check_same_shape(f_t, f_tm1)?;
    let (h, w, _) = f_t.shape();
    let depth = shifts.len();
    let mut values = vec![0.0; h * w * depth];
    values
        .par_chunks_mut(w * depth)
        .enumerate()
        .for_each(|(r, row)| {
            for (c, cell) in row.chunks_mut(depth).enumerate() {
                let cur = f_t.pixel(r, c);
                for (v, &(dr, dc)) in cell.iter_mut().zip(&shifts.shifts) {
                    *v = match f_tm1.pixel_at(r as isize - dr as isize, c as isize - dc as isize) {
                        Some(prev) => cosine(cur, prev),
                        None => INVALID_SIMILARITY,
                    };
                }
            }
        });
    Ok(SimilarityVolume {
        height: h,
        width: w,
        depth,
        values,
    })
}

/// Per-pixel `(row, col)` displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub flow: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            height,
            width,
            flow: vec![[0.0; 2]; height * width],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> [f64; 2] {
        self.flow[r * self.width + c]
    }

    pub fn to_grid(&self) -> FeatureGrid {
        FeatureGrid::from_fn(self.height, self.width, 2, |r, c, ch| self.get(r, c)[ch])
    }

    pub fn from_grid(g: &FeatureGrid) -> Result<Self> {
        if g.channels() != 2 {
            return Err(Error::invalid("a flow grid needs exactly 2 channels"));
        }
        Ok(FlowField {
            height: g.height(),
            width: g.width(),
            flow: g.data().chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FlowField {
            flow: self.flow.iter().map(|&[a, b]| [a * factor, b * factor]).collect(),
            ..self.clone()
        }
    }
}

/// Picks the highest-similarity shift per pixel. Ties go to the shift with the
/// smallest `L∞` magnitude, then to the earlier shift in lexicographic order.
pub fn argmax_flow(v: &SimilarityVolume, shifts: &ShiftSet) -> Result<FlowField> {
    if v.depth != shifts.len() {
        return Err(Error::invalid(format!(
            "volume depth {} does not match {} shifts",
            v.depth,
            shifts.len()
        )));
    }
    let linf: Vec<i32> = shifts.shifts.iter().map(|&(r, c)| r.abs().max(c.abs())).collect();
    let flow = v
        .values
        .par_chunks_exact(v.depth)
        .map(|cell| {
            let mut best: Option<usize> = None;
            for (k, &s) in cell.iter().enumerate() {
                if s == INVALID_SIMILARITY {
                    continue;
                }
                best = match best {
                    None => Some(k),
                    Some(b) if s > cell[b] || (s == cell[b] && linf[k] < linf[b]) => Some(k),
                    keep => keep,
                };
            }
            best.map_or([0.0, 0.0], |k| {
                let (dr, dc) = shifts.shifts[k];
                [dr as f64, dc as f64]
            })
        })
        .collect();
    Ok(FlowField {
        height: v.height,
        width: v.width,
        flow,
    })
}

/// Full pipeline: max-pool both maps by `rd`, match within `±d` low-resolution
/// pixels, upsample the flow back to the input size and rescale it to
/// full-resolution pixel units.
pub fn compute_flow(
    f_t: &FeatureGrid,
    f_tm1: &FeatureGrid,
    d: usize,
    rd: usize,
) -> Result<FlowField> {
    check_same_shape(f_t, f_tm1)?;
    if rd == 0 {
        return Err(Error::invalid("downsample ratio must be at least 1"));
    }
    let shifts = shift_set(d);
    if rd == 1 {
        return argmax_flow(&similarity_volume(f_t, f_tm1, &shifts)?, &shifts);
    }
    let small_t = grid::max_pool(f_t, rd)?;
    let small_tm1 = grid::max_pool(f_tm1, rd)?;
    let low = argmax_flow(&similarity_volume(&small_t, &small_tm1, &shifts)?, &shifts)?;
    let up = grid::bilinear_resize(&low.to_grid(), f_t.height(), f_t.width())?;
    Ok(FlowField::from_grid(&up)?.scaled(rd as f64))
}

/// Backward warp: `out(p) = f_t(p - m(p))`, bilinear, zero outside the grid.
pub fn warp_pseudo_next(f_t: &FeatureGrid, flow: &FlowField) -> Result<FeatureGrid> {
    if (f_t.height(), f_t.width()) != (flow.height, flow.width) {
        return Err(Error::invalid("flow and feature map differ in spatial size"));
    }
    let (h, w, ch) = f_t.shape();
    let mut data = vec![0.0; h * w * ch];
    data.par_chunks_mut(w * ch).enumerate().for_each(|(r, row)| {
        for (c, px) in row.chunks_mut(ch).enumerate() {
            let [mr, mc] = flow.get(r, c);
            if mr == 0.0 && mc == 0.0 {
                px.copy_from_slice(f_t.pixel(r, c));
            } else {
                grid::bilinear_sample_into(f_t, r as f64 - mr, c as f64 - mc, px);
            }
        }
    });
    FeatureGrid::from_vec(h, w, ch, data)
}

/// Channel split used by [`fuse`]: `⌊C/3⌋` for the first two branches and the
/// remainder for the third, so the concatenation has exactly `C` channels.
pub fn fusion_split(channels: usize) -> [usize; 3] {
    let third = channels / 3;
    [third, third, channels - 2 * third]
}

/// Shared 1×1 channel reduction of the previous, current and pseudo-next maps,
/// concatenated and added back onto the current map.
///
/// `reduce` maps `C` to `C - 2⌊C/3⌋` channels; the first two branches keep the
/// leading `⌊C/3⌋` of those.
pub fn fuse(
    f_tm1: &FeatureGrid,
    f_t: &FeatureGrid,
    f_pseudo: &FeatureGrid,
    reduce: &ConvSpec,
) -> Result<FeatureGrid> {
    check_same_shape(f_t, f_tm1)?;
    check_same_shape(f_t, f_pseudo)?;
    let c = f_t.channels();
    if c < 3 {
        return Err(Error::invalid("fusion needs at least 3 channels"));
    }
    let split = fusion_split(c);
    if reduce.kernel != (1, 1) || reduce.transpose || reduce.stride != 1 {
        return Err(Error::invalid("fusion reduction must be a 1×1, stride-1 convolution"));
    }
    if reduce.out_channels != split[2] {
        return Err(Error::invalid(format!(
            "fusion reduction must output {} channels for C = {c}, got {}",
            split[2], reduce.out_channels
        )));
    }
    let parts = [f_tm1, f_t, f_pseudo]
        .iter()
        .zip(split)
        .map(|(g, keep)| {
            let reduced = grid::conv2d(g, reduce)?;
            if keep == reduced.channels() {
                Ok(reduced)
            } else {
                reduced.slice_channels(0, keep)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let cat = FeatureGrid::concat_channels(&parts.iter().collect::<Vec<_>>())?;
    cat.add(f_t)
}

/// Summary of a flow field: how often each displacement occurs.
#[derive(Debug, Clone, Serialize)]
pub struct FlowSummary {
    pub height: usize,
    pub width: usize,
    pub mean: [f64; 2],
    /// `(row, col, count)`, most frequent first.
    pub histogram: Vec<(f64, f64, usize)>,
}

pub fn summarize_flow(flow: &FlowField) -> FlowSummary {
    let mut counts: Vec<([f64; 2], usize)> = Vec::new();
    let mut sum = [0.0; 2];
    for &v in &flow.flow {
        sum[0] += v[0];
        sum[1] += v[1];
        match counts.iter_mut().find(|(k, _)| *k == v) {
            Some((_, n)) => *n += 1,
            None => counts.push((v, 1)),
        }
    }
    // Stable sort keeps first-seen order among equal counts.
    counts.sort_by_key(|c| std::cmp::Reverse(c.1));
    let n = flow.flow.len().max(1) as f64;
    FlowSummary {
        height: flow.height,
        width: flow.width,
        mean: [sum[0] / n, sum[1] / n],
        histogram: counts.into_iter().map(|([r, c], n)| (r, c, n)).collect(),
    }
}
