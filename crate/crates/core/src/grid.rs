//! Dense `H × W × C` feature grids and the handful of operators built on them.
//!
//! Conventions: storage is row-major by `(row, col, channel)`; convolutions are
//! cross-correlations with zero padding; resizing uses align-corners sampling.
//! Every output cell is accumulated in a fixed order, so parallel and
//! sequential builds produce bit-identical results.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::par::*;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureGrid {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "grid data has {} values, expected {height}×{width}×{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid data must be finite"));
        }
        Ok(FeatureGrid {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        FeatureGrid {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, r: usize, c: usize) -> usize {
        (r * self.width + c) * self.channels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[self.offset(r, c) + ch]
    }

    pub fn set(&mut self, r: usize, c: usize, ch: usize, v: f64) {
        let o = self.offset(r, c) + ch;
        self.data[o] = v;
    }

    /// The channel vector at `(r, c)`.
    #[inline]
    pub fn pixel(&self, r: usize, c: usize) -> &[f64] {
        let o = self.offset(r, c);
        &self.data[o..o + self.channels]
    }

    /// The channel vector at signed coordinates, `None` outside the grid.
    #[inline]
    pub fn pixel_at(&self, r: isize, c: isize) -> Option<&[f64]> {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            None
        } else {
            Some(self.pixel(r as usize, c as usize))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    fn with_data(&self, data: Vec<f64>) -> Self {
        FeatureGrid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn add(&self, other: &FeatureGrid) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &FeatureGrid) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    fn zip(&self, other: &FeatureGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self.with_data(self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect()))
    }

    /// Concatenates grids of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&FeatureGrid]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::invalid("concatenated grids differ in spatial size"));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for r in 0..h {
            for c in 0..w {
                for p in parts {
                    data.extend_from_slice(p.pixel(r, c));
                }
            }
        }
        Ok(FeatureGrid {
            height: h,
            width: w,
            channels,
            data,
        })
    }

    /// Keeps channels `start..end`.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.channels {
            return Err(Error::invalid(format!(
                "channel range {start}..{end} out of 0..{}",
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(self.height * self.width * (end - start));
        for r in 0..self.height {
            for c in 0..self.width {
                data.extend_from_slice(&self.pixel(r, c)[start..end]);
            }
        }
        Ok(FeatureGrid {
            height: self.height,
            width: self.width,
            channels: end - start,
            data,
        })
    }
}

/// Fills a fresh grid by computing each pixel's channel vector independently.
fn build_pixels(
    height: usize,
    width: usize,
    channels: usize,
    f: impl Fn(usize, usize, &mut [f64]) + Sync + Send,
) -> FeatureGrid {
    let mut data = vec![0.0; height * width * channels];
    data.par_chunks_mut(width * channels)
        .enumerate()
        .for_each(|(r, row)| {
            for (c, px) in row.chunks_mut(channels).enumerate() {
                f(r, c, px);
            }
        });
    FeatureGrid {
        height,
        width,
        channels,
        data,
    }
}

/// Channel-wise max over `ratio × ratio` windows; edge windows may be partial.
pub fn max_pool(g: &FeatureGrid, ratio: usize) -> Result<FeatureGrid> {
    if ratio == 0 {
        return Err(Error::invalid("pooling ratio must be at least 1"));
    }
    if ratio == 1 {
        return Ok(g.clone());
    }
    let oh = g.height.div_ceil(ratio);
    let ow = g.width.div_ceil(ratio);
    Ok(build_pixels(oh, ow, g.channels, |r, c, out| {
        out.fill(f64::NEG_INFINITY);
        for sr in r * ratio..((r + 1) * ratio).min(g.height) {
            for sc in c * ratio..((c + 1) * ratio).min(g.width) {
                for (o, &v) in out.iter_mut().zip(g.pixel(sr, sc)) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
    }))
}

/// Bilinear blend of the four neighbours of `(row, col)`. Neighbours outside
/// the grid contribute zero.
pub fn bilinear_sample(g: &FeatureGrid, row: f64, col: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.channels];
    bilinear_sample_into(g, row, col, &mut out);
    out
}

pub(crate) fn bilinear_sample_into(g: &FeatureGrid, row: f64, col: f64, out: &mut [f64]) {
    out.fill(0.0);
    if !row.is_finite() || !col.is_finite() {
        return;
    }
    let r0f = row.floor();
    let c0f = col.floor();
    let fr = row - r0f;
    let fc = col - c0f;
    // Far outside the grid: nothing to blend.
    if r0f < -1.0 || c0f < -1.0 || r0f > g.height as f64 || c0f > g.width as f64 {
        return;
    }
    let (r0, c0) = (r0f as isize, c0f as isize);
    let fetch = |r: isize, c: isize| g.pixel_at(r, c);
    let p00 = fetch(r0, c0);
    let p01 = fetch(r0, c0 + 1);
    let p10 = fetch(r0 + 1, c0);
    let p11 = fetch(r0 + 1, c0 + 1);
    let val = |p: Option<&[f64]>, ch: usize| p.map_or(0.0, |p| p[ch]);
    for (ch, o) in out.iter_mut().enumerate() {
        let v00 = val(p00, ch);
        let v01 = val(p01, ch);
        let v10 = val(p10, ch);
        let v11 = val(p11, ch);
        // Lerp form: exact at integer coordinates and between equal neighbours.
        let top = if fc == 0.0 { v00 } else { v00 + fc * (v01 - v00) };
        let bottom = if fc == 0.0 { v10 } else { v10 + fc * (v11 - v10) };
        *o = if fr == 0.0 { top } else { top + fr * (bottom - top) };
    }
}

/// Align-corners bilinear resize.
pub fn bilinear_resize(g: &FeatureGrid, out_h: usize, out_w: usize) -> Result<FeatureGrid> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1×1"));
    }
    if (out_h, out_w) == (g.height, g.width) {
        return Ok(g.clone());
    }
    let scale = |len: usize, out_len: usize| {
        if out_len <= 1 {
            0.0
        } else {
            (len - 1) as f64 / (out_len - 1) as f64
        }
    };
    let sr = scale(g.height, out_h);
    let sc = scale(g.width, out_w);
    Ok(build_pixels(out_h, out_w, g.channels, |r, c, out| {
        bilinear_sample_into(g, r as f64 * sr, c as f64 * sc, out);
    }))
}

/// Convolution layer description and weights.
///
/// Weights are laid out `out × (in / groups) × k_h × k_w` for both ordinary and
/// transposed convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub transpose: bool,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl ConvSpec {
    /// A zero-weight layer with the given geometry.
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
        transpose: bool,
    ) -> Self {
        let n = out_channels * (in_channels / groups.max(1)) * kernel * kernel;
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            dilation,
            groups,
            transpose,
            weights: vec![0.0; n],
            bias: None,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups.max(1)) * self.kernel.0 * self.kernel.1
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        let in_per_group = self.in_channels / self.groups;
        self.weights[((o * in_per_group + i) * self.kernel.0 + ky) * self.kernel.1 + kx]
    }

    pub fn weight_mut(&mut self, o: usize, i: usize, ky: usize, kx: usize) -> &mut f64 {
        let in_per_group = self.in_channels / self.groups;
        &mut self.weights[((o * in_per_group + i) * self.kernel.0 + ky) * self.kernel.1 + kx]
    }

    /// Kernel extent including dilation gaps.
    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.dilation + 1,
            (self.kernel.1 - 1) * self.dilation + 1,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.stride,
            self.dilation,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid("conv channels, kernel, stride, dilation and groups must be positive"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::invalid(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        if self.transpose && self.dilation != 1 {
            return Err(Error::invalid("transposed convolution requires dilation 1"));
        }
        if self.weights.len() != self.weight_len() {
            return Err(Error::invalid(format!(
                "conv expects {} weights, got {}",
                self.weight_len(),
                self.weights.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels {
                return Err(Error::invalid("bias length must equal out_channels"));
            }
        }
        Ok(())
    }

    /// Output spatial size for an input of `(h, w)`.
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.transpose {
            (
                (h - 1) * self.stride + self.kernel.0,
                (w - 1) * self.stride + self.kernel.1,
            )
        } else {
            let (eh, ew) = self.effective_kernel();
            let out = |len: usize, eff: usize| {
                let padded = len + 2 * (eff / 2);
                if padded < eff {
                    0
                } else {
                    (padded - eff) / self.stride + 1
                }
            };
            (out(h, eh), out(w, ew))
        }
    }
}

fn check_conv(g: &FeatureGrid, spec: &ConvSpec, transpose: bool) -> Result<()> {
    spec.validate()?;
    if spec.transpose != transpose {
        return Err(Error::invalid(if transpose {
            "transpose_conv2d needs a spec with transpose = true"
        } else {
            "conv2d needs a spec with transpose = false"
        }));
    }
    if spec.in_channels != g.channels {
        return Err(Error::invalid(format!(
            "conv expects {} input channels, grid has {}",
            spec.in_channels, g.channels
        )));
    }
    Ok(())
}

/// Zero-padded cross-correlation with padding `⌊effective_kernel / 2⌋`.
/// `groups = channels` gives a depthwise convolution.
pub fn conv2d(g: &FeatureGrid, spec: &ConvSpec) -> Result<FeatureGrid> {
    check_conv(g, spec, false)?;
    let (oh, ow) = spec.output_size(g.height, g.width);
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("convolution output would be empty"));
    }
    let (eh, ew) = spec.effective_kernel();
    let (pad_h, pad_w) = ((eh / 2) as isize, (ew / 2) as isize);
    let in_pg = spec.in_channels / spec.groups;
    let out_pg = spec.out_channels / spec.groups;
    let (kh, kw) = spec.kernel;
    let (s, d) = (spec.stride as isize, spec.dilation as isize);
    let taps = kh * kw;
    Ok(build_pixels(oh, ow, spec.out_channels, |r, c, out| {
        if let Some(b) = &spec.bias {
            out.copy_from_slice(b);
        }
        for ky in 0..kh {
            let sr = r as isize * s - pad_h + ky as isize * d;
            for kx in 0..kw {
                let sc = c as isize * s - pad_w + kx as isize * d;
                let Some(px) = g.pixel_at(sr, sc) else { continue };
                let tap = ky * kw + kx;
                for (o, cell) in out.iter_mut().enumerate() {
                    let src = &px[(o / out_pg) * in_pg..][..in_pg];
                    let w = &spec.weights[o * in_pg * taps + tap..];
                    let mut acc = 0.0;
                    for (i, &v) in src.iter().enumerate() {
                        acc += w[i * taps] * v;
                    }
                    *cell += acc;
                }
            }
        }
    }))
}

/// Transposed convolution without padding: output size `(h - 1)·s + k`.
/// With `k = s` every output pixel receives exactly one input pixel.
pub fn transpose_conv2d(g: &FeatureGrid, spec: &ConvSpec) -> Result<FeatureGrid> {
    check_conv(g, spec, true)?;
    let (oh, ow) = spec.output_size(g.height, g.width);
    let in_pg = spec.in_channels / spec.groups;
    let out_pg = spec.out_channels / spec.groups;
    let (kh, kw) = spec.kernel;
    let s = spec.stride;
    Ok(build_pixels(oh, ow, spec.out_channels, |r, c, out| {
        for (o, cell) in out.iter_mut().enumerate() {
            let group = o / out_pg;
            let mut acc = spec.bias.as_ref().map_or(0.0, |b| b[o]);
            for i in 0..in_pg {
                let ic = group * in_pg + i;
                for ky in (0..kh).filter(|&ky| ky <= r && (r - ky) % s == 0) {
                    let sr = (r - ky) / s;
                    if sr >= g.height {
                        continue;
                    }
                    for kx in (0..kw).filter(|&kx| kx <= c && (c - kx) % s == 0) {
                        let sc = (c - kx) / s;
                        if sc >= g.width {
                            continue;
                        }
                        acc += spec.weight(o, i, ky, kx) * g.get(sr, sc, ic);
                    }
                }
            }
            *cell = acc;
        }
    }))
}

pub const FGRD_MAGIC: &[u8; 4] = b"FGRD";
pub const FGRD_VERSION: u32 = 1;

/// Writes the FGRD binary format: magic, version, H, W, C (u32 little-endian),
/// then `H·W·C` float32 little-endian values in `(row, col, channel)` order.
pub fn write_fgrd<W: Write>(g: &FeatureGrid, mut w: W) -> std::io::Result<()> {
    w.write_all(FGRD_MAGIC)?;
    for v in [FGRD_VERSION, g.height as u32, g.width as u32, g.channels as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(g.data.len() * 4);
    for &v in &g.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_fgrd<R: Read>(mut r: R) -> Result<FeatureGrid> {
    let io = |e| Error::io("reading FGRD grid", e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != FGRD_MAGIC {
        return Err(Error::invalid(format!("bad FGRD magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 4];
    for h in header.iter_mut() {
        r.read_exact(&mut word).map_err(io)?;
        *h = u32::from_le_bytes(word);
    }
    let [version, h, w, c] = header;
    if version != FGRD_VERSION {
        return Err(Error::invalid(format!("unsupported FGRD version {version}")));
    }
    let n = (h as usize)
        .checked_mul(w as usize)
        .and_then(|v| v.checked_mul(c as usize))
        .ok_or_else(|| Error::invalid("FGRD dimensions overflow"))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw).map_err(io)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    FeatureGrid::from_vec(h as usize, w as usize, c as usize, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_grid(h: usize, w: usize, c: usize) -> FeatureGrid {
        FeatureGrid::from_fn(h, w, c, |r, col, ch| (r * 100 + col * 10 + ch) as f64)
    }

    #[test]
    fn pool_identity_and_single_window() {
        let g = seq_grid(3, 4, 2);
        assert_eq!(max_pool(&g, 1).unwrap(), g);
        let small = FeatureGrid::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = max_pool(&small, 2).unwrap();
        assert_eq!(p.shape(), (1, 1, 1));
        assert_eq!(p.get(0, 0, 0), 4.0);
        assert!(max_pool(&g, 0).is_err());
    }

    #[test]
    fn pool_partial_windows() {
        // 3×3 values 1..9, row-major.
        let g = FeatureGrid::from_vec(3, 3, 1, (1..=9).map(f64::from).collect()).unwrap();
        let p = max_pool(&g, 2).unwrap();
        assert_eq!(p.shape(), (2, 2, 1));
        // Windows: {1,2,4,5} {3,6} {7,8} {9}
        assert_eq!(p.data(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn sample_exact_midpoint_and_outside() {
        let g = FeatureGrid::from_vec(2, 2, 1, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(bilinear_sample(&g, 1.0, 1.0), vec![7.0]);
        assert_eq!(bilinear_sample(&g, 0.0, 0.5), vec![2.0]);
        assert_eq!(bilinear_sample(&g, 0.5, 0.0), vec![3.0]);
        assert_eq!(bilinear_sample(&g, -1.0, -1.0), vec![0.0]);
        // Half outside: blends with a zero neighbour.
        assert_eq!(bilinear_sample(&g, -0.5, 0.0), vec![0.5]);
    }

    #[test]
    fn resize_cases() {
        let g = seq_grid(3, 5, 2);
        assert_eq!(bilinear_resize(&g, 3, 5).unwrap(), g);
        let row = FeatureGrid::from_vec(1, 2, 1, vec![2.0, 6.0]).unwrap();
        let up = bilinear_resize(&row, 1, 3).unwrap();
        assert_eq!(up.data(), &[2.0, 4.0, 6.0]);
        let k = FeatureGrid::from_fn(3, 3, 2, |_, _, _| 1.25);
        let big = bilinear_resize(&k, 7, 5).unwrap();
        assert!(big.data().iter().all(|&v| v == 1.25));
        let single = bilinear_resize(&g, 1, 1).unwrap();
        assert_eq!(single.pixel(0, 0), g.pixel(0, 0));
        assert!(bilinear_resize(&g, 0, 3).is_err());
    }

    #[test]
    fn conv_identity_1x1() {
        let g = seq_grid(4, 3, 3);
        let mut spec = ConvSpec::zeros(3, 3, 1, 1, 1, 1, false);
        for ch in 0..3 {
            *spec.weight_mut(ch, ch, 0, 0) = 1.0;
        }
        assert_eq!(conv2d(&g, &spec).unwrap(), g);
    }

    #[test]
    fn depthwise_ones_on_constant() {
        let g = FeatureGrid::from_fn(5, 5, 2, |_, _, _| 2.0);
        let mut spec = ConvSpec::zeros(2, 2, 3, 1, 1, 2, false);
        spec.weights.fill(1.0);
        let out = conv2d(&g, &spec).unwrap();
        assert_eq!(out.shape(), (5, 5, 2));
        assert_eq!(out.get(2, 2, 0), 18.0);
        assert_eq!(out.get(2, 2, 1), 18.0);
        // Corner sees 4 of 9 taps.
        assert_eq!(out.get(0, 0, 0), 8.0);
    }

    #[test]
    fn dilated_impulse_response() {
        let mut g = FeatureGrid::zeros(9, 9, 1);
        g.set(4, 4, 0, 1.0);
        let mut spec = ConvSpec::zeros(1, 1, 3, 1, 2, 1, false);
        spec.weights.fill(1.0);
        let out = conv2d(&g, &spec).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                let hit = [2, 4, 6].contains(&r) && [2, 4, 6].contains(&c);
                assert_eq!(out.get(r, c, 0), if hit { 1.0 } else { 0.0 }, "({r},{c})");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let g = seq_grid(3, 3, 2);
        assert!(conv2d(&g, &ConvSpec::zeros(3, 3, 1, 1, 1, 1, false)).is_err());
        assert!(conv2d(&g, &ConvSpec::zeros(2, 2, 2, 2, 1, 1, true)).is_err());
        assert!(transpose_conv2d(&g, &ConvSpec::zeros(3, 2, 2, 2, 1, 1, true)).is_err());
        assert!(transpose_conv2d(&g, &ConvSpec::zeros(2, 2, 2, 2, 1, 1, false)).is_err());
    }

    #[test]
    fn transpose_doubles_and_copies_kernel() {
        let g = seq_grid(3, 4, 2);
        let zero = ConvSpec::zeros(2, 3, 2, 2, 1, 1, true);
        let out = transpose_conv2d(&g, &zero).unwrap();
        assert_eq!(out.shape(), (6, 8, 3));
        assert!(out.data().iter().all(|&v| v == 0.0));

        let mut imp = FeatureGrid::zeros(3, 3, 1);
        imp.set(1, 1, 0, 1.0);
        let mut spec = ConvSpec::zeros(1, 1, 2, 2, 1, 1, true);
        spec.weights = vec![1.0, 2.0, 3.0, 4.0];
        let out = transpose_conv2d(&imp, &spec).unwrap();
        assert_eq!(out.shape(), (6, 6, 1));
        for r in 0..6 {
            for c in 0..6 {
                let expected = if (2..4).contains(&r) && (2..4).contains(&c) {
                    spec.weight(0, 0, r - 2, c - 2)
                } else {
                    0.0
                };
                assert_eq!(out.get(r, c, 0), expected);
            }
        }
    }

    #[test]
    fn strided_conv_output_size() {
        let g = seq_grid(8, 7, 1);
        let spec = ConvSpec::zeros(1, 1, 3, 2, 1, 1, false);
        assert_eq!(conv2d(&g, &spec).unwrap().shape(), (4, 4, 1));
    }

    #[test]
    fn fgrd_round_trip_and_errors() {
        let g = FeatureGrid::from_fn(3, 2, 4, |r, c, ch| (r as f64) * 0.5 - (c * ch) as f64);
        let mut buf = Vec::new();
        write_fgrd(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"FGRD");
        assert_eq!(buf.len(), 20 + 3 * 2 * 4 * 4);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(read_fgrd(buf.as_slice()).unwrap(), g);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_fgrd(bad.as_slice()).is_err());
        assert!(read_fgrd(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn concat_and_slice() {
        let a = seq_grid(2, 2, 1);
        let b = seq_grid(2, 2, 2).map(|v| -v);
        let cat = FeatureGrid::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.channels(), 3);
        assert_eq!(cat.pixel(1, 1), &[110.0, -110.0, -111.0]);
        assert_eq!(cat.slice_channels(1, 3).unwrap(), b);
    }
}
