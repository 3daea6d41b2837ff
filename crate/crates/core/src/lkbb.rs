//! Large-kernel BEV backbone: receptive-field and complexity accounting, the
//! large-kernel attention (LKA) forward pass, and two-scale upsampling fusion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{conv2d, transpose_conv2d, ConvSpec, FeatureGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Dense convolution.
    Conv,
    /// Depthwise convolution (`groups = channels`).
    Dw,
    /// Pointwise 1×1 convolution.
    Pw,
    /// Transposed convolution.
    Tconv,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Dw => "dw",
            LayerKind::Pw => "pw",
            LayerKind::Tconv => "tconv",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(LayerKind::Conv),
            "dw" => Ok(LayerKind::Dw),
            "pw" => Ok(LayerKind::Pw),
            "tconv" => Ok(LayerKind::Tconv),
            _ => Err(Error::invalid(format!("unknown layer kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub groups: usize,
    pub bias: bool,
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, dilation: usize, cin: usize, cout: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel,
            stride,
            dilation,
            in_channels: cin,
            out_channels: cout,
            groups: 1,
            bias: true,
        }
    }

    pub fn dw(kernel: usize, stride: usize, dilation: usize, c: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dw,
            groups: c,
            ..LayerSpec::conv(kernel, stride, dilation, c, c)
        }
    }

    pub fn pw(cin: usize, cout: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Pw,
            ..LayerSpec::conv(1, 1, 1, cin, cout)
        }
    }

    pub fn tconv(kernel: usize, stride: usize, cin: usize, cout: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Tconv,
            ..LayerSpec::conv(kernel, stride, 1, cin, cout)
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn is_transpose(&self) -> bool {
        self.kind == LayerKind::Tconv
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.kernel, self.stride, self.dilation, self.in_channels, self.out_channels, self.groups];
        if v.contains(&0) {
            return Err(Error::invalid(format!("{} layer has a zero size field", self.kind.as_str())));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::invalid(format!(
                "{} layer channels {}→{} not divisible by groups {}",
                self.kind.as_str(),
                self.in_channels,
                self.out_channels,
                self.groups
            )));
        }
        if self.kind == LayerKind::Pw && self.kernel != 1 {
            return Err(Error::invalid("pw layer must have kernel 1"));
        }
        if self.is_transpose() && self.dilation != 1 {
            return Err(Error::invalid("tconv layer must have dilation 1"));
        }
        Ok(())
    }

    /// Zero-weight grid layer with this geometry.
    pub fn to_conv(&self) -> ConvSpec {
        let mut c = ConvSpec::zeros(
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.dilation,
            self.groups,
            self.is_transpose(),
        );
        if self.bias {
            c.bias = Some(vec![0.0; self.out_channels]);
        }
        c
    }

    pub fn params(&self) -> u64 {
        let w = self.out_channels * (self.in_channels / self.groups) * self.kernel * self.kernel;
        (w + if self.bias { self.out_channels } else { 0 }) as u64
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.conv_geometry().output_size(h, w)
    }

    fn conv_geometry(&self) -> ConvSpec {
        ConvSpec {
            weights: Vec::new(),
            ..ConvSpec::zeros(0, 0, self.kernel, self.stride, self.dilation, 1, self.is_transpose())
        }
    }

    /// Multiply-accumulates ×2. Transposed layers count one MAC per input
    /// pixel, kernel tap and output channel of the group.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let k2 = (self.kernel * self.kernel) as u64;
        if self.is_transpose() {
            2 * (h * w * self.in_channels * (self.out_channels / self.groups)) as u64 * k2
        } else {
            let (oh, ow) = self.output_size(h, w);
            2 * (oh * ow * self.out_channels * (self.in_channels / self.groups)) as u64 * k2
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} ", self.kind.as_str(), self.kernel, self.stride, self.dilation)?;
        if self.kind == LayerKind::Dw || self.in_channels == self.out_channels {
            write!(f, "{}", self.in_channels)?;
        } else {
            write!(f, "{}:{}", self.in_channels, self.out_channels)?;
        }
        if !self.bias {
            write!(f, " nobias")?;
        }
        Ok(())
    }
}

pub type LayerChain = Vec<LayerSpec>;

pub fn validate_chain(chain: &[LayerSpec]) -> Result<()> {
    for (i, l) in chain.iter().enumerate() {
        l.validate().map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
    }
    for (i, pair) in chain.windows(2).enumerate() {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(Error::invalid(format!(
                "layer {} outputs {} channels but layer {} expects {}",
                i,
                pair[0].out_channels,
                i + 1,
                pair[1].in_channels
            )));
        }
    }
    Ok(())
}

/// Parses a chain description: one layer per line,
/// `<kind> <kernel> <stride> <dilation> <C | Cin:Cout> [nobias]`, with `#`
/// comments. `dw` layers take a single channel count.
pub fn parse_chain(text: &str) -> Result<LayerChain> {
    let mut chain = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(5..=6).contains(&f.len()) {
            return Err(Error::parse(lineno, format!("expected 5 or 6 fields, found {}", f.len())));
        }
        let kind: LayerKind = f[0].parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(lineno, format!("{what} must be a non-negative integer, found {s:?}")))
        };
        let kernel = num(f[1], "kernel")?;
        let stride = num(f[2], "stride")?;
        let dilation = num(f[3], "dilation")?;
        let (cin, cout) = match f[4].split_once(':') {
            Some((a, b)) => (num(a, "input channels")?, num(b, "output channels")?),
            None => {
                let c = num(f[4], "channels")?;
                (c, c)
            }
        };
        let bias = match f.get(5) {
            None => true,
            Some(&"nobias") => false,
            Some(other) => return Err(Error::parse(lineno, format!("unknown flag {other:?}"))),
        };
        let layer = match kind {
            LayerKind::Dw if cin != cout => {
                return Err(Error::parse(lineno, "dw layer takes a single channel count"))
            }
            LayerKind::Dw => LayerSpec::dw(kernel, stride, dilation, cin),
            LayerKind::Conv => LayerSpec::conv(kernel, stride, dilation, cin, cout),
            LayerKind::Pw => LayerSpec {
                kernel,
                stride,
                dilation,
                ..LayerSpec::pw(cin, cout)
            },
            LayerKind::Tconv => LayerSpec {
                dilation,
                ..LayerSpec::tconv(kernel, stride, cin, cout)
            },
        };
        let layer = LayerSpec { bias, ..layer };
        layer.validate().map_err(|e| Error::parse(lineno, e.to_string()))?;
        chain.push(layer);
    }
    validate_chain(&chain)?;
    Ok(chain)
}

pub fn format_chain(chain: &[LayerSpec]) -> String {
    chain.iter().map(|l| format!("{l}\n")).collect()
}

/// Composed receptive field and jump in input pixels:
/// `r ← r + (k - 1)·d·j`, `j ← j·s`. A transposed layer divides the jump by
/// its stride and widens the field by `(⌈k / s⌉ - 1)` new jumps.
pub fn receptive_field(chain: &[LayerSpec]) -> (f64, f64) {
    let (mut rf, mut jump) = (1.0, 1.0);
    for l in chain {
        if l.is_transpose() {
            jump /= l.stride as f64;
            rf += (l.kernel.div_ceil(l.stride) - 1) as f64 * jump;
        } else {
            rf += ((l.kernel - 1) * l.dilation) as f64 * jump;
            jump *= l.stride as f64;
        }
    }
    (rf, jump)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub params: u64,
    pub flops: u64,
    pub rf: f64,
    pub jump: f64,
    pub input: (usize, usize),
    pub output: (usize, usize, usize),
}

pub fn complexity(chain: &[LayerSpec], input: (usize, usize)) -> Result<ComplexityReport> {
    validate_chain(chain)?;
    if input.0 == 0 || input.1 == 0 {
        return Err(Error::invalid("input size must be positive"));
    }
    let (mut h, mut w) = input;
    let (mut params, mut flops) = (0u64, 0u64);
    for (i, l) in chain.iter().enumerate() {
        flops += l.flops(h, w);
        params += l.params();
        (h, w) = l.output_size(h, w);
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("layer {i} reduces the feature map to nothing")));
        }
    }
    let (rf, jump) = receptive_field(chain);
    Ok(ComplexityReport {
        params,
        flops,
        rf,
        jump,
        input,
        output: (h, w, chain.last().map_or(0, |l| l.out_channels)),
    })
}

/// LKA attention branch: depthwise 5×5, depthwise 7×7 with dilation 3, 1×1.
pub fn van_lka_chain(c: usize) -> LayerChain {
    vec![LayerSpec::dw(5, 1, 1, c), LayerSpec::dw(7, 1, 3, c), LayerSpec::pw(c, c)]
}

/// One VAN block for complexity accounting: 1×1, LKA, 1×1, then an FFN of
/// 1×1 expansion, depthwise 3×3 and 1×1 projection.
pub fn van_block_chain(c: usize, mlp_ratio: usize) -> LayerChain {
    let hidden = c * mlp_ratio;
    let mut chain = vec![LayerSpec::pw(c, c)];
    chain.extend(van_lka_chain(c));
    chain.push(LayerSpec::pw(c, c));
    chain.extend([LayerSpec::pw(c, hidden), LayerSpec::dw(3, 1, 1, hidden), LayerSpec::pw(hidden, c)]);
    chain
}

#[derive(Debug, Clone, PartialEq)]
pub struct LkaWeights {
    pub dw5: ConvSpec,
    pub dwd7: ConvSpec,
    pub pw: ConvSpec,
}

impl LkaWeights {
    pub fn zeros(c: usize) -> Self {
        let ch = van_lka_chain(c);
        LkaWeights {
            dw5: ch[0].to_conv(),
            dwd7: ch[1].to_conv(),
            pw: ch[2].to_conv(),
        }
    }

    pub fn stages(&self) -> [(&'static str, &ConvSpec); 3] {
        [("dw5", &self.dw5), ("dwd7", &self.dwd7), ("pw", &self.pw)]
    }
}

/// `attention = pw(dwd7(dw5(g)))`, output `attention ⊙ g`.
pub fn lka_forward(g: &FeatureGrid, w: &LkaWeights) -> Result<FeatureGrid> {
    let c = g.channels();
    for (name, s) in w.stages() {
        if s.transpose || s.stride != 1 || s.in_channels != c || s.out_channels != c {
            return Err(Error::invalid(format!(
                "LKA stage {name} must map {c} → {c} channels at stride 1"
            )));
        }
    }
    let a = conv2d(g, &w.dw5)?;
    let a = conv2d(&a, &w.dwd7)?;
    let a = conv2d(&a, &w.pw)?;
    if a.shape() != g.shape() {
        return Err(Error::invalid(format!(
            "LKA attention shape {:?} differs from input {:?}",
            a.shape(),
            g.shape()
        )));
    }
    a.mul(g)
}

/// Two-scale fusion: `w_b(w_a(f2) + f1)`, taking `f1` at H/2×W/2×2C and `f2`
/// at H/4×W/4×2C to H×W×C. `w_a` is a 2C→2C and `w_b` a 2C→C transposed
/// convolution, both with kernel 2 and stride 2.
pub fn lkbb_fuse(f1: &FeatureGrid, f2: &FeatureGrid, w_a: &ConvSpec, w_b: &ConvSpec) -> Result<FeatureGrid> {
    let (h1, w1, c2) = f1.shape();
    if c2 == 0 || c2 % 2 != 0 {
        return Err(Error::invalid(format!("f1 must have an even, non-zero channel count, got {c2}")));
    }
    let c = c2 / 2;
    if f2.shape() != (h1 / 2, w1 / 2, c2) || h1 % 2 != 0 || w1 % 2 != 0 {
        return Err(Error::invalid(format!(
            "f2 must be {}×{}×{} to match f1 {}×{}×{}, got {:?}",
            h1 / 2,
            w1 / 2,
            c2,
            h1,
            w1,
            c2,
            f2.shape()
        )));
    }
    let check = |name: &str, s: &ConvSpec, cin: usize, cout: usize| -> Result<()> {
        if !s.transpose || s.kernel != (2, 2) || s.stride != 2 || s.in_channels != cin || s.out_channels != cout {
            return Err(Error::invalid(format!(
                "{name} must be a {cin}→{cout} transposed convolution with kernel 2 and stride 2"
            )));
        }
        s.validate().map_err(|e| Error::invalid(format!("{name}: {e}")))
    };
    check("w_a", w_a, c2, c2)?;
    check("w_b", w_b, c2, c)?;
    let up = transpose_conv2d(f2, w_a)?;
    transpose_conv2d(&up.add(f1)?, w_b)
}
