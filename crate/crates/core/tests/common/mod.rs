#![allow(dead_code)]

use proptest::prelude::*;
use streamsap::geometry::{Box3D, Dims};
use streamsap::grid::{ConvSpec, FeatureGrid};

/// Direct-definition convolution: zero padding `⌊eff/2⌋`, cross-correlation.
pub fn naive_conv(g: &FeatureGrid, s: &ConvSpec) -> FeatureGrid {
    let (h, w, _) = g.shape();
    let eff_h = (s.kernel.0 - 1) * s.dilation + 1;
    let eff_w = (s.kernel.1 - 1) * s.dilation + 1;
    let (ph, pw) = (eff_h / 2, eff_w / 2);
    let oh = (h + 2 * ph - eff_h) / s.stride + 1;
    let ow = (w + 2 * pw - eff_w) / s.stride + 1;
    let in_pg = s.in_channels / s.groups;
    let out_pg = s.out_channels / s.groups;
    let mut out = FeatureGrid::zeros(oh, ow, s.out_channels);
    for o in 0..s.out_channels {
        let grp = o / out_pg;
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = s.bias.as_ref().map_or(0.0, |b| b[o]);
                for i in 0..in_pg {
                    for ky in 0..s.kernel.0 {
                        for kx in 0..s.kernel.1 {
                            let y = (r * s.stride + ky * s.dilation) as i64 - ph as i64;
                            let x = (c * s.stride + kx * s.dilation) as i64 - pw as i64;
                            if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                                continue;
                            }
                            let wi = ((o * in_pg + i) * s.kernel.0 + ky) * s.kernel.1 + kx;
                            acc += s.weights[wi] * g.get(y as usize, x as usize, grp * in_pg + i);
                        }
                    }
                }
                out.set(r, c, o, acc);
            }
        }
    }
    out
}

/// Scatter-form transposed convolution.
pub fn naive_tconv(g: &FeatureGrid, s: &ConvSpec) -> FeatureGrid {
    let (h, w, _) = g.shape();
    let oh = (h - 1) * s.stride + s.kernel.0;
    let ow = (w - 1) * s.stride + s.kernel.1;
    let in_pg = s.in_channels / s.groups;
    let out_pg = s.out_channels / s.groups;
    let mut out = FeatureGrid::zeros(oh, ow, s.out_channels);
    if let Some(b) = &s.bias {
        for r in 0..oh {
            for c in 0..ow {
                for (o, &bv) in b.iter().enumerate() {
                    out.set(r, c, o, bv);
                }
            }
        }
    }
    for r in 0..h {
        for c in 0..w {
            for o in 0..s.out_channels {
                let grp = o / out_pg;
                for i in 0..in_pg {
                    let v = g.get(r, c, grp * in_pg + i);
                    for ky in 0..s.kernel.0 {
                        for kx in 0..s.kernel.1 {
                            let wi = ((o * in_pg + i) * s.kernel.0 + ky) * s.kernel.1 + kx;
                            let (y, x) = (r * s.stride + ky, c * s.stride + kx);
                            out.set(y, x, o, out.get(y, x, o) + s.weights[wi] * v);
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &FeatureGrid, b: &FeatureGrid) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn grid_strategy(h: usize, w: usize, c: usize) -> impl Strategy<Value = FeatureGrid> {
    proptest::collection::vec(-1.0f64..1.0, h * w * c)
        .prop_map(move |d| FeatureGrid::from_vec(h, w, c, d).unwrap())
}

pub fn any_grid(max_side: usize, max_c: usize) -> impl Strategy<Value = FeatureGrid> {
    (1..=max_side, 1..=max_side, 1..=max_c).prop_flat_map(|(h, w, c)| grid_strategy(h, w, c))
}

/// Fills a spec's weights and bias from a seed-like vector.
pub fn with_weights(mut s: ConvSpec, values: &[f64], bias: bool) -> ConvSpec {
    let n = s.weight_len();
    s.weights = (0..n).map(|i| values[i % values.len()] * (1.0 + (i % 7) as f64 * 0.1)).collect();
    if bias {
        s.bias = Some((0..s.out_channels).map(|o| values[o % values.len()] * 0.5).collect());
    }
    s
}

pub fn box_strategy() -> impl Strategy<Value = Box3D> {
    (
        -10.0f64..10.0,
        -1.0f64..2.0,
        0.0f64..30.0,
        0.2f64..3.0,
        0.2f64..3.0,
        0.2f64..6.0,
        -3.2f64..3.2,
    )
        .prop_map(|(x, y, z, h, w, l, yaw)| Box3D::new([x, y, z], Dims { h, w, l }, yaw))
}

/// A pair of boxes close enough to overlap often.
pub fn box_pair_strategy() -> impl Strategy<Value = (Box3D, Box3D)> {
    (box_strategy(), -2.0f64..2.0, -1.0f64..1.0, -2.0f64..2.0, box_strategy()).prop_map(
        |(a, dx, dy, dz, mut b)| {
            b.center = [a.center[0] + dx, a.center[1] + dy, a.center[2] + dz];
            (a, b)
        },
    )
}
