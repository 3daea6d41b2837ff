//! Oriented boxes and rotated IoU.
//!
//! The bird's-eye-view plane is `(x, z)` of the camera frame. Footprints are
//! convex quadrilaterals; intersections use Sutherland–Hodgman clipping and the
//! shoelace formula.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::par::*;

const EDGE_EPS: f64 = 1e-9;
const MIN_AREA: f64 = 1e-12;

/// Box size in meters: height, width, length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

/// Oriented 3D box in camera coordinates (x right, y down, z forward).
///
/// `center[1]` is the bottom face, so the box spans `[y - h, y]` vertically.
/// `yaw` rotates about the vertical axis; length lies along `x` at `yaw = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub dims: Dims,
    pub yaw: f64,
    pub score: f64,
    pub class_id: i32,
    pub track_id: Option<i64>,
    /// Image-plane box, when one is known. Carried through, never computed.
    pub bbox2d: Option<[f64; 4]>,
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: Dims, yaw: f64) -> Self {
        Box3D {
            center,
            dims,
            yaw: normalize_angle(yaw),
            score: 1.0,
            class_id: 0,
            track_id: None,
            bbox2d: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_track(mut self, id: i64) -> Self {
        self.track_id = Some(id);
        self
    }

    pub fn with_class(mut self, class_id: i32) -> Self {
        self.class_id = class_id;
        self
    }

    /// `(x, y, z, yaw)`.
    pub fn pose(&self) -> [f64; 4] {
        [self.center[0], self.center[1], self.center[2], self.yaw]
    }

    pub fn volume(&self) -> f64 {
        self.dims.h * self.dims.w * self.dims.l
    }

    /// Translates the box and rotates it about the vertical axis through `pivot`.
    pub fn rigid_transform(&self, shift: [f64; 3], rot: f64, pivot: [f64; 2]) -> Box3D {
        let (s, c) = rot.sin_cos();
        let dx = self.center[0] - pivot[0];
        let dz = self.center[2] - pivot[1];
        // Same rotation convention as the footprint corners.
        let x = pivot[0] + c * dx + s * dz;
        let z = pivot[1] - s * dx + c * dz;
        Box3D {
            center: [x + shift[0], self.center[1] + shift[1], z + shift[2]],
            yaw: normalize_angle(self.yaw + rot),
            ..self.clone()
        }
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IouKind::Bev => "bev",
            IouKind::ThreeD => "3d",
        }
    }
}

impl std::str::FromStr for IouKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bev" => Ok(IouKind::Bev),
            "3d" => Ok(IouKind::ThreeD),
            other => Err(crate::Error::invalid(format!("unknown IoU kind {other:?}"))),
        }
    }
}

/// Convex polygon in the `(x, z)` plane, counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct BevPolygon {
    pub vertices: Vec<[f64; 2]>,
}

impl BevPolygon {
    /// Builds a polygon, reversing the vertex order if it is clockwise.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Self {
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        BevPolygon { vertices }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let [x0, y0] = pts[i];
        let [x1, y1] = pts[(i + 1) % pts.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

pub fn bev_corners(b: &Box3D) -> BevPolygon {
    let (s, c) = b.yaw.sin_cos();
    let hl = 0.5 * b.dims.l;
    let hw = 0.5 * b.dims.w;
    let [cx, _, cz] = b.center;
    let corners = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        .iter()
        .map(|&(dx, dz)| [cx + c * dx + s * dz, cz - s * dx + c * dz])
        .collect();
    BevPolygon::new(corners)
}

/// `> 0` when `p` is left of the directed edge `a -> b`.
fn edge_side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn edge_crossing(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Clips `subject` by every edge of the convex, counter-clockwise `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        let mut d_prev = edge_side(a, b, prev);
        for &cur in &input {
            let d_cur = edge_side(a, b, cur);
            let cur_in = d_cur >= -EDGE_EPS;
            let prev_in = d_prev >= -EDGE_EPS;
            if cur_in {
                if !prev_in {
                    out.push(edge_crossing(prev, cur, d_prev, d_cur));
                }
                out.push(cur);
            } else if prev_in {
                out.push(edge_crossing(prev, cur, d_prev, d_cur));
            }
            prev = cur;
            d_prev = d_cur;
        }
    }
    out
}

pub fn polygon_intersection_area(a: &BevPolygon, b: &BevPolygon) -> f64 {
    if a.vertices.len() < 3 || b.vertices.len() < 3 || a.area() < MIN_AREA || b.area() < MIN_AREA
    {
        return 0.0;
    }
    signed_area(&clip_polygon(&a.vertices, &b.vertices)).max(0.0)
}

/// `inter / union`, where containment of one operand in the other yields the
/// larger operand as the union without cancellation.
fn ratio(inter: f64, size_a: f64, size_b: f64) -> f64 {
    if size_a < MIN_AREA || size_b < MIN_AREA || inter <= 0.0 {
        return 0.0;
    }
    let union = if inter >= size_a.min(size_b) {
        size_a.max(size_b)
    } else {
        size_a + size_b - inter
    };
    (inter / union).clamp(0.0, 1.0)
}

fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let top = (a.center[1] - a.dims.h).max(b.center[1] - b.dims.h);
    let bottom = a.center[1].min(b.center[1]);
    (bottom - top).max(0.0)
}

/// Precomputed footprint for repeated IoU queries.
struct Footprint {
    poly: BevPolygon,
    area: f64,
}

impl Footprint {
    fn of(b: &Box3D) -> Self {
        Footprint {
            poly: bev_corners(b),
            area: b.dims.l * b.dims.w,
        }
    }
}

fn polygon_contains(outer: &BevPolygon, inner: &BevPolygon) -> bool {
    let v = &outer.vertices;
    inner.vertices.iter().all(|&p| {
        (0..v.len()).all(|i| edge_side(v[i], v[(i + 1) % v.len()], p) >= -EDGE_EPS)
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Inside {
    A,
    B,
    Neither,
}

fn iou_with(a: &Box3D, fa: &Footprint, b: &Box3D, fb: &Footprint, kind: IouKind) -> f64 {
    // Containment short-circuits clipping so nested boxes give exact ratios.
    let (inter, inside) = if polygon_contains(&fb.poly, &fa.poly) {
        (fa.area, Inside::A)
    } else if polygon_contains(&fa.poly, &fb.poly) {
        (fb.area, Inside::B)
    } else {
        (polygon_intersection_area(&fa.poly, &fb.poly), Inside::Neither)
    };
    match kind {
        IouKind::Bev => ratio(inter, fa.area, fb.area),
        IouKind::ThreeD => {
            let (va, vb) = (a.volume(), b.volume());
            let within = |p: &Box3D, q: &Box3D| {
                p.center[1] <= q.center[1] && p.center[1] - p.dims.h >= q.center[1] - q.dims.h
            };
            let inter3d = match inside {
                Inside::A if within(a, b) => va,
                Inside::B if within(b, a) => vb,
                _ => inter * vertical_overlap(a, b),
            };
            ratio(inter3d, va, vb)
        }
    }
}

pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    iou_with(a, &Footprint::of(a), b, &Footprint::of(b), IouKind::Bev)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    iou_with(a, &Footprint::of(a), b, &Footprint::of(b), IouKind::ThreeD)
}

pub fn iou(a: &Box3D, b: &Box3D, kind: IouKind) -> f64 {
    match kind {
        IouKind::Bev => iou_bev(a, b),
        IouKind::ThreeD => iou_3d(a, b),
    }
}

/// Dense row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl IouMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn iou_matrix(rows: &[Box3D], cols: &[Box3D], kind: IouKind) -> IouMatrix {
    let fr: Vec<Footprint> = rows.iter().map(Footprint::of).collect();
    let fc: Vec<Footprint> = cols.iter().map(Footprint::of).collect();
    let mut data = vec![0.0; rows.len() * cols.len()];
    if !cols.is_empty() {
        data.par_chunks_mut(cols.len())
            .enumerate()
            .for_each(|(i, out)| {
                for (j, cell) in out.iter_mut().enumerate() {
                    *cell = iou_with(&rows[i], &fr[i], &cols[j], &fc[j], kind);
                }
            });
    }
    IouMatrix {
        rows: rows.len(),
        cols: cols.len(),
        data,
    }
}
