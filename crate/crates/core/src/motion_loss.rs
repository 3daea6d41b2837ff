//! Motion-consistency loss.
//!
//! A prediction for frame `t+1` is tied to a ground-truth track at `t` (by
//! BEV IoU) and the track's history at `t-1` and `t-2` (by track id). The loss
//! compares the predicted one-step offset with the track's last observed
//! offset (velocity term), and the change of offset with the track's last
//! change of offset (acceleration term). All residuals go through SmoothL1 and
//! are summed over the four pose components `(x, y, z, θ)`, where the angle
//! component is the sine of the angle difference.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou_matrix, Box3D, IouKind};

pub const DEFAULT_TAU: f64 = 0.8;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 1.0;

pub type Pose = [f64; 4];

/// Displacement `(Δx, Δy, Δz)` plus the sine of the angle difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseOffset(pub [f64; 4]);

impl PoseOffset {
    pub fn sub(&self, other: &PoseOffset) -> PoseOffset {
        PoseOffset(std::array::from_fn(|i| self.0[i] - other.0[i]))
    }
}

/// SmoothL1 value and derivative.
pub fn smooth_l1(x: f64, beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("SmoothL1 beta must be positive, got {beta}")));
    }
    Ok(if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    })
}

pub fn pose_offset(a: Pose, b: Pose) -> PoseOffset {
    PoseOffset([a[0] - b[0], a[1] - b[1], a[2] - b[2], (a[3] - b[3]).sin()])
}

/// Loss value and its gradient with respect to the first argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossGrad {
    pub value: f64,
    pub grad: [f64; 4],
}

fn summed_smooth_l1(residual: PoseOffset, beta: f64) -> Result<LossGrad> {
    let mut out = LossGrad {
        value: 0.0,
        grad: [0.0; 4],
    };
    for (g, &r) in out.grad.iter_mut().zip(&residual.0) {
        let (v, d) = smooth_l1(r, beta)?;
        out.value += v;
        *g = d;
    }
    Ok(out)
}

pub fn velocity_loss(v_p: &PoseOffset, v_g: &PoseOffset, beta: f64) -> Result<LossGrad> {
    summed_smooth_l1(v_p.sub(v_g), beta)
}

pub fn acceleration_loss(a_p: &PoseOffset, a_g: &PoseOffset, beta: f64) -> Result<LossGrad> {
    summed_smooth_l1(a_p.sub(a_g), beta)
}

/// Ground-truth track history for one prediction.
#[derive(Debug, Clone)]
pub struct GtChain<'a> {
    pub t: &'a Box3D,
    pub tm1: Option<&'a Box3D>,
    pub tm2: Option<&'a Box3D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MclTerms {
    pub velocity: f64,
    pub acceleration: f64,
    /// `velocity + τ · acceleration`.
    pub value: f64,
    /// Gradient of `value` with respect to the predicted `(x, y, z, θ)`.
    pub grad: [f64; 4],
    pub has_velocity: bool,
    pub has_acceleration: bool,
}

impl MclTerms {
    fn zero() -> Self {
        MclTerms {
            velocity: 0.0,
            acceleration: 0.0,
            value: 0.0,
            grad: [0.0; 4],
            has_velocity: false,
            has_acceleration: false,
        }
    }
}

/// Loss for one prediction. Without a `t-1` box there is no velocity
/// supervision and the loss is zero; without `t-2` only the velocity term
/// applies.
pub fn mcl(pred: &Box3D, chain: &GtChain<'_>, tau: f64, beta: f64) -> Result<MclTerms> {
    if !(tau >= 0.0) {
        return Err(Error::invalid(format!("tau must be non-negative, got {tau}")));
    }
    let id = chain.t.track_id;
    for b in [chain.tm1, chain.tm2].into_iter().flatten() {
        if b.track_id != id {
            return Err(Error::invalid(format!(
                "ground-truth chain mixes track ids {:?} and {:?}",
                id, b.track_id
            )));
        }
    }
    let Some(tm1) = chain.tm1 else {
        return Ok(MclTerms::zero());
    };

    let pp = pred.pose();
    let gt = chain.t.pose();
    let v_p = pose_offset(pp, gt);
    let v_g1 = pose_offset(gt, tm1.pose());
    // d(V^p)/d(pose): identity on position, cos(θp - θt) on the angle.
    let jac = [1.0, 1.0, 1.0, (pp[3] - gt[3]).cos()];

    let vel = velocity_loss(&v_p, &v_g1, beta)?;
    let mut grad = vel.grad;
    let mut terms = MclTerms {
        velocity: vel.value,
        acceleration: 0.0,
        value: vel.value,
        grad: [0.0; 4],
        has_velocity: true,
        has_acceleration: false,
    };

    if let Some(tm2) = chain.tm2 {
        let v_g2 = pose_offset(tm1.pose(), tm2.pose());
        let a_p = v_p.sub(&v_g1);
        let a_g = v_g1.sub(&v_g2);
        let acc = acceleration_loss(&a_p, &a_g, beta)?;
        terms.acceleration = acc.value;
        terms.value = vel.value + tau * acc.value;
        terms.has_acceleration = true;
        for (g, a) in grad.iter_mut().zip(acc.grad) {
            *g += tau * a;
        }
    }
    terms.grad = std::array::from_fn(|i| grad[i] * jac[i]);
    Ok(terms)
}

/// `(l_ori + λ · l_mcl) / n_pos`.
pub fn total_loss(l_ori: f64, l_mcl: f64, lambda: f64, n_pos: usize) -> Result<f64> {
    if n_pos == 0 {
        return Err(Error::invalid("no positive anchors (n_pos = 0)"));
    }
    Ok((l_ori + lambda * l_mcl) / n_pos as f64)
}

/// For each prediction, the ground-truth index with the highest IoU. Zero-IoU
/// predictions are dropped; ties go to the lower index.
pub fn match_pred_to_gt(preds: &[Box3D], gts: &[Box3D], kind: IouKind) -> Vec<(usize, usize)> {
    let m = iou_matrix(preds, gts, kind);
    (0..m.rows)
        .filter_map(|i| {
            let row = m.row(i);
            let (j, &best) = row
                .iter()
                .enumerate()
                .fold(None, |acc: Option<(usize, &f64)>, (j, v)| match acc {
                    Some((_, b)) if *v <= *b => acc,
                    _ => Some((j, v)),
                })?;
            (best > 0.0).then_some((i, j))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Correspondence {
    pub pred: usize,
    pub gt_t: usize,
    pub gt_tm1: Option<usize>,
    pub gt_tm2: Option<usize>,
}

fn by_track(gts: &[Box3D], id: Option<i64>) -> Option<usize> {
    let id = id?;
    gts.iter().position(|b| b.track_id == Some(id))
}

/// Links predictions to ground truth at `t` by IoU, then follows track ids
/// back to `t-1` and `t-2`. A `t-2` link requires a `t-1` link.
pub fn build_correspondences(
    preds: &[Box3D],
    gts_t: &[Box3D],
    gts_tm1: &[Box3D],
    gts_tm2: &[Box3D],
    kind: IouKind,
) -> Vec<Correspondence> {
    match_pred_to_gt(preds, gts_t, kind)
        .into_iter()
        .map(|(pred, gt_t)| {
            let id = gts_t[gt_t].track_id;
            let gt_tm1 = by_track(gts_tm1, id);
            let gt_tm2 = gt_tm1.and_then(|_| by_track(gts_tm2, id));
            Correspondence {
                pred,
                gt_t,
                gt_tm1,
                gt_tm2,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectLoss {
    pub correspondence: Correspondence,
    pub terms: MclTerms,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchLoss {
    pub objects: Vec<ObjectLoss>,
    /// Mean of per-object losses (0 when nothing matched).
    pub mean_mcl: f64,
    pub matched: usize,
}

/// Per-object losses and their mean, in prediction order.
pub fn mcl_batch(
    preds: &[Box3D],
    gts_t: &[Box3D],
    gts_tm1: &[Box3D],
    gts_tm2: &[Box3D],
    kind: IouKind,
    tau: f64,
    beta: f64,
) -> Result<BatchLoss> {
    let objects = build_correspondences(preds, gts_t, gts_tm1, gts_tm2, kind)
        .into_iter()
        .map(|c| {
            let chain = GtChain {
                t: &gts_t[c.gt_t],
                tm1: c.gt_tm1.map(|i| &gts_tm1[i]),
                tm2: c.gt_tm2.map(|i| &gts_tm2[i]),
            };
            Ok(ObjectLoss {
                correspondence: c,
                terms: mcl(&preds[c.pred], &chain, tau, beta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sum: f64 = objects.iter().map(|o| o.terms.value).sum();
    let matched = objects.len();
    Ok(BatchLoss {
        mean_mcl: if matched == 0 { 0.0 } else { sum / matched as f64 },
        matched,
        objects,
    })
}
