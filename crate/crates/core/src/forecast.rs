//! Kalman-filter forecasting baseline ("Streamer").
//!
//! Each detected object gets a constant-velocity linear Kalman filter over
//! `(x, y, z, yaw, l, w, h, vx, vy, vz, vyaw)`. Tracks are associated with new
//! detections greedily on BEV IoU, and their boxes can be forecast to any
//! query time.
//!
//! A track's velocity is initialised from its first two observations: on the
//! second hit, the position snaps to the measurement and the velocity becomes
//! the displacement over the elapsed time. From the third hit on, the filter
//! runs the standard update.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_matrix, normalize_angle, Box3D, Dims, IouKind};

pub const STATE_DIM: usize = 11;
pub const MEAS_DIM: usize = 7;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type Measurement = SVector<f64, MEAS_DIM>;

const YAW: usize = 3;
const VEL: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfConfig {
    /// Variance rate per state dimension; the process noise for a step of
    /// `dt` seconds is `diag(process_noise) · dt`.
    pub process_noise: [f64; STATE_DIM],
    pub measurement_noise: [f64; MEAS_DIM],
    pub initial_velocity_variance: f64,
    pub association_iou_threshold: f64,
    pub max_misses: u32,
    pub min_hits: u32,
}

impl Default for KfConfig {
    fn default() -> Self {
        let mut process_noise = [0.0; STATE_DIM];
        process_noise[..4].fill(0.01);
        process_noise[4..7].fill(1e-4);
        process_noise[7..].fill(1.0);
        KfConfig {
            process_noise,
            measurement_noise: [0.01; MEAS_DIM],
            initial_velocity_variance: 100.0,
            association_iou_threshold: 0.3,
            max_misses: 2,
            min_hits: 1,
        }
    }
}

impl KfConfig {
    pub fn validate(&self) -> Result<()> {
        let variances = self
            .process_noise
            .iter()
            .chain(&self.measurement_noise)
            .chain(std::iter::once(&self.initial_velocity_variance));
        if variances.into_iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("Kalman variances must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.association_iou_threshold) {
            return Err(Error::invalid("association IoU threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: i64,
    pub mean: StateVec,
    pub covariance: StateCov,
    /// Predict steps since creation.
    pub age: u32,
    /// Number of detections absorbed, including the one that spawned the track.
    pub hits: u32,
    /// Consecutive steps without a matching detection.
    pub misses: u32,
    pub time_since_update: f64,
    pub score: f64,
    pub class_id: i32,
    pub bbox2d: Option<[f64; 4]>,
    last_pose: [f64; 4],
}

pub fn measurement_of(b: &Box3D) -> Measurement {
    Measurement::from([
        b.center[0],
        b.center[1],
        b.center[2],
        b.yaw,
        b.dims.l,
        b.dims.w,
        b.dims.h,
    ])
}

impl TrackState {
    /// New track at rest, with the measurement noise as positional
    /// uncertainty and an inflated velocity variance.
    pub fn spawn(id: i64, det: &Box3D, cfg: &KfConfig) -> Self {
        let z = measurement_of(det);
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&z);
        mean[YAW] = normalize_angle(mean[YAW]);
        let mut covariance = StateCov::zeros();
        for i in 0..MEAS_DIM {
            covariance[(i, i)] = cfg.measurement_noise[i];
        }
        for i in VEL..STATE_DIM {
            covariance[(i, i)] = cfg.initial_velocity_variance;
        }
        TrackState {
            id,
            mean,
            covariance,
            age: 0,
            hits: 1,
            misses: 0,
            time_since_update: 0.0,
            score: det.score,
            class_id: det.class_id,
            bbox2d: det.bbox2d,
            last_pose: [mean[0], mean[1], mean[2], mean[YAW]],
        }
    }

    pub fn to_box(&self) -> Box3D {
        let m = &self.mean;
        Box3D {
            center: [m[0], m[1], m[2]],
            dims: Dims {
                h: m[6],
                w: m[5],
                l: m[4],
            },
            yaw: normalize_angle(m[YAW]),
            score: self.score,
            class_id: self.class_id,
            track_id: Some(self.id),
            bbox2d: self.bbox2d,
        }
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[VEL], self.mean[VEL + 1], self.mean[VEL + 2], self.mean[VEL + 3]]
    }

    /// Largest `|P - Pᵀ|` entry and smallest eigenvalue of the covariance.
    pub fn covariance_health(&self) -> (f64, f64) {
        let p = &self.covariance;
        let asym = (p - p.transpose()).abs().max();
        let sym = (p + p.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        (asym, min_eig)
    }
}

fn transition(dt: f64) -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..4 {
        f[(i, VEL + i)] = dt;
    }
    f
}

fn symmetrize(p: &StateCov) -> StateCov {
    (p + p.transpose()) * 0.5
}

/// Constant-velocity prediction: `x ← F x`, `P ← F P Fᵀ + Q·dt`.
pub fn kf_predict(s: &TrackState, dt: f64, cfg: &KfConfig) -> Result<TrackState> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("prediction step must be ≥ 0, got {dt}")));
    }
    let f = transition(dt);
    let q = StateCov::from_diagonal(&StateVec::from(cfg.process_noise)) * dt;
    let mut out = s.clone();
    out.mean = f * s.mean;
    out.mean[YAW] = normalize_angle(out.mean[YAW]);
    out.covariance = symmetrize(&(f * s.covariance * f.transpose() + q));
    Ok(out)
}

fn observation() -> SMatrix<f64, MEAS_DIM, STATE_DIM> {
    let mut h = SMatrix::<f64, MEAS_DIM, STATE_DIM>::zeros();
    for i in 0..MEAS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

/// Standard Kalman update on the seven observed dimensions, with the yaw
/// innovation wrapped and the covariance in Joseph form.
pub fn kf_update(s: &TrackState, z: &Measurement, cfg: &KfConfig) -> Result<TrackState> {
    let h = observation();
    let r = SMatrix::<f64, MEAS_DIM, MEAS_DIM>::from_diagonal(&SVector::from(cfg.measurement_noise));
    let mut innovation = z - h * s.mean;
    innovation[YAW] = normalize_angle(innovation[YAW]);
    let p_ht = s.covariance * h.transpose();
    let innov_cov = h * p_ht + r;
    let chol = innov_cov.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "innovation covariance of track {} is not positive definite",
            s.id
        ))
    })?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ with S symmetric.
    let gain = chol.solve(&p_ht.transpose()).transpose();
    let mut out = s.clone();
    out.mean = s.mean + gain * innovation;
    out.mean[YAW] = normalize_angle(out.mean[YAW]);
    let i_kh = StateCov::identity() - gain * h;
    out.covariance =
        symmetrize(&(i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose()));
    if out.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("track {} diverged", s.id)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Association {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

/// Greedy matching in descending BEV IoU. Pairs below `threshold`, with zero
/// overlap, or of different classes are never matched. Ties go to the lower
/// track index, then the lower detection index.
pub fn associate(boxes: &[Box3D], dets: &[Box3D], threshold: f64) -> Association {
    let m = iou_matrix(boxes, dets, IouKind::Bev);
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (t, b) in boxes.iter().enumerate() {
        for (d, det) in dets.iter().enumerate() {
            let v = m.get(t, d);
            if v > 0.0 && v >= threshold && b.class_id == det.class_id {
                candidates.push((v, t, d));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; boxes.len()];
    let mut det_used = vec![false; dets.len()];
    let mut matches = Vec::new();
    for (_, t, d) in candidates {
        if !track_used[t] && !det_used[d] {
            track_used[t] = true;
            det_used[d] = true;
            matches.push((t, d));
        }
    }
    matches.sort_unstable();
    Association {
        matches,
        unmatched_tracks: (0..boxes.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_dets: (0..dets.len()).filter(|&d| !det_used[d]).collect(),
    }
}

/// Multi-object tracker state for one sequence.
#[derive(Debug, Clone)]
pub struct Streamer {
    pub cfg: KfConfig,
    pub tracks: Vec<TrackState>,
    next_id: i64,
    spawned: usize,
}

impl Streamer {
    pub fn new(cfg: KfConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Streamer {
            cfg,
            tracks: Vec::new(),
            next_id: 0,
            spawned: 0,
        })
    }

    /// Total number of tracks ever created.
    pub fn spawned(&self) -> usize {
        self.spawned
    }

    /// Seeds the tracker with `dets` without predicting.
    pub fn start(&mut self, dets: &[Box3D]) {
        for d in dets {
            self.spawn(d);
        }
    }

    fn spawn(&mut self, det: &Box3D) {
        self.tracks.push(TrackState::spawn(self.next_id, det, &self.cfg));
        self.next_id += 1;
        self.spawned += 1;
    }

    /// Advances every track by `dt` seconds and absorbs a new set of detections.
    pub fn step(&mut self, dets: &[Box3D], dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("tracker step must be > 0, got {dt}")));
        }
        let predicted = self
            .tracks
            .iter()
            .map(|t| {
                let mut p = kf_predict(t, dt, &self.cfg)?;
                p.age += 1;
                p.time_since_update += dt;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        let boxes: Vec<Box3D> = predicted.iter().map(TrackState::to_box).collect();
        let assoc = associate(&boxes, dets, self.cfg.association_iou_threshold);

        let mut next = predicted;
        for &(t, d) in &assoc.matches {
            next[t] = self.absorb(&next[t], &dets[d])?;
        }
        for &t in &assoc.unmatched_tracks {
            next[t].misses += 1;
        }
        let max_misses = self.cfg.max_misses;
        self.tracks = next.into_iter().filter(|t| t.misses <= max_misses).collect();
        for &d in &assoc.unmatched_dets {
            self.spawn(&dets[d]);
        }
        Ok(())
    }

    fn absorb(&self, track: &TrackState, det: &Box3D) -> Result<TrackState> {
        let z = measurement_of(det);
        let mut t = kf_update(track, &z, &self.cfg)?;
        if track.hits == 1 && track.time_since_update > 0.0 {
            let elapsed = track.time_since_update;
            let yaw = normalize_angle(z[YAW]);
            for i in 0..3 {
                t.mean[i] = z[i];
                t.mean[VEL + i] = (z[i] - track.last_pose[i]) / elapsed;
            }
            t.mean[YAW] = yaw;
            t.mean[VEL + 3] = normalize_angle(yaw - track.last_pose[3]) / elapsed;
        }
        t.hits += 1;
        t.misses = 0;
        t.time_since_update = 0.0;
        t.score = det.score;
        t.bbox2d = det.bbox2d.or(t.bbox2d);
        t.last_pose = [t.mean[0], t.mean[1], t.mean[2], t.mean[YAW]];
        Ok(t)
    }

    pub fn forecast(&self, dt: f64) -> Result<Vec<Box3D>> {
        forecast_boxes(&self.tracks, dt, &self.cfg)
    }
}

/// Free-function form of [`Streamer::step`] for callers that keep tracks
/// themselves. New tracks get ids above every existing one.
pub fn streamer_step(
    tracks: &[TrackState],
    dets: &[Box3D],
    dt: f64,
    cfg: &KfConfig,
) -> Result<Vec<TrackState>> {
    let mut s = Streamer::new(cfg.clone())?;
    s.next_id = tracks.iter().map(|t| t.id + 1).max().unwrap_or(0);
    s.tracks = tracks.to_vec();
    s.step(dets, dt)?;
    Ok(s.tracks)
}

/// Boxes of all tracks with at least `min_hits` detections, predicted `dt`
/// seconds ahead.
pub fn forecast_boxes(tracks: &[TrackState], dt: f64, cfg: &KfConfig) -> Result<Vec<Box3D>> {
    tracks
        .iter()
        .filter(|t| t.hits >= cfg.min_hits)
        .map(|t| Ok(kf_predict(t, dt, cfg)?.to_box()))
        .collect()
}
