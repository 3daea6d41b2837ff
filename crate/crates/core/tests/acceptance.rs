//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use streamsap::feature_flow::{compute_flow, warp_pseudo_next};
use streamsap::forecast::{kf_predict, KfConfig, Streamer};
use streamsap::geometry::{iou, iou_bev, Box3D, Dims, IouKind};
use streamsap::grid::{ConvSpec, FeatureGrid};
use streamsap::kitti_io::LabeledBox;
use streamsap::lkbb::{complexity, lkbb_fuse, receptive_field, van_block_chain, van_lka_chain, LayerSpec};
use streamsap::metrics::{
    ap_r40, frame_result, pr_curve, sap_report, GtEntry, GtRole, PairedFrame,
    ReportConfig, RECALL_POSITIONS,
};
use streamsap::motion_loss::{mcl, pose_offset, velocity_loss, GtChain, Pose, DEFAULT_BETA, DEFAULT_TAU};
use streamsap::streaming::{
    build_schedule, latest_output_at, pair_stream, paired_sets, streamer_forecasts, LatencyModel,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1. IoU

fn inside(b: &Box3D, x: f64, z: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (px, pz) = (x - b.center[0], z - b.center[2]);
    let dx = c * px - s * pz;
    let dz = s * px + c * pz;
    dx.abs() <= 0.5 * b.dims.l && dz.abs() <= 0.5 * b.dims.w
}

/// Samples the smaller box uniformly and counts hits in the other one.
fn monte_carlo_iou(a: &Box3D, b: &Box3D, n: usize, seed: u64) -> f64 {
    let area = |x: &Box3D| x.dims.l * x.dims.w;
    let (small, big) = if area(a) <= area(b) { (a, b) } else { (b, a) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = small.yaw.sin_cos();
    let mut hits = 0usize;
    for _ in 0..n {
        let dx = (rng.gen::<f64>() - 0.5) * small.dims.l;
        let dz = (rng.gen::<f64>() - 0.5) * small.dims.w;
        let x = small.center[0] + c * dx + s * dz;
        let z = small.center[2] - s * dx + c * dz;
        if inside(big, x, z) {
            hits += 1;
        }
    }
    let inter = area(small) * hits as f64 / n as f64;
    inter / (area(a) + area(b) - inter)
}

fn random_box(rng: &mut ChaCha8Rng, near: [f64; 2]) -> Box3D {
    Box3D::new(
        [near[0] + rng.gen_range(-2.5..2.5), 1.0, near[1] + rng.gen_range(-2.5..2.5)],
        Dims {
            h: rng.gen_range(0.5..2.0),
            w: rng.gen_range(0.5..3.0),
            l: rng.gen_range(1.0..6.0),
        },
        rng.gen_range(-PI..PI),
    )
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Box3D, Box3D)> = (0..200)
        .map(|_| {
            let a = random_box(&mut rng, [0.0, 10.0]);
            let b = random_box(&mut rng, [a.center[0], a.center[2]]);
            (a, b)
        })
        .collect();
    let worst = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| (iou_bev(a, b) - monte_carlo_iou(a, b, 1_000_000, 1000 + i as u64)).abs())
        .reduce(|| 0.0, f64::max);
    ensure(worst <= 2e-3, || format!("max |iou - MC| = {worst:.2e} > 2e-3"))?;

    let unit = Box3D::new([0.0, 1.0, 0.0], Dims { h: 1.0, w: 1.0, l: 1.0 }, 0.0);
    let rotated = Box3D::new([0.0, 1.0, 0.0], Dims { h: 1.0, w: 1.0, l: 1.0 }, FRAC_PI_4);
    let v = iou_bev(&unit, &rotated);
    ensure((v - FRAC_1_SQRT_2).abs() <= 1e-4, || format!("45° square IoU = {v}"))?;
    Ok(format!("200 pairs, max |iou - MC| = {worst:.1e}; 45° square = {v:.6}"))
}

// ---------------------------------------------------------------- 2. flow

fn hash(r: i64, c: i64, ch: usize) -> f64 {
    let mut z = (r as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((c as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add(ch as u64 * 0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

const FLOW_SIZE: usize = 32;
const FLOW_CH: usize = 8;

/// Texture made of `block × block` constant patches, defined on all of Z².
fn texture(r: i64, c: i64, ch: usize, block: i64) -> f64 {
    hash(r.div_euclid(block), c.div_euclid(block), ch)
}

fn translated(delta: (i64, i64), block: i64) -> FeatureGrid {
    FeatureGrid::from_fn(FLOW_SIZE, FLOW_SIZE, FLOW_CH, |r, c, ch| {
        texture(r as i64 - delta.0, c as i64 - delta.1, ch, block)
    })
}

/// Checks flow and pseudo-next at the pixels selected by `check`.
fn flow_case(delta: (i64, i64), rd: usize, check: impl Fn(usize, usize) -> bool) -> Result<usize, String> {
    let block = rd as i64;
    let f_tm1 = translated((0, 0), block);
    let f_t = translated(delta, block);
    let flow = compute_flow(&f_t, &f_tm1, 3, rd).map_err(|e| e.to_string())?;
    let pseudo = warp_pseudo_next(&f_t, &flow).map_err(|e| e.to_string())?;
    let n = FLOW_SIZE as i64;
    let mut checked = 0;
    for r in 0..FLOW_SIZE {
        for c in 0..FLOW_SIZE {
            if !check(r, c) {
                continue;
            }
            let m = flow.get(r, c);
            ensure(m == [delta.0 as f64, delta.1 as f64], || {
                format!("δ={delta:?} rd={rd}: flow at ({r},{c}) = {m:?}")
            })?;
            let (sr, sc) = (r as i64 - delta.0, c as i64 - delta.1);
            if sr < 0 || sc < 0 || sr >= n || sc >= n {
                continue;
            }
            for ch in 0..FLOW_CH {
                let want = texture(r as i64 - 2 * delta.0, c as i64 - 2 * delta.1, ch, block);
                let got = pseudo.get(r, c, ch);
                ensure(got == want, || {
                    format!("δ={delta:?} rd={rd}: pseudo-next at ({r},{c},{ch}) = {got}, want {want}")
                })?;
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn criterion_2() -> Outcome {
    let d = 3usize;
    let interior = |r: usize, c: usize| (d..FLOW_SIZE - d).contains(&r) && (d..FLOW_SIZE - d).contains(&c);
    // Low-resolution support of a full-resolution pixel under align-corners
    // upsampling from 16 to 32 must lie in the low-resolution interior.
    let low = FLOW_SIZE / 2;
    let low_interior = |r: usize| {
        let num = r * (low - 1);
        let lo = num / (FLOW_SIZE - 1);
        let hi = lo + usize::from(!num.is_multiple_of(FLOW_SIZE - 1));
        lo >= d && hi < low - d
    };
    let mut full = 0;
    let mut blob = 0;
    for dr in -3i64..=3 {
        for dc in -3i64..=3 {
            full += flow_case((dr, dc), 1, interior)?;
            if dr % 2 == 0 && dc % 2 == 0 {
                blob += flow_case((dr, dc), 2, |r, c| low_interior(r) && low_interior(c))?;
            }
        }
    }
    Ok(format!(
        "49 translations exact at rd=1 ({full} pixel checks); 9 even translations exact at rd=2 ({blob} blob pixels)"
    ))
}

// ---------------------------------------------------------------- 3. MCL gradients

fn pose_box(p: Pose, track: i64) -> Box3D {
    Box3D::new([p[0], p[1], p[2]], Dims { h: 1.5, w: 1.6, l: 3.9 }, p[3]).with_track(track)
}

fn near_kink(pred: Pose, t: Pose, tm1: Pose, tm2: Pose, beta: f64) -> bool {
    let v_p = pose_offset(pred, t).0;
    let v1 = pose_offset(t, tm1).0;
    let v2 = pose_offset(tm1, tm2).0;
    (0..4).any(|i| {
        let rv = v_p[i] - v1[i];
        let ra = rv - (v1[i] - v2[i]);
        (rv.abs() - beta).abs() < 1e-3 || (ra.abs() - beta).abs() < 1e-3
    })
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let beta = DEFAULT_BETA;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 100 {
        let mut pose = |scale: f64, base: Pose| -> Pose {
            [
                base[0] + rng.gen_range(-scale..scale),
                base[1] + rng.gen_range(-scale * 0.2..scale * 0.2),
                base[2] + rng.gen_range(-scale..scale),
                base[3] + rng.gen_range(-0.6..0.6),
            ]
        };
        let tm2 = pose(5.0, [0.0, 1.0, 20.0, 0.0]);
        let tm1 = pose(1.5, tm2);
        let t = pose(1.5, tm1);
        let pred = pose(1.5, t);
        if near_kink(pred, t, tm1, tm2, beta) {
            continue;
        }
        let (bt, b1, b2) = (pose_box(t, 1), pose_box(tm1, 1), pose_box(tm2, 1));
        let chain = GtChain { t: &bt, tm1: Some(&b1), tm2: Some(&b2) };
        let eval = |p: Pose| mcl(&pose_box(p, 1), &chain, DEFAULT_TAU, beta).map(|m| m.value);
        let analytic = mcl(&pose_box(pred, 1), &chain, DEFAULT_TAU, beta).map_err(|e| e.to_string())?.grad;
        let mut numeric = [0.0; 4];
        for i in 0..4 {
            let (mut up, mut dn) = (pred, pred);
            up[i] += h;
            dn[i] -= h;
            numeric[i] = (eval(up).unwrap() - eval(dn).unwrap()) / (2.0 * h);
        }
        for i in 0..4 {
            let scale = analytic[i].abs().max(numeric[i].abs());
            let diff = (analytic[i] - numeric[i]).abs();
            worst = worst.max(if scale == 0.0 { diff } else { diff / scale });
        }
        done += 1;

        // τ = 0 collapses to the velocity term alone.
        let m0 = mcl(&pose_box(pred, 1), &chain, 0.0, beta).map_err(|e| e.to_string())?;
        let no_acc = GtChain { t: &bt, tm1: Some(&b1), tm2: None };
        let mv = mcl(&pose_box(pred, 1), &no_acc, DEFAULT_TAU, beta).map_err(|e| e.to_string())?;
        let vel = velocity_loss(&pose_offset(pose_box(pred, 1).pose(), bt.pose()), &pose_offset(bt.pose(), b1.pose()), beta)
            .map_err(|e| e.to_string())?;
        ensure(m0.value == mv.value && m0.grad == mv.grad && m0.value == vel.value, || {
            format!("τ=0 gives {:?}, velocity-only gives {:?}", m0, mv)
        })?;
    }
    ensure(worst <= 1e-5, || format!("worst relative gradient error {worst:.2e} > 1e-5"))?;
    Ok(format!("100 configurations, worst per-component relative error {worst:.1e}; τ=0 equals velocity-only exactly"))
}

// ---------------------------------------------------------------- 4. AP oracle

/// Matching re-run from scratch on one thresholded detection subset.
fn oracle_match(dets: &[(Box3D, usize)], gts: &[Box3D]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.score.total_cmp(&dets[a].0.score).then(dets[a].1.cmp(&dets[b].1)));
    let mut claimed = vec![false; gts.len()];
    let (mut tp, mut fp) = (0, 0);
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(&dets[i].0, gt, IouKind::Bev);
            if !claimed[g] && v >= 0.7 && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
    }
    (tp, fp)
}

/// AP by enumerating every distinct score threshold.
fn oracle_ap(frames: &[(Vec<Box3D>, Vec<Box3D>)]) -> Option<f64> {
    let n_gt: usize = frames.iter().map(|f| f.1.len()).sum();
    if n_gt == 0 {
        return None;
    }
    let mut scores: Vec<f64> = frames.iter().flat_map(|f| f.0.iter().map(|d| d.score)).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut ops = Vec::new();
    for &s in &scores {
        let (mut tp, mut fp) = (0, 0);
        for (dets, gts) in frames {
            let kept: Vec<(Box3D, usize)> =
                dets.iter().cloned().enumerate().filter(|(_, d)| d.score >= s).map(|(i, d)| (d, i)).collect();
            let (t, f) = oracle_match(&kept, gts);
            tp += t;
            fp += f;
        }
        ops.push((tp, tp as f64 / (tp + fp) as f64));
    }
    let mut sum = 0.0;
    for i in 1..=RECALL_POSITIONS {
        let mut best = 0.0f64;
        for &(tp, prec) in &ops {
            if tp * RECALL_POSITIONS >= i * n_gt {
                best = best.max(prec);
            }
        }
        sum += best;
    }
    Some(sum / RECALL_POSITIONS as f64)
}

fn library_ap(frames: &[(Vec<Box3D>, Vec<Box3D>)]) -> Option<f64> {
    let results: Vec<_> = frames
        .iter()
        .map(|(d, g)| {
            let entries: Vec<GtEntry> =
                g.iter().map(|b| GtEntry { box3d: b.clone(), role: GtRole::InScope }).collect();
            frame_result(d, &entries, 0.7, IouKind::Bev)
        })
        .collect();
    ap_r40(&pr_curve(&results))
}

fn car_at(x: f64, z: f64, score: f64) -> Box3D {
    Box3D::new([x, 1.5, z], Dims { h: 1.5, w: 1.6, l: 3.9 }, 0.0).with_score(score)
}

fn criterion_4() -> Outcome {
    let hand = vec![(
        vec![car_at(0.0, 10.0, 0.9), car_at(30.0, 10.0, 0.8)],
        vec![car_at(0.0, 10.0, 1.0), car_at(10.0, 10.0, 1.0)],
    )];
    let (lib, ora) = (library_ap(&hand), oracle_ap(&hand));
    ensure(lib == Some(0.5) && ora == Some(0.5), || format!("hand case: library {lib:?}, oracle {ora:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let score_levels = [0.3, 0.5, 0.7, 0.9];
    let mut instances = 0;
    for _ in 0..3000 {
        let n_frames = rng.gen_range(1..=2);
        let mut n_det_left: usize = rng.gen_range(0..=6);
        let mut n_gt_left: usize = rng.gen_range(0..=4);
        let mut frames = Vec::new();
        for f in 0..n_frames {
            let last = f + 1 == n_frames;
            let nd = if last { n_det_left } else { rng.gen_range(0..=n_det_left) };
            let ng = if last { n_gt_left } else { rng.gen_range(0..=n_gt_left) };
            n_det_left -= nd;
            n_gt_left -= ng;
            let gts: Vec<Box3D> = (0..ng).map(|k| car_at(k as f64 * 1.0, 10.0, 1.0)).collect();
            let dets: Vec<Box3D> = (0..nd)
                .map(|_| {
                    let anchor = rng.gen_range(0..ng.max(1)) as f64;
                    let jitter = [0.0, 0.1, 0.4, 1.5, 8.0][rng.gen_range(0..5)];
                    car_at(anchor + jitter, 10.0, score_levels[rng.gen_range(0..4)])
                })
                .collect();
            frames.push((dets, gts));
        }
        let (lib, ora) = (library_ap(&frames), oracle_ap(&frames));
        ensure(lib == ora, || format!("instance {instances}: library {lib:?} vs oracle {ora:?}"))?;
        instances += 1;
    }
    Ok(format!("hand case 0.5; {instances} random instances agree exactly"))
}

// ---------------------------------------------------------------- 5. pairing

fn criterion_5() -> Outcome {
    let n = 50;
    let s = build_schedule(n, 100.0, &LatencyModel::constant(80.0), false).map_err(|e| e.to_string())?;
    for j in 1..n {
        let got = latest_output_at(&s, 100.0 * j as f64);
        ensure(got == Some(j - 1), || format!("80 ms: GT {j} paired with {got:?}"))?;
    }
    let s = build_schedule(n, 100.0, &LatencyModel::constant(150.0), false).map_err(|e| e.to_string())?;
    // finish(k) = 150(k + 1), so the newest output at 100j is ⌊2j/3⌋ - 1.
    for j in 0..n {
        let want = (2 * j / 3).checked_sub(1);
        let got = latest_output_at(&s, 100.0 * j as f64);
        ensure(got == want, || format!("150 ms: GT {j} paired with {got:?}, want {want:?}"))?;
    }
    let lag_end = n - 1 - latest_output_at(&s, 100.0 * (n - 1) as f64).unwrap();
    Ok(format!("80 ms pairs j with j-1 for j in 1..{n}; 150 ms FIFO staleness reaches {lag_end} frames"))
}

// ---------------------------------------------------------------- 6. end-to-end sAP

const SCENE_FRAMES: usize = 40;

/// Two parked cars and two cars driving 2 m per frame along their heading.
fn scene_gt(frame: usize) -> Vec<LabeledBox> {
    let k = frame as f64;
    let cars = [
        (1, [-8.0, 1.5, 15.0]),
        (2, [9.0, 1.5, 32.0]),
        (3, [-40.0 + 2.0 * k, 1.5, 22.0]),
        (4, [40.0 - 2.0 * k, 1.5, 40.0]),
    ];
    cars.iter()
        .map(|&(id, center)| {
            let b = Box3D::new(center, Dims { h: 1.5, w: 1.6, l: 3.9 }, 0.0).with_track(id);
            let mut l = LabeledBox::from_box3d(&b, frame as u32, "Car");
            l.bbox2d = [100.0, 100.0, 180.0, 150.0];
            l.occlusion = 0;
            l.truncation = 0.0;
            l
        })
        .collect()
}

/// The detector reports frame `k` exactly; parked cars score higher.
fn scene_detections(frame: usize) -> Vec<LabeledBox> {
    scene_gt(frame)
        .into_iter()
        .map(|mut l| {
            l.score = Some(if l.track_id <= 2 { 0.9 } else { 0.8 });
            l
        })
        .collect()
}

fn car_cells(pairs: &[PairedFrame<'_>]) -> Result<Vec<(String, Option<f64>)>, String> {
    let cfg = ReportConfig {
        classes: vec![streamsap::metrics::ClassSpec::new("Car")],
        iou_thresholds: vec![0.7],
        ..ReportConfig::default()
    };
    let r = sap_report(pairs, &cfg).map_err(|e| e.to_string())?;
    Ok(r.cells
        .iter()
        .map(|c| (format!("{}/{}", c.kind.as_str(), c.level.as_str()), c.ap))
        .collect())
}

fn criterion_6() -> Outcome {
    let warmup = 1;
    let gts: Vec<Vec<LabeledBox>> = (0..SCENE_FRAMES).map(scene_gt).collect();
    let dets: Vec<Vec<LabeledBox>> = (0..SCENE_FRAMES).map(scene_detections).collect();

    // Lateral motion of the same size would leave no overlap at all.
    let side = Box3D::new([0.0, 1.5, 10.0], Dims { h: 1.5, w: 1.6, l: 3.9 }, 0.0);
    let mut shifted = side.clone();
    shifted.center[2] += 2.0;
    ensure(iou_bev(&side, &shifted) == 0.0, || "lateral 2 m shift overlaps".into())?;

    let run = |lat: f64| -> Result<Vec<(String, Option<f64>)>, String> {
        let s = build_schedule(SCENE_FRAMES, 100.0, &LatencyModel::constant(lat), false)
            .map_err(|e| e.to_string())?;
        let pairs = pair_stream(&s, SCENE_FRAMES);
        let sets = paired_sets(&pairs[warmup..], &dets, &gts);
        car_cells(&sets)
    };
    let zero = run(0.0)?;
    ensure(zero.iter().all(|c| c.1 == Some(1.0)), || format!("zero-latency oracle: {zero:?}"))?;
    let stale = run(80.0)?;
    ensure(stale.iter().all(|c| c.1 == Some(0.5)), || format!("stale oracle: {stale:?}"))?;

    let s = build_schedule(SCENE_FRAMES, 100.0, &LatencyModel::constant(80.0), false).map_err(|e| e.to_string())?;
    let outputs: Vec<Vec<Box3D>> = dets
        .iter()
        .map(|f| f.iter().map(|l| l.to_box3d(0).with_score(l.score.unwrap())).collect())
        .collect();
    let forecasts = streamer_forecasts(&s, &outputs, SCENE_FRAMES, &KfConfig::default()).map_err(|e| e.to_string())?;
    let forecast_labels: Vec<Vec<LabeledBox>> = forecasts
        .iter()
        .enumerate()
        .map(|(j, f)| f.iter().map(|b| LabeledBox::from_box3d(b, j as u32, "Car")).collect())
        .collect();
    let sets: Vec<PairedFrame<'_>> = (warmup..SCENE_FRAMES)
        .map(|j| (forecast_labels[j].as_slice(), gts[j].as_slice()))
        .collect();
    let streamer = car_cells(&sets)?;
    let worst = streamer.iter().filter_map(|c| c.1).fold(1.0, f64::min);
    ensure(streamer.iter().all(|c| c.1.is_some_and(|v| v > 0.9)), || format!("Streamer: {streamer:?}"))?;
    Ok(format!("zero-latency 1.0, stale 0.5, Streamer min {worst:.4} over bev/3d × easy/moderate/hard"))
}

// ---------------------------------------------------------------- 7. LKBB

fn criterion_7() -> Outcome {
    for (h, w, c) in [(16usize, 16usize, 8usize), (32, 32, 12)] {
        let f1 = FeatureGrid::zeros(h / 2, w / 2, 2 * c);
        let f2 = FeatureGrid::zeros(h / 4, w / 4, 2 * c);
        let wa = ConvSpec::zeros(2 * c, 2 * c, 2, 2, 1, 1, true);
        let wb = ConvSpec::zeros(2 * c, c, 2, 2, 1, 1, true);
        let out = lkbb_fuse(&f1, &f2, &wa, &wb).map_err(|e| e.to_string())?;
        ensure(out.shape() == (h, w, c), || format!("fusion output {:?} for {:?}", out.shape(), (h, w, c)))?;
    }
    let (rf, jump) = receptive_field(&van_lka_chain(64));
    // 1 + (5-1)·1 = 5, then 5 + (7-1)·3 = 23, and 1×1 adds nothing.
    ensure(rf == (1 + 4 + 6 * 3) as f64 && jump == 1.0, || format!("LKA rf {rf}, jump {jump}"))?;

    let (c, h, w) = (64u64, 50u64, 40u64);
    let dw = complexity(&[LayerSpec::dw(5, 1, 1, c as usize)], (h as usize, w as usize)).map_err(|e| e.to_string())?;
    ensure(dw.params == 25 * c + c && dw.flops == 2 * h * w * c * 25, || format!("dw5: {dw:?}"))?;
    let pw = complexity(&[LayerSpec::pw(c as usize, c as usize)], (h as usize, w as usize)).map_err(|e| e.to_string())?;
    ensure(pw.params == c * c + c && pw.flops == 2 * h * w * c * c, || format!("pw: {pw:?}"))?;

    let block = complexity(&van_block_chain(64, 4), (200, 176)).map_err(|e| e.to_string())?;
    Ok(format!(
        "fusion shapes ok; LKA rf 23; dw5/pw counts exact; one 64-channel block at 200×176: {:.3} M params, {:.3} GFLOPs (full-backbone figures not reproducible)",
        block.params as f64 / 1e6,
        block.flops as f64 / 1e9
    ))
}

// ---------------------------------------------------------------- 8. Kalman

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = KfConfig::default();
    let dt = 0.1;
    let mut worst: f64 = 0.0;
    let mut worst_psd: f64 = 0.0;
    for _ in 0..50 {
        let p0 = [rng.gen_range(-20.0..20.0), 1.5, rng.gen_range(10.0..40.0), rng.gen_range(-1.0..1.0)];
        // Targets drive along their heading, as the association gate expects.
        let speed = rng.gen_range(-10.0..10.0);
        let (s, c) = f64::sin_cos(p0[3]);
        let v = [c * speed, rng.gen_range(-0.5..0.5), -s * speed, rng.gen_range(-0.3..0.3)];
        let at = |k: usize| {
            let t = k as f64 * dt;
            Box3D::new(
                [p0[0] + v[0] * t, p0[1] + v[1] * t, p0[2] + v[2] * t],
                Dims { h: 1.5, w: 1.6, l: 3.9 },
                p0[3] + v[3] * t,
            )
            .with_score(0.9)
        };
        let mut tracker = Streamer::new(cfg.clone()).map_err(|e| e.to_string())?;
        tracker.start(&[at(0)]);
        for k in 1..=3 {
            for t in &tracker.tracks {
                let pred = kf_predict(t, dt, &cfg).map_err(|e| e.to_string())?;
                let (asym, min_eig) = pred.covariance_health();
                worst_psd = worst_psd.max(asym).max(-min_eig);
            }
            tracker.step(&[at(k)], dt).map_err(|e| e.to_string())?;
            for t in &tracker.tracks {
                let (asym, min_eig) = t.covariance_health();
                worst_psd = worst_psd.max(asym).max(-min_eig);
            }
        }
        ensure(tracker.tracks.len() == 1, || format!("{} tracks for one target", tracker.tracks.len()))?;
        let f = tracker.forecast(dt).map_err(|e| e.to_string())?;
        let truth = at(4);
        let err = (0..3).map(|i| (f[0].center[i] - truth.center[i]).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(err);
    }
    ensure(worst <= 1e-6, || format!("one-step forecast error {worst:.2e} m > 1e-6"))?;
    ensure(worst_psd <= 1e-9, || format!("covariance asymmetry / negative eigenvalue {worst_psd:.2e}"))?;
    Ok(format!("50 targets, worst forecast error {worst:.1e} m, covariance PSD (worst violation {worst_psd:.1e})"))
}

// Name, check, time budget in seconds (0 means none).
type Criterion = (&'static str, fn() -> Outcome, u64);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 rotated IoU vs Monte Carlo", criterion_1, 30),
        ("2 flow recovery and pseudo-next", criterion_2, 10),
        ("3 MCL gradients", criterion_3, 5),
        ("4 AP-R40 vs exhaustive oracle", criterion_4, 0),
        ("5 streaming pairing", criterion_5, 0),
        ("6 end-to-end sAP", criterion_6, 0),
        ("7 LKBB structure", criterion_7, 0),
        ("8 Kalman convergence", criterion_8, 0),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let start = Instant::now();
        let mut outcome = run();
        let took = start.elapsed();
        if budget > 0 && took > Duration::from_secs(budget) && outcome.is_ok() {
            outcome = Err(format!("took {took:.2?}, budget {budget} s"));
        }
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail}) [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why}) [{took:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
