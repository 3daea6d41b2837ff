//! Latency-aware stream simulation.
//!
//! Frames arrive every `interval_ms`. One worker processes them in order, and
//! each ground-truth instant is paired with the newest output that has
//! finished by then.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{KfConfig, Streamer};
use crate::geometry::Box3D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Constant { ms: f64 },
    PerFrameTrace { trace: Vec<f64> },
}

impl LatencyModel {
    pub fn constant(ms: f64) -> Self {
        LatencyModel::Constant { ms }
    }

    pub fn trace(trace: Vec<f64>) -> Self {
        LatencyModel::PerFrameTrace { trace }
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        let bad = |v: f64| !(v >= 0.0) || !v.is_finite();
        match self {
            LatencyModel::Constant { ms } if bad(*ms) => {
                Err(Error::invalid(format!("latency must be ≥ 0 ms, got {ms}")))
            }
            LatencyModel::PerFrameTrace { trace } => {
                if trace.len() != n_frames {
                    return Err(Error::invalid(format!(
                        "latency trace has {} entries for {} frames",
                        trace.len(),
                        n_frames
                    )));
                }
                match trace.iter().position(|&v| bad(v)) {
                    Some(k) => Err(Error::invalid(format!(
                        "latency trace entry {k} is {}",
                        trace[k]
                    ))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn at(&self, k: usize) -> f64 {
        match self {
            LatencyModel::Constant { ms } => *ms,
            LatencyModel::PerFrameTrace { trace } => trace[k],
        }
    }
}

/// Parses a latency trace: one value in ms per line. Blank lines and `#`
/// comments are skipped.
pub fn parse_latency_trace(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("expected latency in ms, found {line:?}")))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::parse(i + 1, format!("latency must be ≥ 0, got {v}")));
        }
        out.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub frame: usize,
    pub arrival: f64,
    /// `(start, finish)`, or `None` for a frame dropped as stale.
    pub processing: Option<(f64, f64)>,
}

impl FrameEvent {
    pub fn finish(&self) -> Option<f64> {
        self.processing.map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSchedule {
    pub frame_interval_ms: f64,
    pub events: Vec<FrameEvent>,
}

/// Single-worker timeline. By default every frame is queued (FIFO). With
/// `skip_stale`, a frame that arrives while the worker is still busy is
/// dropped, so the worker only picks up frames arriving at or after it
/// became free.
pub fn build_schedule(
    n_frames: usize,
    interval_ms: f64,
    lat: &LatencyModel,
    skip_stale: bool,
) -> Result<StreamSchedule> {
    if n_frames == 0 {
        return Err(Error::invalid("schedule needs at least one frame"));
    }
    if !(interval_ms > 0.0) || !interval_ms.is_finite() {
        return Err(Error::invalid(format!("frame interval must be > 0 ms, got {interval_ms}")));
    }
    lat.validate(n_frames)?;
    let mut events = Vec::with_capacity(n_frames);
    let mut free_at = f64::NEG_INFINITY;
    for k in 0..n_frames {
        let arrival = k as f64 * interval_ms;
        let processing = if skip_stale && arrival < free_at {
            None
        } else {
            let start = arrival.max(free_at);
            let finish = start + lat.at(k);
            free_at = finish;
            Some((start, finish))
        };
        events.push(FrameEvent {
            frame: k,
            arrival,
            processing,
        });
    }
    Ok(StreamSchedule {
        frame_interval_ms: interval_ms,
        events,
    })
}

impl StreamSchedule {
    pub fn n_frames(&self) -> usize {
        self.events.len()
    }

    pub fn processed(&self) -> impl Iterator<Item = &FrameEvent> {
        self.events.iter().filter(|e| e.processing.is_some())
    }
}

/// Newest processed frame with `finish ≤ t_query`.
pub fn latest_output_at(s: &StreamSchedule, t_query: f64) -> Option<usize> {
    s.events
        .iter()
        .filter(|e| e.finish().is_some_and(|f| f <= t_query))
        .map(|e| e.frame)
        .max()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamPair {
    pub gt_frame: usize,
    pub source_frame: Option<usize>,
    pub query_ms: f64,
}

/// Pairs GT instant `j` (at `j · interval`) with the newest available output.
pub fn pair_stream(s: &StreamSchedule, n_gt: usize) -> Vec<StreamPair> {
    (0..n_gt)
        .map(|j| {
            let query_ms = j as f64 * s.frame_interval_ms;
            StreamPair {
                gt_frame: j,
                source_frame: latest_output_at(s, query_ms),
                query_ms,
            }
        })
        .collect()
}

/// Resolves pairs into `(predictions, ground truth)` slices. A missing output,
/// or a source frame beyond `outputs`, yields an empty prediction set.
pub fn paired_sets<'a, P, G>(
    pairs: &[StreamPair],
    outputs: &'a [Vec<P>],
    gts: &'a [Vec<G>],
) -> Vec<(&'a [P], &'a [G])> {
    pairs
        .iter()
        .filter_map(|p| {
            let gt = gts.get(p.gt_frame)?;
            let pred = p
                .source_frame
                .and_then(|k| outputs.get(k))
                .map_or(&[][..], |v| v.as_slice());
            Some((pred, gt.as_slice()))
        })
        .collect()
}

/// Streamer baseline run over a schedule. Outputs are absorbed in frame
/// order as soon as they are available; at each GT instant the tracks are
/// forecast from the capture time of the newest absorbed frame to the query
/// time. Returns one forecast set per GT instant.
pub fn streamer_forecasts(
    s: &StreamSchedule,
    outputs: &[Vec<Box3D>],
    n_gt: usize,
    cfg: &KfConfig,
) -> Result<Vec<Vec<Box3D>>> {
    let mut tracker = Streamer::new(cfg.clone())?;
    let mut order: Vec<&FrameEvent> = s.processed().collect();
    order.sort_by(|a, b| {
        a.finish()
            .unwrap()
            .total_cmp(&b.finish().unwrap())
            .then(a.frame.cmp(&b.frame))
    });
    let mut fed = 0;
    let mut last: Option<usize> = None;
    let mut out = Vec::with_capacity(n_gt);
    for j in 0..n_gt {
        let t = j as f64 * s.frame_interval_ms;
        while fed < order.len() && order[fed].finish().unwrap() <= t {
            let k = order[fed].frame;
            let dets = outputs.get(k).map_or(&[][..], |v| v.as_slice());
            match last {
                None => tracker.start(dets),
                Some(prev) => {
                    let dt = (k - prev) as f64 * s.frame_interval_ms / 1000.0;
                    tracker.step(dets, dt)?;
                }
            }
            last = Some(k);
            fed += 1;
        }
        let sets = match last {
            None => Vec::new(),
            Some(k) => tracker.forecast((t - s.events[k].arrival) / 1000.0)?,
        };
        out.push(sets);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finishes(s: &StreamSchedule) -> Vec<Option<f64>> {
        s.events.iter().map(FrameEvent::finish).collect()
    }

    #[test]
    fn constant_latency_under_interval() {
        let s = build_schedule(10, 100.0, &LatencyModel::constant(80.0), false).unwrap();
        for (k, f) in finishes(&s).into_iter().enumerate() {
            assert_eq!(f, Some(100.0 * k as f64 + 80.0));
        }
        for k in 0..9 {
            assert_eq!(latest_output_at(&s, 100.0 * (k + 1) as f64), Some(k));
        }
        assert_eq!(latest_output_at(&s, 79.9), None);
    }

    #[test]
    fn zero_latency_is_immediate() {
        let s = build_schedule(5, 100.0, &LatencyModel::constant(0.0), false).unwrap();
        for e in &s.events {
            assert_eq!(e.finish(), Some(e.arrival));
        }
    }

    #[test]
    fn skip_stale_processes_every_other_frame() {
        let s = build_schedule(10, 100.0, &LatencyModel::constant(150.0), true).unwrap();
        let processed: Vec<usize> = s.processed().map(|e| e.frame).collect();
        assert_eq!(processed, vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn fifo_queue_grows_staleness() {
        let s = build_schedule(20, 100.0, &LatencyModel::constant(150.0), false).unwrap();
        for k in 0..19 {
            let got = latest_output_at(&s, 100.0 * (k + 1) as f64);
            assert!(got.is_none_or(|g| g < k), "k={k} got {got:?}");
        }
    }

    #[test]
    fn trace_length_mismatch() {
        let lat = LatencyModel::trace(vec![10.0; 3]);
        assert!(build_schedule(4, 100.0, &lat, false).is_err());
        assert!(build_schedule(3, 100.0, &lat, false).is_ok());
        assert!(build_schedule(0, 100.0, &lat, false).is_err());
        assert!(build_schedule(3, 0.0, &lat, false).is_err());
    }

    #[test]
    fn trace_file_parsing() {
        assert_eq!(parse_latency_trace("80.5\n# c\n\n91\n").unwrap(), vec![80.5, 91.0]);
        assert!(matches!(
            parse_latency_trace("1\nx\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_latency_trace("-3\n").is_err());
    }

    #[test]
    fn pairing() {
        let s = build_schedule(4, 100.0, &LatencyModel::constant(150.0), false).unwrap();
        let pairs = pair_stream(&s, 4);
        assert_eq!(pairs[0].source_frame, None);
        assert_eq!(pairs[1].source_frame, None);
        assert_eq!(pairs[2].source_frame, Some(0));
        let outputs = vec![vec![1], vec![2], vec![3], vec![4]];
        let gts = vec![vec!['a'], vec!['b'], vec!['c'], vec!['d']];
        let sets = paired_sets(&pairs, &outputs, &gts);
        assert!(sets[0].0.is_empty());
        assert_eq!(sets[2], (&[1][..], &['c'][..]));
    }

    #[test]
    fn next_frame_predictor_aligns_under_80ms() {
        let s = build_schedule(6, 100.0, &LatencyModel::constant(80.0), false).unwrap();
        let gts: Vec<Vec<usize>> = (0..6).map(|j| vec![j]).collect();
        let outputs: Vec<Vec<usize>> = (0..6).map(|k| vec![k + 1]).collect();
        for (p, g) in paired_sets(&pair_stream(&s, 6), &outputs, &gts).into_iter().skip(1) {
            assert_eq!(p, g);
        }
    }
}
