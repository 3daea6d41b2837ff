//! Streaming-perception toolkit for stereo 3D object detection.
//!
//! The crate covers the pieces of a latency-aware detection pipeline that can
//! be checked without a trained network:
//!
//! * [`kitti_io`]: KITTI-Tracking label/detection parsing, sequence chunking and range cropping.
//! * [`geometry`]: oriented boxes, rotated BEV and 3D IoU.
//! * [`grid`]: dense feature grids, pooling, bilinear sampling and convolutions.
//! * [`feature_flow`]: similarity volume, argmax flow, backward warping and fusion.
//! * [`motion_loss`]: velocity/acceleration consistency losses with analytic gradients.
//! * [`forecast`]: the Kalman-filter "Streamer" forecasting baseline.
//! * [`streaming`]: latency schedules and prediction/ground-truth pairing.
//! * [`metrics`]: KITTI difficulty levels, greedy matching and AP at 40 recall positions.
//! * [`lkbb`]: receptive-field and complexity accounting for large-kernel backbones.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod feature_flow;
pub mod forecast;
pub mod geometry;
pub mod grid;
pub mod kitti_io;
pub mod lkbb;
pub mod metrics;
pub mod motion_loss;
pub mod par;
pub mod streaming;

pub use error::{Error, Result};
pub use geometry::{Box3D, IouKind};
pub use grid::FeatureGrid;
