//! `flow`: feature flow between two FGRD grids, the pseudo-next map, and
//! optionally the fused map.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use streamsap::feature_flow::{compute_flow, fuse, fusion_split, summarize_flow, warp_pseudo_next, FlowField, FlowSummary};
use streamsap::grid::{read_fgrd, write_fgrd, ConvSpec, FeatureGrid};

use crate::config::{pick, require_exists, usage, ConfigFile};
use crate::report::{to_json, OutputArgs, OutputConfig};

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Feature map of the previous frame (FGRD).
    #[arg(long)]
    pub prev: PathBuf,
    /// Feature map of the current frame (FGRD).
    #[arg(long)]
    pub cur: PathBuf,
    /// Maximum displacement in low-resolution cells.
    #[arg(long)]
    pub d: Option<usize>,
    /// Downsample ratio for the matching.
    #[arg(long)]
    pub rd: Option<usize>,
    /// 1×1 reduction weights for fusion, an FGRD grid of shape
    /// `out × 1 × in`.
    #[arg(long)]
    pub fuse_weights: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Serialize)]
pub struct FlowConfig {
    pub command: &'static str,
    pub prev: PathBuf,
    pub cur: PathBuf,
    pub d: usize,
    pub rd: usize,
    pub fuse_weights: Option<PathBuf>,
    pub output: OutputConfig,
}

#[derive(Serialize)]
struct FlowJson<'a> {
    config: &'a FlowConfig,
    shape: (usize, usize, usize),
    summary: FlowSummary,
    fused_shape: Option<(usize, usize, usize)>,
}

fn load_grid(p: &Path) -> Result<FeatureGrid> {
    let f = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    read_fgrd(std::io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
}

fn grid_bytes(g: &FeatureGrid) -> Vec<u8> {
    let mut buf = Vec::new();
    write_fgrd(g, &mut buf).expect("writing to memory");
    buf
}

fn flow_grid(f: &FlowField) -> Result<FeatureGrid> {
    let data = f.flow.iter().flat_map(|v| *v).collect();
    Ok(FeatureGrid::from_vec(f.height, f.width, 2, data)?)
}

/// Reads `out × 1 × in` weights into a 1×1 convolution.
fn reduce_spec(w: &FeatureGrid, channels: usize) -> Result<ConvSpec> {
    let want = fusion_split(channels)[2];
    if w.shape() != (want, 1, channels) {
        anyhow::bail!(
            "fusion weights must be {want}×1×{channels} for {channels}-channel maps, got {:?}",
            w.shape()
        );
    }
    let mut spec = ConvSpec::zeros(channels, want, 1, 1, 1, 1, false);
    spec.weights = w.data().to_vec();
    Ok(spec)
}

pub fn run(args: FlowArgs, file: &ConfigFile) -> Result<String> {
    require_exists(&args.prev, "prev")?;
    require_exists(&args.cur, "cur")?;
    if let Some(p) = &args.fuse_weights {
        require_exists(p, "fuse-weights")?;
    }
    let cfg = FlowConfig {
        command: "flow",
        prev: args.prev,
        cur: args.cur,
        d: pick(args.d, file, "d", 3)?,
        rd: pick(args.rd, file, "rd", 2)?,
        fuse_weights: args.fuse_weights,
        output: args.output.resolve(file)?,
    };
    if cfg.rd == 0 {
        return Err(usage("rd must be at least 1"));
    }
    let f_tm1 = load_grid(&cfg.prev)?;
    let f_t = load_grid(&cfg.cur)?;
    let flow = compute_flow(&f_t, &f_tm1, cfg.d, cfg.rd)?;
    let pseudo = warp_pseudo_next(&f_t, &flow)?;
    let fused = match &cfg.fuse_weights {
        Some(p) => {
            let reduce = reduce_spec(&load_grid(p)?, f_t.channels())?;
            Some(fuse(&f_tm1, &f_t, &pseudo, &reduce)?)
        }
        None => None,
    };

    cfg.output.write("flow.fgrd", grid_bytes(&flow_grid(&flow)?))?;
    cfg.output.write("pseudo_next.fgrd", grid_bytes(&pseudo))?;
    if let Some(g) = &fused {
        cfg.output.write("fused.fgrd", grid_bytes(g))?;
    }
    let json = to_json(&FlowJson {
        config: &cfg,
        shape: f_t.shape(),
        summary: summarize_flow(&flow),
        fused_shape: fused.as_ref().map(FeatureGrid::shape),
    });
    if cfg.output.json() {
        cfg.output.write("flow.json", &json)?;
    }
    Ok(json)
}
