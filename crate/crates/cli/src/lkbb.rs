//! `lkbb`: parameter, FLOP and receptive-field accounting for a layer chain.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use streamsap::lkbb::{complexity, format_chain, parse_chain, van_block_chain, van_lka_chain, ComplexityReport, LayerChain};

use crate::config::{pick, read_text, require_exists, usage, ConfigFile};
use crate::report::{config_comment, to_json, OutputArgs, OutputConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Depthwise 5×5, depthwise 7×7 dilation 3, 1×1.
    Lka,
    /// One VAN block: 1×1, LKA, 1×1 and the 1×1 / dw 3×3 / 1×1 FFN.
    VanBlock,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Preset as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct LkbbArgs {
    /// Chain description, one layer per line:
    /// `<conv|dw|pw|tconv> <kernel> <stride> <dilation> <C|Cin:Cout> [nobias]`.
    #[arg(long, conflicts_with = "preset")]
    pub chain: Option<PathBuf>,
    /// Built-in chain instead of a file.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Channels for a preset.
    #[arg(long)]
    pub channels: Option<usize>,
    /// FFN expansion ratio for `van-block`.
    #[arg(long)]
    pub mlp_ratio: Option<usize>,
    /// Input height.
    #[arg(long)]
    pub height: Option<usize>,
    /// Input width.
    #[arg(long)]
    pub width: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Serialize)]
pub struct LkbbConfig {
    pub command: &'static str,
    pub chain: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub channels: usize,
    pub mlp_ratio: usize,
    pub height: usize,
    pub width: usize,
    pub output: OutputConfig,
}

#[derive(Debug, Serialize)]
struct LayerRow {
    index: usize,
    layer: String,
    input: (usize, usize),
    output: (usize, usize),
    params: u64,
    flops: u64,
}

#[derive(Serialize)]
struct LkbbJson<'a> {
    config: &'a LkbbConfig,
    layers: &'a [LayerRow],
    total: &'a ComplexityReport,
}

fn layer_rows(chain: &LayerChain, (mut h, mut w): (usize, usize)) -> Vec<LayerRow> {
    chain
        .iter()
        .enumerate()
        .map(|(index, l)| {
            let out = l.output_size(h, w);
            let row = LayerRow {
                index,
                layer: l.to_string(),
                input: (h, w),
                output: out,
                params: l.params(),
                flops: l.flops(h, w),
            };
            (h, w) = out;
            row
        })
        .collect()
}

pub fn run(args: LkbbArgs, file: &ConfigFile) -> Result<String> {
    let (chain_flag, preset_flag) = match (args.chain, args.preset) {
        (None, None) => (file.get::<PathBuf>("chain")?, file.get::<Preset>("preset")?),
        flags => flags,
    };
    let cfg = LkbbConfig {
        command: "lkbb",
        chain: chain_flag,
        preset: preset_flag,
        channels: pick(args.channels, file, "channels", 64)?,
        mlp_ratio: pick(args.mlp_ratio, file, "mlp-ratio", 4)?,
        height: pick(args.height, file, "height", 200)?,
        width: pick(args.width, file, "width", 176)?,
        output: args.output.resolve(file)?,
    };
    if cfg.height == 0 || cfg.width == 0 {
        return Err(usage("height and width must be positive"));
    }
    let chain = match (&cfg.chain, cfg.preset) {
        (Some(_), Some(_)) => return Err(usage("give either chain or preset, not both")),
        (Some(p), None) => {
            require_exists(p, "chain")?;
            parse_chain(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        (None, Some(Preset::Lka)) => van_lka_chain(cfg.channels),
        (None, Some(Preset::VanBlock)) => van_block_chain(cfg.channels, cfg.mlp_ratio),
        (None, None) => return Err(usage("a chain is required: --chain FILE or --preset NAME")),
    };
    if chain.is_empty() {
        anyhow::bail!("the chain has no layers");
    }
    let input = (cfg.height, cfg.width);
    let total = complexity(&chain, input)?;
    let rows = layer_rows(&chain, input);

    if cfg.output.csv() {
        let mut csv = config_comment(&cfg);
        csv.push_str("index,layer,in_h,in_w,out_h,out_w,params,flops\n");
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.index, r.layer, r.input.0, r.input.1, r.output.0, r.output.1, r.params, r.flops
            );
        }
        cfg.output.write("lkbb.csv", csv)?;
        cfg.output.write("chain.txt", format_chain(&chain))?;
    }
    if cfg.output.json() {
        cfg.output.write("lkbb.json", to_json(&LkbbJson { config: &cfg, layers: &rows, total: &total }))?;
    }

    let mut s = String::new();
    for r in &rows {
        let _ = writeln!(s, "{:>3}  {:<28} {:>10} params {:>14} flops", r.index, r.layer, r.params, r.flops);
    }
    let _ = writeln!(
        s,
        "params {} ({:.3} M)\nflops {} ({:.3} GFLOPs)\nrf {}\njump {}\noutput {}x{}x{}",
        total.params,
        total.params as f64 / 1e6,
        total.flops,
        total.flops as f64 / 1e9,
        total.rf,
        total.jump,
        total.output.0,
        total.output.1,
        total.output.2
    );
    Ok(s)
}
