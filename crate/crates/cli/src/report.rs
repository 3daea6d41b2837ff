//! Report files. Everything written here is a pure function of the inputs and
//! the resolved config, so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use streamsap::metrics::{ClassSpec, DifficultyLevel, ReportConfig, SapReport};
use streamsap::IouKind;

use crate::config::{pick, pick_list, usage, ConfigFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Directory for report files. Without it only stdout is written.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Which report files to write.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputConfig {
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl OutputArgs {
    pub fn resolve(self, file: &ConfigFile) -> Result<OutputConfig> {
        Ok(OutputConfig {
            out: self.out,
            format: pick(self.format, file, "format", Format::Both)?,
        })
    }
}

impl OutputConfig {
    pub fn csv(&self) -> bool {
        self.format != Format::Json
    }

    pub fn json(&self) -> bool {
        self.format != Format::Csv
    }

    /// Writes `name` under the output directory, creating it as needed.
    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let Some(dir) = &self.out else { return Ok(()) };
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.out.as_deref()
    }
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Classes to evaluate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// IoU thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub iou_thresholds: Option<Vec<f64>>,
    /// IoU kinds: `bev`, `3d`.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<IouKind>>,
    /// Difficulty levels: `easy`, `moderate`, `hard`.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<DifficultyLevel>>,
}

impl MetricArgs {
    pub fn resolve(self, file: &ConfigFile) -> Result<ReportConfig> {
        let def = ReportConfig::default();
        let names = pick_list(
            self.classes,
            file,
            "classes",
            def.classes.iter().map(|c| c.name.clone()).collect(),
        )?;
        let cfg = ReportConfig {
            classes: names.iter().map(|n| ClassSpec::new(n)).collect(),
            iou_thresholds: pick_list(self.iou_thresholds, file, "iou-thresholds", def.iou_thresholds)?,
            kinds: pick_list(self.kinds, file, "kinds", def.kinds)?,
            levels: pick_list(self.levels, file, "levels", def.levels)?,
            difficulty: def.difficulty,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// `# key = value` lines for every leaf of the config, in key order.
pub fn config_comment(config: &impl Serialize) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, out);
                }
            }
            other => {
                let _ = writeln!(out, "# {prefix} = {other}");
            }
        }
    }
    let mut s = String::new();
    walk("", &serde_json::to_value(config).expect("config serializes"), &mut s);
    s
}

pub fn to_json(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `<stem>.csv`, `<stem>.json` and `<stem>_pr.dat` for a sAP report.
pub fn write_sap(out: &OutputConfig, stem: &str, config: &impl Serialize, json: &impl Serialize, report: &SapReport) -> Result<()> {
    if out.csv() {
        out.write(&format!("{stem}.csv"), config_comment(config) + &report.to_csv())?;
        out.write(&format!("{stem}_pr.dat"), config_comment(config) + &report.pr_dump())?;
    }
    if out.json() {
        out.write(&format!("{stem}.json"), to_json(json))?;
    }
    Ok(())
}
