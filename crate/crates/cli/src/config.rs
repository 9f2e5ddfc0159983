//! Layered pipeline configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use dodt::PipelineConfig;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Association {
    Feature,
    CenterDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Motion {
    ConstantAcceleration,
    ConstantVelocity,
}

/// Flags shared by every verb that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with any subset of the pipeline configuration.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub enable_udepth: Option<bool>,
    #[arg(long)]
    pub enable_dbscan: Option<bool>,
    #[arg(long)]
    pub enable_madlift: Option<bool>,
    #[arg(long)]
    pub enable_ensemble: Option<bool>,
    #[arg(long)]
    pub parallel_detectors: Option<bool>,
    /// U-depth bin size, meters.
    #[arg(long)]
    pub udepth_bin: Option<f64>,
    #[arg(long)]
    pub dbscan_eps: Option<f64>,
    #[arg(long)]
    pub dbscan_min_pts: Option<usize>,
    #[arg(long)]
    pub ensemble_iou: Option<f64>,
    /// MAD multiplier for lifting 2D boxes.
    #[arg(long)]
    pub mad_n: Option<f64>,
    #[arg(long, value_enum)]
    pub association: Option<Association>,
    #[arg(long, value_enum)]
    pub motion: Option<Motion>,
    #[arg(long)]
    pub t_sim: Option<f64>,
    #[arg(long)]
    pub t_vel: Option<f64>,
    #[arg(long)]
    pub t_vote: Option<f64>,
    #[arg(long)]
    pub t_ratio: Option<f64>,
    #[arg(long)]
    pub k_back: Option<usize>,
    #[arg(long)]
    pub visibility_filter: Option<bool>,
    #[arg(long)]
    pub match_iou: Option<f64>,
    /// Any field by dotted path, e.g. `tracker.birth_hits=2`. Repeatable;
    /// applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut root = Value::try_from(PipelineConfig::default())?;
        let mut keys = Vec::new();
        if let Some(path) = &self.config {
            let file = Value::Table(read_table(path)?);
            leaf_paths(&file, String::new(), &mut keys);
            merge(&mut root, file);
        }
        for (key, value) in self.named_overrides() {
            set_path(&mut root, key, value)?;
        }
        for item in &self.set {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {item:?}"))?;
            set_path(&mut root, key.trim(), parse_value(raw.trim()))?;
            keys.push(key.trim().to_string());
        }
        let cfg: PipelineConfig = root.try_into().context("invalid pipeline configuration")?;
        // unknown keys are dropped by deserialization, so look for them in the result
        let resolved = Value::try_from(&cfg)?;
        if let Some(key) = keys.iter().find(|k| lookup(&resolved, k).is_none()) {
            bail!("unknown configuration key {key}");
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn named_overrides(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let mut push = |key: &'static str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((key, v));
            }
        };
        push("enable_udepth", self.enable_udepth.map(Value::Boolean));
        push("enable_dbscan", self.enable_dbscan.map(Value::Boolean));
        push("enable_madlift", self.enable_madlift.map(Value::Boolean));
        push("enable_ensemble", self.enable_ensemble.map(Value::Boolean));
        push("parallel_detectors", self.parallel_detectors.map(Value::Boolean));
        push("udepth.bin_size", self.udepth_bin.map(Value::Float));
        push("dbscan.eps", self.dbscan_eps.map(Value::Float));
        push("dbscan.min_pts", self.dbscan_min_pts.map(|v| Value::Integer(v as i64)));
        push("ensemble.iou_threshold", self.ensemble_iou.map(Value::Float));
        push("madlift.n", self.mad_n.map(Value::Float));
        push(
            "tracker.association",
            self.association.map(|a| {
                Value::String(match a {
                    Association::Feature => "feature".into(),
                    Association::CenterDistance => "center_distance".into(),
                })
            }),
        );
        push(
            "tracker.motion",
            self.motion.map(|m| {
                Value::String(match m {
                    Motion::ConstantAcceleration => "constant_acceleration".into(),
                    Motion::ConstantVelocity => "constant_velocity".into(),
                })
            }),
        );
        push("tracker.t_sim", self.t_sim.map(Value::Float));
        push("identify.t_vel", self.t_vel.map(Value::Float));
        push("identify.t_vote", self.t_vote.map(Value::Float));
        push("identify.t_ratio", self.t_ratio.map(Value::Float));
        push("identify.k_back", self.k_back.map(|v| Value::Integer(v as i64)));
        push("identify.visibility_filter", self.visibility_filter.map(Value::Boolean));
        push("eval.match_iou", self.match_iou.map(Value::Float));
        out
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Overlays `top` onto `base`, descending into tables.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("{key}: {} is not a table", parts[..i].join(".")))?;
        if i + 1 == parts.len() {
            let value = match table.get(*part) {
                Some(existing) => coerce(existing, value),
                None => value,
            };
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .ok_or_else(|| anyhow!("unknown configuration key {key}"))?;
    }
    bail!("empty configuration key")
}

fn leaf_paths(node: &Value, prefix: String, out: &mut Vec<String>) {
    match node.as_table() {
        Some(t) => {
            for (k, v) in t {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_paths(v, path, out);
            }
        }
        None => out.push(prefix),
    }
}

fn lookup<'a>(root: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(root, |node, part| node.as_table()?.get(part))
}

/// Integers written where a float is expected stay floats.
fn coerce(existing: &Value, value: Value) -> Value {
    match (existing, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (_, v) => v,
    }
}

/// A TOML literal when it parses as one, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
