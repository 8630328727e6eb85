//! Run configuration: one JSON document plus `key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use netexp::estimate::{Contrast, WlsSpec};
use netexp::exposure::ExposureMapping;
use netexp::io::DesignSpec;
use netexp::simulate::SimConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Exit status for configuration problems found before any library call.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

/// Either `"auto"` or explicit bandwidths (one or a list).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    #[default]
    #[serde(with = "auto_tag")]
    Auto,
    One(u32),
    Grid(Vec<u32>),
}

mod auto_tag {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected \"auto\", got {s:?}"
            )))
        }
    }
}

/// Contrast rows, optionally with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContrastSpec {
    Row(Vec<f64>),
    Rows(Vec<Vec<f64>>),
    Labelled(Contrast),
}

impl ContrastSpec {
    pub fn resolve(&self) -> netexp::Result<Contrast> {
        let unlabelled = |rows: Vec<Vec<f64>>| {
            let labels = (0..rows.len()).map(|r| format!("G{}", r + 1)).collect();
            Contrast::new(rows, labels)
        };
        match self {
            ContrastSpec::Row(r) => unlabelled(vec![r.clone()]),
            ContrastSpec::Rows(r) => unlabelled(r.clone()),
            ContrastSpec::Labelled(c) => Contrast::new(c.rows.clone(), c.labels.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityChoice {
    #[default]
    Auto,
    MonteCarlo,
}

/// `"1:10"` or an explicit list of bandwidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range(String),
    List(Vec<u32>),
}

impl GridSpec {
    pub fn resolve(&self) -> Result<Vec<u32>> {
        match self {
            GridSpec::List(v) => Ok(v.clone()),
            GridSpec::Range(s) => parse_grid(s),
        }
    }
}

pub fn parse_grid(s: &str) -> Result<Vec<u32>> {
    let bad = || config_err(format!("grid {s:?} must look like \"1:10\" or \"0,1,3\""));
    if let Some((a, b)) = s.split_once(':') {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        Ok((a..=b).collect())
    } else {
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub edges: Option<PathBuf>,
    #[serde(default)]
    pub nodes: Option<PathBuf>,
    #[serde(default)]
    pub directed: bool,
    #[serde(default)]
    pub exposure: Option<ExposureMapping>,
    #[serde(default)]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub contrast: Option<ContrastSpec>,
    #[serde(default)]
    pub bandwidth: BandwidthSpec,
    #[serde(default)]
    pub specs: Option<Vec<WlsSpec>>,
    #[serde(default)]
    pub propensity: PropensityChoice,
    #[serde(default)]
    pub mc_draws: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub size_cap: Option<usize>,
}

fn default_out() -> PathBuf {
    PathBuf::from("netexp-out")
}

impl RunConfig {
    pub fn require<'a, T>(&self, v: &'a Option<T>, key: &str) -> Result<&'a T> {
        v.as_ref()
            .ok_or_else(|| config_err(format!("config is missing {key:?}")))
    }

    pub fn require_seed(&self, why: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| config_err(format!("{why} is stochastic; set \"seed\" or pass --seed")))
    }

    pub fn specs(&self) -> Vec<WlsSpec> {
        self.specs.clone().unwrap_or_else(|| {
            vec![
                WlsSpec::Unadjusted,
                WlsSpec::Additive,
                WlsSpec::FullyInteracted,
            ]
        })
    }
}

/// Reads a config file into a JSON object, resolving `edges` and `nodes`
/// against the file's directory.
pub fn load_document(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("config {} is not valid JSON: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| config_err(format!("config {} must be a JSON object", path.display())))?;
    for key in ["edges", "nodes"] {
        if let Some(Value::String(p)) = obj.get(key) {
            if Path::new(p).is_relative() {
                let joined = base.join(p).display().to_string();
                obj.insert(key.into(), Value::String(joined));
            }
        }
    }
    Ok(doc)
}

/// Sets `key` (dot-separated path) to `value`, parsed as JSON when it parses
/// and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} must be key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(doc, key, value)
}

pub fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(ConfigError(format!(
            "override key {key:?} has an empty segment"
        )));
    }
    let mut cur = doc;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| {
                    config_err(format!("override key {key:?}: {part:?} indexes an array"))
                })?;
                let len = items.len();
                let slot = items.get_mut(i).ok_or_else(|| {
                    config_err(format!("override key {key:?}: index {i} out of {len}"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(config_err(format!(
                    "override key {key:?} descends into a scalar at {part:?}"
                )))
            }
        };
    }
    unreachable!("loop returns on the last segment")
}

pub fn parse(doc: Value) -> Result<RunConfig> {
    serde_json::from_value(doc).map_err(|e| config_err(format!("invalid config: {e}")))
}

/// Expands `preset` into `simulation` when no explicit simulation is given.
pub fn expand_preset(doc: &mut Value) -> Result<()> {
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| anyhow!(ConfigError("config must be a JSON object".into())))?;
    if obj.contains_key("simulation") {
        return Ok(());
    }
    let Some(name) = obj
        .get("preset")
        .and_then(Value::as_str)
        .map(str::to_string)
    else {
        return Ok(());
    };
    let seed = obj.get("seed").and_then(Value::as_u64).unwrap_or(0);
    let cfg = netexp::simulate::preset(&name, seed).map_err(|e| config_err(e.to_string()))?;
    obj.insert(
        "simulation".into(),
        serde_json::to_value(cfg).context("serializing preset")?,
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides() {
        let mut doc = json!({"a": {"b": 1}, "list": [1, 2]});
        apply_override(&mut doc, "a.b=2.5").unwrap();
        apply_override(&mut doc, "a.c=text").unwrap();
        apply_override(&mut doc, "list.1=[3]").unwrap();
        apply_override(&mut doc, "new.deep=true").unwrap();
        assert_eq!(
            doc,
            json!({"a": {"b": 2.5, "c": "text"}, "list": [1, [3]], "new": {"deep": true}})
        );
        assert!(apply_override(&mut doc, "a.b.c=1").is_err());
        assert!(apply_override(&mut doc, "novalue").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1:4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_grid("0, 2").unwrap(), vec![0, 2]);
        assert!(parse_grid("4:1").is_err());
    }

    #[test]
    fn bandwidth_forms() {
        let c = parse(json!({"bandwidth": "auto"})).unwrap();
        assert_eq!(c.bandwidth, BandwidthSpec::Auto);
        let c = parse(json!({"bandwidth": [0, 1]})).unwrap();
        assert_eq!(c.bandwidth, BandwidthSpec::Grid(vec![0, 1]));
        assert!(parse(json!({"bandwidth": "wide"})).is_err());
        assert!(parse(json!({"unknown": 1})).is_err());
    }

    #[test]
    fn contrast_forms() {
        let c: ContrastSpec = serde_json::from_value(json!([-1.0, 1.0])).unwrap();
        assert_eq!(c.resolve().unwrap().rows, vec![vec![-1.0, 1.0]]);
        let c: ContrastSpec =
            serde_json::from_value(json!({"rows": [[1, 0]], "labels": ["mu0"]})).unwrap();
        assert_eq!(c.resolve().unwrap().labels, vec!["mu0"]);
    }
}
