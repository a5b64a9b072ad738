//! Flat `key = value` configuration files.
//!
//! Every key names one field of the model, training, graph or split
//! settings. Values are parsed according to the type of the default value
//! the key overrides, so the accepted key list is exactly the set of
//! serialized field names.

use anyhow::{anyhow, bail, Context, Result};
use dagcn::data::{SyntheticSpec, DEFAULT_SPLIT_RATIOS};
use dagcn::{GraphOptions, ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::UserError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub test_ratio: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        let (train_ratio, valid_ratio, test_ratio) = DEFAULT_SPLIT_RATIOS;
        SplitRatios {
            train_ratio,
            valid_ratio,
            test_ratio,
        }
    }
}

impl SplitRatios {
    pub fn tuple(&self) -> (f64, f64, f64) {
        (self.train_ratio, self.valid_ratio, self.test_ratio)
    }
}

/// Everything a training run needs, fully resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub graph: GraphOptions,
    pub split: SplitRatios,
}

/// Parses `key = value` lines. `#` starts a comment line.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            UserError::new(format!("config line {}: expected key = value", no + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(UserError::new(format!("config line {}: empty key", no + 1)).into());
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

pub fn read_kv_file(path: &std::path::Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_kv(&text).with_context(|| format!("in {}", path.display()))
}

fn section_map<T: Serialize>(value: &T) -> Map<String, Value> {
    match serde_json::to_value(value).expect("config serializes") {
        Value::Object(m) => m,
        _ => unreachable!("config sections are structs"),
    }
}

fn parse_like(key: &str, old: &Value, raw: &str) -> Result<Value> {
    let bad = || UserError::new(format!("bad value for {key}: '{raw}'"));
    Ok(match old {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_f64() => {
            let x: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .ok_or_else(bad)?
        }
        Value::Number(_) => {
            if let Ok(u) = raw.parse::<u64>() {
                Value::from(u)
            } else {
                let x: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(x)
                    .map(Value::Number)
                    .ok_or_else(bad)?
            }
        }
        Value::String(_) => Value::String(raw.to_owned()),
        _ => return Err(bad().into()),
    })
}

fn rebuild<T: DeserializeOwned>(name: &str, map: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map))
        .map_err(|e| UserError::new(format!("{name} settings: {e}")).into())
}

impl RunConfig {
    /// Applies overrides in order; later entries win. `d_prime` follows `d`
    /// unless it is set explicitly.
    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        let mut entries = entries.to_vec();
        if !entries.iter().any(|(k, _)| k == "d_prime") {
            if let Some((_, d)) = entries.iter().rev().find(|(k, _)| k == "d") {
                entries.push(("d_prime".into(), d.clone()));
            }
        }
        let mut sections = [
            section_map(&self.model),
            section_map(&self.train),
            section_map(&self.graph),
            section_map(&self.split),
        ];
        for (k, v) in &entries {
            let section = sections
                .iter_mut()
                .find(|s| s.contains_key(k))
                .ok_or_else(|| UserError::new(format!("unknown config key '{k}'")))?;
            let new = parse_like(k, &section[k], v)?;
            section.insert(k.clone(), new);
        }
        let [m, t, g, s] = sections;
        self.model = rebuild("model", m)?;
        self.train = rebuild("training", t)?;
        self.graph = rebuild("graph", g)?;
        self.split = rebuild("split", s)?;
        Ok(())
    }

    #[cfg(test)]
    pub fn keys() -> Vec<String> {
        let c = RunConfig::default();
        let mut keys = Vec::new();
        keys.extend(section_map(&c.model).keys().cloned());
        keys.extend(section_map(&c.train).keys().cloned());
        keys.extend(section_map(&c.graph).keys().cloned());
        keys.extend(section_map(&c.split).keys().cloned());
        keys
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.graph.min_edge_count < 1 {
            bail!(UserError::new("min_edge_count must be at least 1"));
        }
        Ok(())
    }
}

pub fn synthetic_spec(entries: &[(String, String)]) -> Result<SyntheticSpec> {
    let mut map = section_map(&SyntheticSpec::default());
    for (k, v) in entries {
        let old = map
            .get(k)
            .ok_or_else(|| anyhow!(UserError::new(format!("unknown spec key '{k}'"))))?;
        let new = parse_like(k, old, v)?;
        map.insert(k.clone(), new);
    }
    rebuild("synthetic", map)
}
