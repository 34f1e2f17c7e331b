//! Flat `key = value` run configuration.
//!
//! Every field of a serializable config becomes one dotted key; values are
//! JSON literals (`0.1`, `true`, `"text"`, `null`, `[..]`). A value that is
//! not valid JSON is taken as a bare string, so `mode = end_to_end` works.
//! Parsing overlays the given keys onto the defaults, and unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval_bench::EvalConfig;
use crate::model::ModelConfig;
use crate::scene::synth::SynthConfig;
use crate::training::TrainConfig;

/// Everything one CLI run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.detector.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    pub fn to_text(&self) -> String {
        to_flat_text(self).expect("config serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c: RunConfig = from_flat_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Splits `v` into dotted leaves, descending only where `shape` (the
/// defaults) has a nested table, so an optional field set to an object
/// stays one key.
fn flatten(prefix: &str, v: &Value, shape: &Value, out: &mut BTreeMap<String, Value>) {
    match (v, shape) {
        (Value::Object(map), Value::Object(sm)) if !sm.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, sm.get(k).unwrap_or(&Value::Null), out);
            }
        }
        (leaf, _) => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

/// Dotted keys and their JSON leaves, in key order.
pub fn flat_entries<S: Serialize + Default>(cfg: &S) -> Result<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    flatten("", &serde_json::to_value(cfg)?, &serde_json::to_value(S::default())?, &mut out);
    Ok(out)
}

pub fn to_flat_text<S: Serialize + Default>(cfg: &S) -> Result<String> {
    let mut s = String::new();
    for (k, v) in flat_entries(cfg)? {
        s.push_str(&format!("{k} = {v}\n"));
    }
    Ok(s)
}

fn set_path(root: &mut Value, key: &str, v: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = cur.get_mut(*p).expect("key checked against defaults");
    }
    cur[parts[parts.len() - 1]] = v;
}

/// Parses `key = value` lines (blank lines and `#` comments allowed) on top
/// of `S::default()`.
pub fn from_flat_text<S: Serialize + DeserializeOwned + Default>(text: &str) -> Result<S> {
    let defaults = serde_json::to_value(S::default())?;
    let known = flat_entries(&S::default())?;
    let mut root = defaults;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !known.contains_key(k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
        }
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        set_path(&mut root, k, value);
    }
    serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
}

/// Applies `key = value` overrides given as separate strings.
pub fn apply_overrides<S: Serialize + DeserializeOwned + Default>(cfg: &S, overrides: &[String]) -> Result<S> {
    let mut text = to_flat_text(cfg)?;
    for o in overrides {
        text.push_str(o);
        text.push('\n');
    }
    from_flat_text(&text)
}
