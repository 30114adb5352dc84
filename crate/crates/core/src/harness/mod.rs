//! Experiment orchestration: single runs, IPC runs, parameter sweeps and
//! heatmap rendering.
//!
//! Configurations are plain JSON. A user document is deep-merged over the
//! serialised defaults, then `key.path=value` overrides are applied, and
//! only then is the result deserialised and validated. Partial documents
//! are therefore fine, while unknown keys are rejected.

mod experiment;
mod render;
mod sweep;

pub use experiment::{
    drive_reservoir, encode_task_input, run_experiment, run_ipc, write_experiment_outputs,
    write_ipc_outputs, Engine, ExperimentConfig, ExperimentReport, FilterConfig, IpcConfig,
    IpcReport, ReservoirDrive, SplitConfig, StochasticConfig, Task,
};
pub use render::render_heatmap;
pub use sweep::{
    read_sweep_csv, run_sweep, write_sweep_csv, AxisSpec, Metric, Spacing, SweepGrid, SweepRow,
};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Recursively overlays `patch` onto `base`; objects merge, anything else
/// replaces.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets the value at a dotted path. Intermediate keys must exist; the
/// final key may be new (unknown keys fail later, at deserialisation).
///
/// Setting `…receptor.k_on_molar` clears the derived `k_on_si`, and setting
/// `k_on_si` rewrites `k_on_molar` to match, so the pair stays consistent.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("malformed key path '{path}'")));
    }
    let (last, parents) = keys.split_last().expect("non-empty split");
    let mut node = doc;
    for key in parents {
        node = node
            .get_mut(*key)
            .filter(|n| n.is_object())
            .ok_or_else(|| Error::config(format!("unknown key '{key}' in '{path}'")))?;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("'{path}' does not name an object field")))?;
    match *last {
        "k_on_molar" => {
            obj.insert("k_on_si".into(), Value::Null);
        }
        "k_on_si" => {
            if let Some(si) = value.as_f64() {
                obj.insert("k_on_molar".into(), Value::from(crate::params::si_to_molar(si)));
            }
        }
        _ => {}
    }
    obj.insert((*last).to_string(), value);
    Ok(())
}

/// Parses `key.path=value`; the value is JSON when it parses as JSON and a
/// string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{text}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Defaults, then `document`, then `overrides`, deserialised into `T`.
pub fn resolve_config<T>(document: Option<Value>, overrides: &[String]) -> Result<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut doc = serde_json::to_value(T::default())?;
    if let Some(d) = document {
        if !d.is_object() {
            return Err(Error::config("configuration document must be a JSON object"));
        }
        merge_json(&mut doc, d);
    }
    for o in overrides {
        let (key, value) = parse_override(o)?;
        set_path(&mut doc, &key, value)?;
    }
    Ok(serde_json::from_value(doc)?)
}

/// SHA-256 of the compact JSON serialisation.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_and_set() {
        let mut doc = json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge_json(&mut doc, json!({"a": {"c": 5}}));
        assert_eq!(doc, json!({"a": {"b": 1, "c": 5}, "d": 3}));
        set_path(&mut doc, "a.b", json!(7)).unwrap();
        assert_eq!(doc["a"]["b"], 7);
        assert!(set_path(&mut doc, "x.y", json!(1)).is_err());
        assert!(set_path(&mut doc, "a..b", json!(1)).is_err());
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override("a.b=2.5").unwrap(), ("a.b".into(), json!(2.5)));
        assert_eq!(parse_override("e=causal").unwrap(), ("e".into(), json!("causal")));
        assert_eq!(parse_override("w=null").unwrap(), ("w".into(), Value::Null));
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn association_rate_pair_stays_consistent() {
        let cfg: ExperimentConfig = resolve_config(
            None,
            &["model.receptor.k_on_si=2e-18".to_string()],
        )
        .unwrap();
        let m = cfg.model.validate().unwrap();
        assert!((m.receptor.k_on() - 2e-18).abs() < 1e-30);

        let mut doc = serde_json::to_value(ExperimentConfig::default()).unwrap();
        set_path(&mut doc, "model.receptor.k_on_si", json!(1e-18)).unwrap();
        set_path(&mut doc, "model.receptor.k_on_molar", json!(1.2044e9)).unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(doc).unwrap();
        let m = cfg.model.validate().unwrap();
        assert!((m.receptor.k_on() - 2e-18).abs() < 1e-30);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = resolve_config::<ExperimentConfig>(None, &["model.channel.speed=1".into()])
            .unwrap_err();
        assert!(err.is_validation(), "{err}");
    }
}
