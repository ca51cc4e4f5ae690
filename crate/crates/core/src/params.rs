//! Opaque key-value maps used for backend configs, post-step params and
//! adapter params.

use std::collections::BTreeMap;

use serde_yaml::{Mapping, Value};

pub type Params = BTreeMap<String, Value>;

/// Recursively sorts mapping keys so equal maps serialize identically.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Mapping(m) => {
            let mut entries: Vec<(Value, Value)> = m.iter().map(|(k, v)| (canonicalize(k), canonicalize(v))).collect();
            entries.sort_by(|a, b| {
                let ka = serde_yaml::to_string(&a.0).unwrap_or_default();
                let kb = serde_yaml::to_string(&b.0).unwrap_or_default();
                ka.cmp(&kb)
            });
            Value::Mapping(entries.into_iter().collect::<Mapping>())
        }
        Value::Sequence(s) => Value::Sequence(s.iter().map(canonicalize).collect()),
        Value::Tagged(t) => Value::Tagged(Box::new(serde_yaml::value::TaggedValue {
            tag: t.tag.clone(),
            value: canonicalize(&t.value),
        })),
        other => other.clone(),
    }
}

pub fn params_to_value(params: &Params) -> Value {
    Value::Mapping(
        params
            .iter()
            .map(|(k, v)| (Value::String(k.clone()), canonicalize(v)))
            .collect(),
    )
}

/// Canonical YAML text of a params map. An empty map renders as `{}`.
pub fn canonical_yaml(params: &Params) -> String {
    serde_yaml::to_string(&params_to_value(params)).expect("YAML values always serialize")
}

pub fn params_from_yaml(text: &str) -> Result<Params, String> {
    let value: Value = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    match value {
        Value::Null => Ok(Params::new()),
        Value::Mapping(m) => mapping_to_params(&m),
        _ => Err("config must be a mapping".into()),
    }
}

pub fn mapping_to_params(m: &Mapping) -> Result<Params, String> {
    m.iter()
        .map(|(k, v)| match k {
            Value::String(s) => Ok((s.clone(), v.clone())),
            other => Err(format!("config key {other:?} is not a string")),
        })
        .collect()
}

/// Typed accessors producing `key: reason` error strings.
pub trait ParamsExt {
    fn opt_u64(&self, key: &str) -> Result<Option<u64>, String>;
    fn opt_f64(&self, key: &str) -> Result<Option<f64>, String>;
    fn opt_str(&self, key: &str) -> Result<Option<&str>, String>;
    fn opt_str_list(&self, key: &str) -> Result<Option<Vec<String>>, String>;
    fn req_str(&self, key: &str) -> Result<&str, String>;
    /// Errors if any key outside `allowed` is present.
    fn only_keys(&self, allowed: &[&str]) -> Result<(), String>;
}

impl ParamsExt for Params {
    fn opt_u64(&self, key: &str) -> Result<Option<u64>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| format!("{key}: expected a nonnegative integer")),
        }
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| format!("{key}: expected a number")),
        }
    }

    fn opt_str(&self, key: &str) -> Result<Option<&str>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| format!("{key}: expected a string")),
        }
    }

    fn opt_str_list(&self, key: &str) -> Result<Option<Vec<String>>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Sequence(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| format!("{key}: expected a list of strings"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(format!("{key}: expected a list of strings")),
        }
    }

    fn req_str(&self, key: &str) -> Result<&str, String> {
        self.opt_str(key)?.ok_or_else(|| format!("{key}: required"))
    }

    fn only_keys(&self, allowed: &[&str]) -> Result<(), String> {
        match self.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(format!("{k}: unknown parameter")),
            None => Ok(()),
        }
    }
}
