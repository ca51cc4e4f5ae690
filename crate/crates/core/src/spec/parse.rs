//! Structural pass: YAML value tree to spec types, strict about keys.

use std::collections::BTreeMap;

use serde_yaml::{Mapping, Value};

use crate::params::{mapping_to_params, Params};
use crate::payload::PayloadKind;
use crate::postproc::PostOp;
use crate::registry::Registry;

use super::{
    check, AdapterDecl, ChannelDecl, Diagnostic, DiagnosticKind, DiagnosticList, NodeSpec, PipelineSpec,
    PlacementTarget, PostStep,
};

const TOP_KEYS: &[&str] = &[
    "version",
    "channels",
    "nodes",
    "sources",
    "sinks",
    "placement",
    "schedule",
];
const CHANNEL_KEYS: &[&str] = &["name", "kind"];
const NODE_KEYS: &[&str] = &[
    "name",
    "model",
    "backend",
    "device",
    "labels",
    "config",
    "inputs",
    "publish_raw",
    "post",
];
const STEP_KEYS: &[&str] = &["op", "params", "publish"];
const ADAPTER_KEYS: &[&str] = &["channel", "adapter", "params"];

pub const DEFAULT_DEVICE: &str = "cpu";

/// Parses and validates against the built-in backends and adapters.
pub fn parse_spec(yaml_text: &str) -> Result<PipelineSpec, DiagnosticList> {
    parse_spec_with(yaml_text, &Registry::builtin())
}

/// Parses and validates, resolving backend and adapter names in `registry`.
/// All problems are reported, each with its path.
pub fn parse_spec_with(yaml_text: &str, registry: &Registry) -> Result<PipelineSpec, DiagnosticList> {
    let mut p = Parser { diags: Vec::new() };
    let spec = p.document(yaml_text);
    let structural_ok = p.diags.is_empty();
    let mut diags = p.diags;
    if let Some(spec) = &spec {
        diags.extend(check::semantic(spec, registry, structural_ok));
    }
    match spec {
        Some(spec) if diags.is_empty() => Ok(spec),
        _ => Err(DiagnosticList(diags)),
    }
}

struct Parser {
    diags: Vec<Diagnostic>,
}

fn key_path(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Sequence(_) => "list",
        Value::Mapping(_) => "mapping",
        Value::Tagged(_) => "tagged value",
    }
}

impl Parser {
    fn err(&mut self, path: impl Into<String>, kind: DiagnosticKind, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(path, kind, msg));
    }

    fn document(&mut self, text: &str) -> Option<PipelineSpec> {
        let root: Value = match serde_yaml::from_str(text) {
            Ok(v) => v,
            Err(e) => {
                self.err("", DiagnosticKind::Syntax, e.to_string());
                return None;
            }
        };
        let top = self.mapping(&root, "")?;
        self.known_keys(top, TOP_KEYS, "");

        let version = match top.get("version") {
            None => {
                self.err(
                    "version",
                    DiagnosticKind::MissingField,
                    "required field `version` is missing",
                );
                0
            }
            Some(v) => match v.as_u64() {
                Some(n) => n,
                None => {
                    self.err("version", DiagnosticKind::InvalidValue, "version must be an integer");
                    0
                }
            },
        };

        let channels = self
            .list(top, "channels", "", true)
            .iter()
            .enumerate()
            .filter_map(|(i, v)| self.channel(v, &format!("channels[{i}]")))
            .collect();
        let nodes = self
            .list(top, "nodes", "", false)
            .iter()
            .enumerate()
            .filter_map(|(i, v)| self.node(v, &format!("nodes[{i}]")))
            .collect();
        let sources = self
            .list(top, "sources", "", false)
            .iter()
            .enumerate()
            .filter_map(|(i, v)| self.adapter(v, &format!("sources[{i}]")))
            .collect();
        let sinks = self
            .list(top, "sinks", "", false)
            .iter()
            .enumerate()
            .filter_map(|(i, v)| self.adapter(v, &format!("sinks[{i}]")))
            .collect();
        let placement = self.placement(top);
        let schedule = self.opt_str_list(top, "schedule", "").unwrap_or_default();

        Some(PipelineSpec {
            version,
            channels,
            nodes,
            sources,
            sinks,
            placement,
            schedule,
        })
    }

    fn mapping<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v Mapping> {
        match v {
            Value::Mapping(m) => Some(m),
            other => {
                self.err(
                    path,
                    DiagnosticKind::InvalidValue,
                    format!("expected a mapping, found {}", type_name(other)),
                );
                None
            }
        }
    }

    fn known_keys(&mut self, m: &Mapping, allowed: &[&str], path: &str) {
        for k in m.keys() {
            match k.as_str() {
                Some(s) if allowed.contains(&s) => {}
                Some(s) => self.err(
                    key_path(path, s),
                    DiagnosticKind::UnknownField,
                    format!("unknown field `{s}` (expected one of {})", allowed.join(", ")),
                ),
                None => self.err(path, DiagnosticKind::UnknownField, format!("non-string key {k:?}")),
            }
        }
    }

    fn list<'v>(&mut self, m: &'v Mapping, key: &str, path: &str, required: bool) -> &'v [Value] {
        let p = key_path(path, key);
        match m.get(key) {
            None | Some(Value::Null) => {
                if required {
                    self.err(
                        p,
                        DiagnosticKind::MissingField,
                        format!("required field `{key}` is missing"),
                    );
                }
                &[]
            }
            Some(Value::Sequence(s)) => s,
            Some(other) => {
                self.err(
                    p,
                    DiagnosticKind::InvalidValue,
                    format!("expected a list, found {}", type_name(other)),
                );
                &[]
            }
        }
    }

    fn req_str(&mut self, m: &Mapping, key: &str, path: &str) -> Option<String> {
        match m.get(key) {
            None => {
                self.err(
                    key_path(path, key),
                    DiagnosticKind::MissingField,
                    format!("required field `{key}` is missing"),
                );
                None
            }
            Some(_) => self.opt_str(m, key, path),
        }
    }

    fn opt_str(&mut self, m: &Mapping, key: &str, path: &str) -> Option<String> {
        match m.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Null => None,
            other => {
                self.err(
                    key_path(path, key),
                    DiagnosticKind::InvalidValue,
                    format!("expected a string, found {}", type_name(other)),
                );
                None
            }
        }
    }

    fn opt_str_list(&mut self, m: &Mapping, key: &str, path: &str) -> Option<Vec<String>> {
        let p = key_path(path, key);
        let items = self.list(m, key, path, false);
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, v) in items.iter().enumerate() {
            match v.as_str() {
                Some(s) => out.push(s.to_string()),
                None => {
                    self.err(
                        format!("{p}[{i}]"),
                        DiagnosticKind::InvalidValue,
                        format!("expected a string, found {}", type_name(v)),
                    );
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }

    fn params(&mut self, m: &Mapping, key: &str, path: &str) -> Params {
        match m.get(key) {
            None | Some(Value::Null) => Params::new(),
            Some(Value::Mapping(pm)) => match mapping_to_params(pm) {
                Ok(p) => p,
                Err(e) => {
                    self.err(key_path(path, key), DiagnosticKind::InvalidValue, e);
                    Params::new()
                }
            },
            Some(other) => {
                self.err(
                    key_path(path, key),
                    DiagnosticKind::InvalidValue,
                    format!("expected a mapping, found {}", type_name(other)),
                );
                Params::new()
            }
        }
    }

    fn channel(&mut self, v: &Value, path: &str) -> Option<ChannelDecl> {
        let m = self.mapping(v, path)?;
        self.known_keys(m, CHANNEL_KEYS, path);
        let name = self.req_str(m, "name", path);
        let kind = self
            .req_str(m, "kind", path)
            .and_then(|k| match k.parse::<PayloadKind>() {
                Ok(kind) => Some(kind),
                Err(e) => {
                    self.err(key_path(path, "kind"), DiagnosticKind::InvalidValue, e);
                    None
                }
            });
        Some(ChannelDecl {
            name: name?,
            kind: kind?,
        })
    }

    fn node(&mut self, v: &Value, path: &str) -> Option<NodeSpec> {
        let m = self.mapping(v, path)?;
        self.known_keys(m, NODE_KEYS, path);
        let name = self.req_str(m, "name", path);
        let model_id = self.req_str(m, "model", path);
        let backend = self.req_str(m, "backend", path);
        let device = self
            .opt_str(m, "device", path)
            .unwrap_or_else(|| DEFAULT_DEVICE.to_string());
        let labels = self.opt_str_list(m, "labels", path);
        let backend_config = self.params(m, "config", path);
        if !m.contains_key("inputs") {
            self.err(
                key_path(path, "inputs"),
                DiagnosticKind::MissingField,
                "required field `inputs` is missing",
            );
        }
        let inputs = self.opt_str_list(m, "inputs", path);
        let publish_raw = self.opt_str(m, "publish_raw", path);
        let post: Vec<Option<PostStep>> = self
            .list(m, "post", path, false)
            .iter()
            .enumerate()
            .map(|(i, s)| self.step(s, &format!("{path}.post[{i}]")))
            .collect();
        let post: Option<Vec<PostStep>> = post.into_iter().collect();
        Some(NodeSpec {
            name: name?,
            model_id: model_id?,
            backend: backend?,
            device,
            labels: labels?,
            backend_config,
            inputs: inputs?,
            publish_raw,
            post: post?,
        })
    }

    fn step(&mut self, v: &Value, path: &str) -> Option<PostStep> {
        let m = self.mapping(v, path)?;
        self.known_keys(m, STEP_KEYS, path);
        let op = self.req_str(m, "op", path).and_then(|s| match s.parse::<PostOp>() {
            Ok(op) => Some(op),
            Err(e) => {
                self.err(key_path(path, "op"), DiagnosticKind::InvalidValue, e);
                None
            }
        });
        let params = self.params(m, "params", path);
        let publish = self.opt_str(m, "publish", path);
        Some(PostStep {
            op: op?,
            params,
            publish,
        })
    }

    fn adapter(&mut self, v: &Value, path: &str) -> Option<AdapterDecl> {
        let m = self.mapping(v, path)?;
        self.known_keys(m, ADAPTER_KEYS, path);
        let channel = self.req_str(m, "channel", path);
        let adapter = self.req_str(m, "adapter", path);
        let params = self.params(m, "params", path);
        Some(AdapterDecl {
            channel: channel?,
            adapter: adapter?,
            params,
        })
    }

    fn placement(&mut self, top: &Mapping) -> BTreeMap<String, PlacementTarget> {
        let mut out = BTreeMap::new();
        let m = match top.get("placement") {
            None | Some(Value::Null) => return out,
            Some(v) => match self.mapping(v, "placement") {
                Some(m) => m,
                None => return out,
            },
        };
        for (k, v) in m {
            let Some(node) = k.as_str() else {
                self.err(
                    "placement",
                    DiagnosticKind::InvalidValue,
                    format!("non-string node name {k:?}"),
                );
                continue;
            };
            let path = format!("placement.{node}");
            match v.as_str().map(str::parse::<PlacementTarget>) {
                Some(Ok(t)) => {
                    out.insert(node.to_string(), t);
                }
                Some(Err(e)) => self.err(path, DiagnosticKind::InvalidValue, e),
                None => self.err(
                    path,
                    DiagnosticKind::InvalidValue,
                    format!("expected a placement string, found {}", type_name(v)),
                ),
            }
        }
        out
    }
}
