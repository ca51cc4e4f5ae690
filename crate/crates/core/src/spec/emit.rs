//! Canonical YAML output.

use serde_yaml::{Mapping, Value};

use crate::params::{params_to_value, Params};

use super::{AdapterDecl, NodeSpec, PipelineSpec};

fn s(v: &str) -> Value {
    Value::String(v.to_string())
}

fn list(items: impl IntoIterator<Item = Value>) -> Value {
    Value::Sequence(items.into_iter().collect())
}

fn params(p: &Params) -> Value {
    params_to_value(p)
}

fn node(n: &NodeSpec) -> Value {
    let mut m = Mapping::new();
    m.insert(s("name"), s(&n.name));
    m.insert(s("model"), s(&n.model_id));
    m.insert(s("backend"), s(&n.backend));
    m.insert(s("device"), s(&n.device));
    m.insert(s("labels"), list(n.labels.iter().map(|l| s(l))));
    m.insert(s("config"), params(&n.backend_config));
    m.insert(s("inputs"), list(n.inputs.iter().map(|c| s(c))));
    if let Some(raw) = &n.publish_raw {
        m.insert(s("publish_raw"), s(raw));
    }
    let steps = n.post.iter().map(|step| {
        let mut sm = Mapping::new();
        sm.insert(s("op"), s(step.op.as_str()));
        sm.insert(s("params"), params(&step.params));
        if let Some(p) = &step.publish {
            sm.insert(s("publish"), s(p));
        }
        Value::Mapping(sm)
    });
    m.insert(s("post"), list(steps));
    Value::Mapping(m)
}

fn adapter(a: &AdapterDecl) -> Value {
    let mut m = Mapping::new();
    m.insert(s("channel"), s(&a.channel));
    m.insert(s("adapter"), s(&a.adapter));
    m.insert(s("params"), params(&a.params));
    Value::Mapping(m)
}

/// Writes the canonical form: fixed key order, sorted parameter maps, every
/// section present. Parsing the output yields a spec equal to the input.
pub fn serialize_spec(spec: &PipelineSpec) -> String {
    let mut top = Mapping::new();
    top.insert(s("version"), Value::Number(spec.version.into()));
    let channels = spec.channels.iter().map(|c| {
        let mut m = Mapping::new();
        m.insert(s("name"), s(&c.name));
        m.insert(s("kind"), s(c.kind.as_str()));
        Value::Mapping(m)
    });
    top.insert(s("channels"), list(channels));
    top.insert(s("nodes"), list(spec.nodes.iter().map(node)));
    top.insert(s("sources"), list(spec.sources.iter().map(adapter)));
    top.insert(s("sinks"), list(spec.sinks.iter().map(adapter)));
    let mut placement = Mapping::new();
    for (n, t) in &spec.placement {
        placement.insert(s(n), s(&t.to_string()));
    }
    top.insert(s("placement"), Value::Mapping(placement));
    top.insert(s("schedule"), list(spec.schedule.iter().map(|c| s(c))));
    serde_yaml::to_string(&Value::Mapping(top)).expect("spec values are always representable")
}
