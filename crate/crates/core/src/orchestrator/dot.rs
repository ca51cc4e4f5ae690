use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::registry::Registry;
use crate::spec::{node_consumes, node_produces, PipelineSpec};

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' | '\\' => {
                q.push('\\');
                q.push(c);
            }
            '\n' => q.push_str("\\n"),
            _ => q.push(c),
        }
    }
    q.push('"');
    q
}

/// DOT digraph of the pipeline: channels as ellipses, nodes as boxes, solid
/// edges for triggers and outputs, dashed edges for context reads. Output
/// depends only on the spec.
pub fn graph_dot(spec: &PipelineSpec) -> String {
    graph_dot_with(spec, &Registry::builtin())
}

pub fn graph_dot_with(spec: &PipelineSpec, registry: &Registry) -> String {
    if spec.channels.is_empty() && spec.nodes.is_empty() {
        return "digraph pipeline {\n}\n".to_string();
    }
    let node_names: BTreeSet<&str> = spec.nodes.iter().map(|n| n.name.as_str()).collect();
    // A channel that shares a node's name gets a distinct id.
    let chan_id = |c: &str| {
        if node_names.contains(c) {
            quote(&format!("channel:{c}"))
        } else {
            quote(c)
        }
    };
    let mut out = String::from("digraph pipeline {\n    rankdir=LR;\n");
    for c in &spec.channels {
        let _ = writeln!(
            out,
            "    {} [shape=ellipse, label={}];",
            chan_id(&c.name),
            quote(&format!("{}\n{}", c.name, c.kind))
        );
    }
    for n in &spec.nodes {
        let _ = writeln!(
            out,
            "    {} [shape=box, label={}];",
            quote(&n.name),
            quote(&format!("{}\n{} ({})", n.name, n.backend, spec.placement_of(&n.name)))
        );
    }
    for n in &spec.nodes {
        let trigger = n.inputs.first().map(String::as_str).unwrap_or("");
        for c in node_consumes(n, registry) {
            let style = if c == trigger { "" } else { " [style=dashed]" };
            let _ = writeln!(out, "    {} -> {}{style};", chan_id(&c), quote(&n.name));
        }
        for c in node_produces(n) {
            let _ = writeln!(out, "    {} -> {};", quote(&n.name), chan_id(c));
        }
    }
    out.push_str("}\n");
    out
}
