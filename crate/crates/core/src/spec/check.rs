//! Semantic pass over a structurally parsed spec.

use std::collections::{BTreeMap, BTreeSet};

use crate::bus::adapters::source_fits;
use crate::payload::PayloadKind;
use crate::postproc::CompiledStep;
use crate::registry::Registry;

use super::graph;
use super::{valid_name, Diagnostic, DiagnosticKind as K, PipelineSpec, SCHEMA_VERSION};

/// Where a channel's single producer lives, for diagnostics.
fn producers(spec: &PipelineSpec) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, s) in spec.sources.iter().enumerate() {
        out.push((s.channel.clone(), format!("sources[{i}].channel")));
    }
    for (i, n) in spec.nodes.iter().enumerate() {
        if let Some(c) = &n.publish_raw {
            out.push((c.clone(), format!("nodes[{i}].publish_raw")));
        }
        for (j, step) in n.post.iter().enumerate() {
            if let Some(c) = &step.publish {
                out.push((c.clone(), format!("nodes[{i}].post[{j}].publish")));
            }
        }
    }
    out
}

pub(super) fn semantic(spec: &PipelineSpec, registry: &Registry, structural_ok: bool) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    let mut push = |path: String, kind: K, msg: String| d.push(Diagnostic::new(path, kind, msg));

    if spec.version != SCHEMA_VERSION && spec.version != 0 {
        push(
            "version".into(),
            K::UnsupportedVersion,
            format!(
                "unsupported schema version {} (only {SCHEMA_VERSION} is supported)",
                spec.version
            ),
        );
    }

    let mut kinds: BTreeMap<&str, PayloadKind> = BTreeMap::new();
    for (i, c) in spec.channels.iter().enumerate() {
        if !valid_name(&c.name) {
            push(
                format!("channels[{i}].name"),
                K::InvalidValue,
                format!("channel name {:?} must be nonempty and contain no whitespace", c.name),
            );
        }
        if kinds.insert(&c.name, c.kind).is_some() {
            push(
                format!("channels[{i}].name"),
                K::Duplicate,
                format!("duplicate channel {:?}", c.name),
            );
        }
    }
    let declared = |name: &str| kinds.get(name).copied();
    let undeclared = |path: String, name: &str, d: &mut Vec<Diagnostic>| -> Option<PayloadKind> {
        let k = declared(name);
        if k.is_none() {
            d.push(Diagnostic::new(
                path,
                K::UndeclaredChannel,
                format!("channel {name:?} is not declared"),
            ));
        }
        k
    };

    let mut node_names = BTreeSet::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        let at = format!("nodes[{i}]");
        if !valid_name(&n.name) {
            d.push(Diagnostic::new(
                format!("{at}.name"),
                K::InvalidValue,
                format!("node name {:?} must be nonempty and contain no whitespace", n.name),
            ));
        }
        if !node_names.insert(n.name.as_str()) {
            d.push(Diagnostic::new(
                format!("{at}.name"),
                K::Duplicate,
                format!("duplicate node {:?}", n.name),
            ));
        }
        if n.inputs.is_empty() {
            d.push(Diagnostic::new(
                format!("{at}.inputs"),
                K::InvalidValue,
                "a node needs at least one input channel",
            ));
        }
        let input_kinds: Vec<Option<PayloadKind>> = n
            .inputs
            .iter()
            .enumerate()
            .map(|(j, c)| undeclared(format!("{at}.inputs[{j}]"), c, &mut d))
            .collect();

        let Some(backend) = registry.backend(&n.backend) else {
            d.push(Diagnostic::new(
                format!("{at}.backend"),
                K::UnknownBackend,
                format!("backend {:?} is not registered", n.backend),
            ));
            continue;
        };
        let desc = backend.descriptor();
        if let Err(e) = backend.check_config(&n.backend_config) {
            d.push(Diagnostic::new(format!("{at}.config"), K::InvalidValue, e));
        } else if let Ok(ctx) = backend.context_channels(&n.backend_config) {
            if !ctx.is_empty() && !desc.context_channels_allowed {
                d.push(Diagnostic::new(
                    format!("{at}.config"),
                    K::InvalidValue,
                    format!("backend {:?} does not read context channels", desc.name),
                ));
            }
            for c in ctx {
                undeclared(format!("{at}.config"), &c, &mut d);
            }
        }
        if let Some(Some(k)) = input_kinds.first() {
            if !k.accepted_by(&desc.input_kinds) {
                d.push(Diagnostic::new(
                    format!("{at}.inputs[0]"),
                    K::KindMismatch,
                    format!(
                        "channel {:?} carries {k}, backend {:?} accepts {}",
                        n.inputs[0],
                        desc.name,
                        kind_list(&desc.input_kinds)
                    ),
                ));
            }
        }
        if n.inputs.len() > 1 && !desc.context_channels_allowed {
            d.push(Diagnostic::new(
                format!("{at}.inputs"),
                K::InvalidValue,
                format!(
                    "backend {:?} takes a single input; extra inputs are context channels, which it does not read",
                    desc.name
                ),
            ));
        }
        if let Some(raw) = &n.publish_raw {
            if let Some(k) = undeclared(format!("{at}.publish_raw"), raw, &mut d) {
                if !desc.output_kind.is_subkind_of(k) {
                    d.push(Diagnostic::new(
                        format!("{at}.publish_raw"),
                        K::KindMismatch,
                        format!(
                            "channel {raw:?} carries {k}, backend {:?} produces {}",
                            desc.name, desc.output_kind
                        ),
                    ));
                }
            }
        }

        let trigger = input_kinds.first().copied().flatten().unwrap_or(PayloadKind::Tensor);
        let mut kind = Some(desc.output_kind);
        for (j, step) in n.post.iter().enumerate() {
            let sp = format!("{at}.post[{j}]");
            let compiled = match CompiledStep::compile(step.op, &step.params) {
                Ok(c) => Some(c),
                Err(e) => {
                    d.push(Diagnostic::new(format!("{sp}.params"), K::InvalidValue, e));
                    None
                }
            };
            if let Some(c) = &compiled {
                for ch in c.context_channels() {
                    undeclared(format!("{sp}.params"), &ch, &mut d);
                }
            }
            kind = match (compiled, kind) {
                (Some(c), Some(input)) => match c.output_kind(input, trigger) {
                    Ok(k) => Some(k),
                    Err(e) => {
                        d.push(Diagnostic::new(sp.clone(), K::KindMismatch, e));
                        None
                    }
                },
                _ => None,
            };
            if let Some(ch) = &step.publish {
                if let (Some(ck), Some(k)) = (undeclared(format!("{sp}.publish"), ch, &mut d), kind) {
                    if !k.is_subkind_of(ck) {
                        d.push(Diagnostic::new(
                            format!("{sp}.publish"),
                            K::KindMismatch,
                            format!("channel {ch:?} carries {ck}, step {} produces {k}", step.op),
                        ));
                    }
                }
            }
        }
    }

    for (i, s) in spec.sources.iter().enumerate() {
        let at = format!("sources[{i}]");
        let k = undeclared(format!("{at}.channel"), &s.channel, &mut d);
        match registry.adapters.source(&s.adapter) {
            None => d.push(Diagnostic::new(
                format!("{at}.adapter"),
                K::UnknownAdapter,
                format!("source adapter {:?} is not registered", s.adapter),
            )),
            Some(f) => {
                if let Some(k) = k {
                    if !source_fits(f.emits(), k) {
                        d.push(Diagnostic::new(
                            format!("{at}.adapter"),
                            K::KindMismatch,
                            format!(
                                "adapter {:?} emits {}, channel carries {k}",
                                s.adapter,
                                kind_list(f.emits())
                            ),
                        ));
                    }
                }
                if let Err(e) = f.check(&s.params) {
                    d.push(Diagnostic::new(format!("{at}.params"), K::InvalidValue, e));
                }
            }
        }
    }

    for (i, s) in spec.sinks.iter().enumerate() {
        let at = format!("sinks[{i}]");
        let k = undeclared(format!("{at}.channel"), &s.channel, &mut d);
        match registry.adapters.sink(&s.adapter) {
            None => d.push(Diagnostic::new(
                format!("{at}.adapter"),
                K::UnknownAdapter,
                format!("sink adapter {:?} is not registered", s.adapter),
            )),
            Some(f) => {
                if let Some(k) = k {
                    if !k.accepted_by(f.consumes()) {
                        d.push(Diagnostic::new(
                            format!("{at}.adapter"),
                            K::KindMismatch,
                            format!(
                                "adapter {:?} consumes {}, channel carries {k}",
                                s.adapter,
                                kind_list(f.consumes())
                            ),
                        ));
                    }
                }
                if let Err(e) = f.check(&s.params) {
                    d.push(Diagnostic::new(format!("{at}.params"), K::InvalidValue, e));
                }
            }
        }
    }

    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for (channel, path) in producers(spec) {
        if let Some(first) = seen.get(&channel) {
            d.push(Diagnostic::new(
                path,
                K::MultipleProducers,
                format!("channel {channel:?} already has a producer at {first}"),
            ));
        } else {
            seen.insert(channel, path);
        }
    }

    for node in spec.placement.keys() {
        if !node_names.contains(node.as_str()) {
            d.push(Diagnostic::new(
                format!("placement.{node}"),
                K::UnknownNode,
                format!("no node named {node:?}"),
            ));
        }
    }

    let source_channels: BTreeSet<&str> = spec.sources.iter().map(|s| s.channel.as_str()).collect();
    for (i, c) in spec.schedule.iter().enumerate() {
        if !source_channels.contains(c.as_str()) {
            d.push(Diagnostic::new(
                format!("schedule[{i}]"),
                K::InvalidValue,
                format!("{c:?} is not the channel of a declared source"),
            ));
        }
    }

    // Orphans and cycles only make sense over a complete graph.
    if structural_ok {
        if let Err(g) = graph::validate_graph_with(spec, registry) {
            d.extend(g.0);
        }
    }
    d
}

fn kind_list(kinds: &[PayloadKind]) -> String {
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("|")
}
