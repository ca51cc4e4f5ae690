//! Dataflow graph over nodes: ordering, cycles, orphaned channels.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use crate::postproc::CompiledStep;
use crate::registry::Registry;

use super::{Diagnostic, DiagnosticKind, DiagnosticList, NodeSpec, PipelineSpec};

/// Every channel a node reads: its inputs, the context channels its backend
/// config names, and those referenced by `format` steps. Sorted, deduplicated.
pub fn node_consumes(node: &NodeSpec, registry: &Registry) -> Vec<String> {
    let mut out: BTreeSet<String> = node.inputs.iter().cloned().collect();
    if let Some(b) = registry.backend(&node.backend) {
        if let Ok(ctx) = b.context_channels(&node.backend_config) {
            out.extend(ctx);
        }
    }
    for step in &node.post {
        if let Ok(c) = CompiledStep::compile(step.op, &step.params) {
            out.extend(c.context_channels());
        }
    }
    out.into_iter().collect()
}

/// Channels a node publishes to, raw output first.
pub fn node_produces(node: &NodeSpec) -> Vec<&str> {
    node.publish_raw
        .iter()
        .chain(node.post.iter().filter_map(|s| s.publish.as_ref()))
        .map(String::as_str)
        .collect()
}

/// [`validate_graph_with`] over the built-in registry.
pub fn validate_graph(spec: &PipelineSpec) -> Result<Vec<String>, DiagnosticList> {
    validate_graph_with(spec, &Registry::builtin())
}

/// Returns node names in a topological order (producers first, ties broken
/// by name), or cycle and orphan-channel diagnostics.
pub fn validate_graph_with(spec: &PipelineSpec, registry: &Registry) -> Result<Vec<String>, DiagnosticList> {
    let mut diags = Vec::new();

    let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
    let mut produced: BTreeSet<&str> = spec.sources.iter().map(|s| s.channel.as_str()).collect();
    for (i, n) in spec.nodes.iter().enumerate() {
        for c in node_produces(n) {
            producer.entry(c).or_insert(i);
            produced.insert(c);
        }
    }

    let consumes: Vec<Vec<String>> = spec.nodes.iter().map(|n| node_consumes(n, registry)).collect();

    let mut g: DiGraph<usize, ()> = DiGraph::new();
    let idx: Vec<NodeIndex> = (0..spec.nodes.len()).map(|i| g.add_node(i)).collect();
    let mut edges = BTreeSet::new();
    for (to, chans) in consumes.iter().enumerate() {
        for c in chans {
            if let Some(&from) = producer.get(c.as_str()) {
                edges.insert((from, to));
            }
        }
    }
    for &(a, b) in &edges {
        g.add_edge(idx[a], idx[b], ());
    }

    let mut orphans: BTreeMap<&str, String> = BTreeMap::new();
    for (i, chans) in consumes.iter().enumerate() {
        for c in chans {
            if spec.channel(c).is_some() && !produced.contains(c.as_str()) {
                orphans.entry(c).or_insert_with(|| format!("nodes[{i}]"));
            }
        }
    }
    for (i, s) in spec.sinks.iter().enumerate() {
        if spec.channel(&s.channel).is_some() && !produced.contains(s.channel.as_str()) {
            orphans.entry(&s.channel).or_insert_with(|| format!("sinks[{i}]"));
        }
    }
    for (c, path) in orphans {
        diags.push(Diagnostic::new(
            path,
            DiagnosticKind::OrphanChannel,
            format!("channel {c:?} is consumed but nothing publishes to it"),
        ));
    }

    for scc in tarjan_scc(&g) {
        let self_loop = scc.len() == 1 && edges.contains(&(g[scc[0]], g[scc[0]]));
        if scc.len() < 2 && !self_loop {
            continue;
        }
        let members: BTreeSet<usize> = scc.iter().map(|&n| g[n]).collect();
        let path = cycle_through(&members, &edges, spec);
        let names: Vec<&str> = members.iter().map(|&i| spec.nodes[i].name.as_str()).collect();
        diags.push(Diagnostic::new(
            "nodes",
            DiagnosticKind::Cycle,
            format!("cycle: {} (nodes {})", path.join(" -> "), names.join(", ")),
        ));
    }
    // tarjan_scc order depends on graph internals; make output stable.
    diags.sort_by(|a, b| (a.kind.as_str(), &a.path, &a.message).cmp(&(b.kind.as_str(), &b.path, &b.message)));

    if !diags.is_empty() {
        return Err(DiagnosticList(diags));
    }

    let mut indeg = vec![0usize; spec.nodes.len()];
    for &(_, b) in &edges {
        indeg[b] += 1;
    }
    let mut ready: BTreeSet<(&str, usize)> = indeg
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| (spec.nodes[i].name.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(spec.nodes.len());
    while let Some(first) = ready.pop_first() {
        let (name, i) = first;
        order.push(name.to_string());
        for &(a, b) in edges.range((i, 0)..=(i, usize::MAX)) {
            debug_assert_eq!(a, i);
            indeg[b] -= 1;
            if indeg[b] == 0 {
                ready.insert((spec.nodes[b].name.as_str(), b));
            }
        }
    }
    debug_assert_eq!(order.len(), spec.nodes.len());
    Ok(order)
}

/// Shortest cycle from the lowest-named member of an SCC back to itself.
fn cycle_through(members: &BTreeSet<usize>, edges: &BTreeSet<(usize, usize)>, spec: &PipelineSpec) -> Vec<String> {
    let name = |i: usize| spec.nodes[i].name.clone();
    let start = *members.iter().min_by_key(|&&i| &spec.nodes[i].name).unwrap();
    let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queue = VecDeque::from([start]);
    let mut closing = None;
    'bfs: while let Some(u) = queue.pop_front() {
        for &(_, v) in edges.range((u, 0)..=(u, usize::MAX)) {
            if !members.contains(&v) {
                continue;
            }
            if v == start {
                closing = Some(u);
                break 'bfs;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(v) {
                e.insert(u);
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![name(start)];
    let mut cur = closing.expect("strongly connected component has a cycle through every member");
    let mut rev = Vec::new();
    while cur != start {
        rev.push(name(cur));
        cur = prev[&cur];
    }
    path.extend(rev.into_iter().rev());
    path.push(name(start));
    path
}
