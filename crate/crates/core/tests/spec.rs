use std::collections::BTreeMap;
use std::path::PathBuf;

use oricf_core::spec::{parse_spec, serialize_spec, validate_graph, DiagnosticKind, PipelineSpec, PlacementTarget};
use proptest::prelude::*;

fn demo_text() -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../pipelines/demo.yaml");
    std::fs::read_to_string(p).unwrap()
}

const MINIMAL: &str = "
version: 1
channels:
  - {name: /in, kind: text}
sources:
  - {channel: /in, adapter: text-lines, params: {lines: [hi]}}
sinks:
  - {channel: /in, adapter: stdout-text}
";

fn kinds_of(text: &str) -> Vec<DiagnosticKind> {
    parse_spec(text).unwrap_err().iter().map(|d| d.kind).collect()
}

#[test]
fn minimal_spec_has_no_nodes() {
    let s = parse_spec(MINIMAL).unwrap();
    assert!(s.nodes.is_empty());
    assert_eq!(s.channels.len(), 1);
    assert_eq!(validate_graph(&s).unwrap(), Vec::<String>::new());
    assert_eq!(parse_spec(&serialize_spec(&s)).unwrap(), s);
}

#[test]
fn demo_spec_shape_and_order() {
    let s = parse_spec(&demo_text()).unwrap();
    assert_eq!(s.nodes.len(), 2);
    assert_eq!(s.channels.len(), 5);
    assert_eq!(validate_graph(&s).unwrap(), ["person_detector", "answer_llm"]);
    let text = serialize_spec(&s);
    assert!(text.contains("camera/image_raw"));
    assert!(text.contains("/human_counter"));
    assert_eq!(parse_spec(&text).unwrap(), s);
}

#[test]
fn voice_spec_parses() {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../pipelines/voice.yaml");
    let s = parse_spec(&std::fs::read_to_string(p).unwrap()).unwrap();
    assert_eq!(validate_graph(&s).unwrap(), ["asr", "person_detector", "answer_llm"]);
}

#[test]
fn placement_round_trip() {
    let mut s = parse_spec(&demo_text()).unwrap();
    s.placement.insert(
        "person_detector".into(),
        PlacementTarget::Edge {
            host: "h".into(),
            port: 7070,
        },
    );
    let text = serialize_spec(&s);
    assert!(text.contains("edge://h:7070"));
    assert_eq!(parse_spec(&text).unwrap(), s);
}

const CYCLE: &str = "
version: 1
channels:
  - {name: x, kind: text}
  - {name: y, kind: text}
  - {name: x2, kind: text}
  - {name: y2, kind: text}
nodes:
  - name: a
    model: m
    backend: identity
    inputs: [y]
    publish_raw: x2
    post:
      - {op: format, params: {template: '{query}'}, publish: x}
  - name: b
    model: m
    backend: identity
    inputs: [x]
    publish_raw: y2
    post:
      - {op: format, params: {template: '{query}'}, publish: y}
";

#[test]
fn two_node_cycle_is_one_diagnostic_naming_both() {
    let err = parse_spec(CYCLE).unwrap_err();
    let cycles = err.of_kind(DiagnosticKind::Cycle);
    assert_eq!(cycles.len(), 1, "{err}");
    assert_eq!(err.len(), 1, "{err}");
    let msg = &cycles[0].message;
    assert!(msg.contains("a -> b -> a"), "{msg}");
}

#[test]
fn self_loop_is_a_cycle() {
    let text = "
version: 1
channels:
  - {name: x, kind: text}
nodes:
  - {name: a, model: m, backend: identity, inputs: [x], publish_raw: x}
";
    let err = parse_spec(text).unwrap_err();
    assert_eq!(err.of_kind(DiagnosticKind::Cycle).len(), 1, "{err}");
    assert!(err.to_string().contains("a -> a"));
}

#[test]
fn tie_break_by_name() {
    let text = "
version: 1
channels:
  - {name: p, kind: text}
  - {name: q, kind: text}
  - {name: p_out, kind: text}
  - {name: q_out, kind: text}
nodes:
  - {name: b, model: m, backend: identity, inputs: [p], publish_raw: p_out}
  - {name: a, model: m, backend: identity, inputs: [q], publish_raw: q_out}
sources:
  - {channel: p, adapter: text-lines, params: {lines: [x]}}
  - {channel: q, adapter: text-lines, params: {lines: [y]}}
";
    assert_eq!(validate_graph(&parse_spec(text).unwrap()).unwrap(), ["a", "b"]);
}

#[test]
fn orphan_channel() {
    let text = "
version: 1
channels:
  - {name: x, kind: text}
  - {name: y, kind: text}
nodes:
  - {name: a, model: m, backend: identity, inputs: [x], publish_raw: y}
sinks:
  - {channel: y, adapter: stdout-text}
";
    assert_eq!(kinds_of(text), [DiagnosticKind::OrphanChannel]);
}

#[test]
fn kind_mismatch_cases() {
    // Text into a detector.
    let text = "
version: 1
channels:
  - {name: q, kind: text}
  - {name: d, kind: detections}
nodes:
  - {name: det, model: m, backend: stub-detector, inputs: [q], publish_raw: d}
sources:
  - {channel: q, adapter: text-lines, params: {lines: [x]}}
";
    assert_eq!(kinds_of(text), [DiagnosticKind::KindMismatch]);

    // Detections published to a scalar channel.
    let text = "
version: 1
channels:
  - {name: img, kind: image}
  - {name: n, kind: scalar}
nodes:
  - {name: det, model: m, backend: stub-detector, inputs: [img], publish_raw: n}
sources:
  - {channel: img, adapter: synthetic-frames, params: {width: 8, height: 8}}
";
    assert_eq!(kinds_of(text), [DiagnosticKind::KindMismatch]);

    // count output published to a text channel.
    let text = "
version: 1
channels:
  - {name: img, kind: image}
  - {name: t, kind: text}
nodes:
  - name: det
    model: m
    backend: stub-detector
    inputs: [img]
    post:
      - {op: count, params: {label: person}, publish: t}
sources:
  - {channel: img, adapter: synthetic-frames, params: {width: 8, height: 8}}
";
    assert_eq!(kinds_of(text), [DiagnosticKind::KindMismatch]);

    // Source adapter that cannot produce the channel's kind.
    let text = "
version: 1
channels:
  - {name: img, kind: image}
sources:
  - {channel: img, adapter: text-lines, params: {lines: [x]}}
";
    assert_eq!(kinds_of(text), [DiagnosticKind::KindMismatch]);
}

#[test]
fn image_is_accepted_where_tensor_is_expected_but_not_the_reverse() {
    let text = "
version: 1
channels:
  - {name: img, kind: image}
  - {name: t, kind: tensor}
nodes:
  - {name: id, model: m, backend: identity-tensor, inputs: [img], publish_raw: t}
sources:
  - {channel: img, adapter: synthetic-frames, params: {width: 8, height: 8}}
";
    parse_spec(text).unwrap();
    let text = "
version: 1
channels:
  - {name: t, kind: tensor}
  - {name: d, kind: detections}
nodes:
  - {name: det, model: m, backend: stub-detector, inputs: [t], publish_raw: d}
sources:
  - {channel: t, adapter: file, params: {path: /dev/null}}
";
    assert_eq!(kinds_of(text), [DiagnosticKind::KindMismatch]);
}

#[test]
fn structural_errors_have_paths() {
    let cases: &[(&str, DiagnosticKind, &str)] = &[
        ("version: 1\nchannels: [", DiagnosticKind::Syntax, ""),
        (
            "version: 1\nchannels: []\nextra: 1",
            DiagnosticKind::UnknownField,
            "extra",
        ),
        ("channels: []", DiagnosticKind::MissingField, "version"),
        (
            "version: 2\nchannels: []",
            DiagnosticKind::UnsupportedVersion,
            "version",
        ),
        ("version: 1", DiagnosticKind::MissingField, "channels"),
        (
            "version: 1\nchannels:\n  - {name: a, kind: text}\n  - {name: a, kind: text}",
            DiagnosticKind::Duplicate,
            "channels[1].name",
        ),
        (
            "version: 1\nchannels:\n  - {name: 'a b', kind: text}",
            DiagnosticKind::InvalidValue,
            "channels[0].name",
        ),
        (
            "version: 1\nchannels:\n  - {name: a, kind: video}",
            DiagnosticKind::InvalidValue,
            "channels[0].kind",
        ),
        (
            "version: 1\nchannels:\n  - {name: a, kind: text, colour: red}",
            DiagnosticKind::UnknownField,
            "channels[0].colour",
        ),
        (
            "version: 1\nchannels: []\nnodes:\n  - {name: n, model: m, backend: identity}",
            DiagnosticKind::MissingField,
            "nodes[0].inputs",
        ),
        (
            "version: 1\nchannels: []\nnodes:\n  - {name: n, model: m, backend: identity, inputs: [zz]}",
            DiagnosticKind::UndeclaredChannel,
            "nodes[0].inputs[0]",
        ),
        (
            "version: 1\nchannels:\n  - {name: a, kind: text}\nsources:\n  - {channel: a, adapter: nope}",
            DiagnosticKind::UnknownAdapter,
            "sources[0].adapter",
        ),
        (
            "version: 1\nchannels:\n  - {name: a, kind: text}\nsinks:\n  - {channel: a, adapter: nope}",
            DiagnosticKind::UnknownAdapter,
            "sinks[0].adapter",
        ),
        (
            "version: 1\nchannels: []\nplacement: {ghost: onboard}",
            DiagnosticKind::UnknownNode,
            "placement.ghost",
        ),
        (
            "version: 1\nchannels: []\nplacement: {ghost: 'edge://h'}",
            DiagnosticKind::InvalidValue,
            "placement.ghost",
        ),
    ];
    for (text, kind, path) in cases {
        let err = parse_spec(text).unwrap_err();
        assert!(
            err.iter().any(|d| d.kind == *kind && d.path == *path),
            "{text:?}: expected {kind:?} at {path:?}, got\n{err}"
        );
    }
}

#[test]
fn node_level_errors() {
    let base = "
version: 1
channels:
  - {name: q, kind: text}
  - {name: a, kind: text}
sources:
  - {channel: q, adapter: text-lines, params: {lines: [x]}}
nodes:
";
    let cases: &[(&str, DiagnosticKind, &str)] = &[
        (
            "  - {name: n, model: m, backend: nope, inputs: [q]}",
            DiagnosticKind::UnknownBackend,
            "nodes[0].backend",
        ),
        (
            "  - {name: n, model: m, backend: template-llm, inputs: [q], config: {template: '{bad}'}}",
            DiagnosticKind::InvalidValue,
            "nodes[0].config",
        ),
        (
            "  - {name: n, model: m, backend: identity, inputs: [q, a]}",
            DiagnosticKind::InvalidValue,
            "nodes[0].inputs",
        ),
        (
            "  - {name: n, model: m, backend: identity, inputs: [q], publish_raw: q}",
            DiagnosticKind::MultipleProducers,
            "nodes[0].publish_raw",
        ),
        (
            "  - {name: n, model: m, backend: template-llm, inputs: [q], config: {template: '{chan:zz}'}}",
            DiagnosticKind::UndeclaredChannel,
            "nodes[0].config",
        ),
        (
            "  - {name: n, model: m, backend: identity, inputs: [q], post: [{op: count}]}",
            DiagnosticKind::InvalidValue,
            "nodes[0].post[0].params",
        ),
        (
            "  - {name: n, model: m, backend: identity, inputs: [q], post: [{op: count, params: {label: p}}]}",
            DiagnosticKind::KindMismatch,
            "nodes[0].post[0]",
        ),
        (
            "  - {name: n, model: m, backend: identity, inputs: [q], post: [{op: explode}]}",
            DiagnosticKind::InvalidValue,
            "nodes[0].post[0].op",
        ),
    ];
    for (node, kind, path) in cases {
        let text = format!("{base}{node}\n");
        let err = parse_spec(&text).unwrap_err();
        assert!(
            err.iter().any(|d| d.kind == *kind && d.path == *path),
            "{node}: expected {kind:?} at {path:?}, got\n{err}"
        );
    }
}

#[test]
fn schedule_must_name_sources() {
    let text = format!("{MINIMAL}schedule: [/in, /nope]\n");
    let err = parse_spec(&text).unwrap_err();
    assert_eq!(err.len(), 1);
    assert_eq!(err.0[0].path, "schedule[1]");
}

#[test]
fn diagnostics_are_collected_not_first_only() {
    // Five independent problems.
    let text = "
version: 1
bogus: true
channels:
  - {name: a, kind: text}
  - {name: a, kind: scalar}
nodes:
  - {name: n, model: m, backend: nope, inputs: [missing]}
sinks:
  - {channel: a, adapter: nope}
";
    let err = parse_spec(text).unwrap_err();
    assert!(err.len() >= 5, "{err}");
}

#[test]
fn diagnostics_are_deterministic() {
    let text = CYCLE.replace("publish_raw: y2", "publish_raw: y2\n    unknown: 1");
    let a = parse_spec(&text).unwrap_err().to_string();
    for _ in 0..5 {
        assert_eq!(parse_spec(&text).unwrap_err().to_string(), a);
    }
}

// Randomized valid specs built from independent lanes.

#[derive(Debug, Clone)]
enum Lane {
    Text {
        lines: Vec<String>,
        with_node: bool,
        post_text: bool,
    },
    Vision {
        width: u32,
        height: u32,
        threshold: u8,
        block: u32,
        min_score: f64,
        label: String,
    },
}

fn lane() -> impl Strategy<Value = Lane> {
    prop_oneof![
        (prop::collection::vec("\\PC{0,12}", 0..4), any::<bool>(), any::<bool>()).prop_map(
            |(lines, with_node, post_text)| Lane::Text {
                lines,
                with_node,
                post_text
            }
        ),
        (1u32..64, 1u32..64, any::<u8>(), 1u32..16, 0u32..=100, "[a-z]{1,8}").prop_map(
            |(width, height, threshold, block, ms, label)| Lane::Vision {
                width,
                height,
                threshold,
                block,
                min_score: f64::from(ms) / 100.0,
                label,
            }
        ),
    ]
}

fn placement() -> impl Strategy<Value = Option<String>> {
    prop_oneof![
        Just(None),
        Just(Some("onboard".to_string())),
        ("[a-z][a-z0-9.-]{0,10}", any::<u16>()).prop_map(|(h, p)| Some(format!("edge://{h}:{p}"))),
    ]
}

fn yaml_str(s: &str) -> String {
    serde_json::to_string(s).unwrap()
}

fn build(lanes: &[(Lane, Option<String>, Vec<String>, String)], schedule: &[usize]) -> String {
    let mut channels = String::new();
    let mut nodes = String::new();
    let mut sources = String::new();
    let mut sinks = String::new();
    let mut placement = String::new();
    for (i, (lane, place, labels, device)) in lanes.iter().enumerate() {
        let labels = labels.iter().map(|l| yaml_str(l)).collect::<Vec<_>>().join(", ");
        match lane {
            Lane::Text {
                lines,
                with_node,
                post_text,
            } => {
                let lines = lines.iter().map(|l| yaml_str(l)).collect::<Vec<_>>().join(", ");
                channels.push_str(&format!("  - {{name: t{i}/in, kind: text}}\n"));
                sources.push_str(&format!(
                    "  - {{channel: t{i}/in, adapter: text-lines, params: {{lines: [{lines}]}}}}\n"
                ));
                if *with_node {
                    channels.push_str(&format!("  - {{name: t{i}/out, kind: text}}\n"));
                    let post = if *post_text {
                        channels.push_str(&format!("  - {{name: t{i}/post, kind: text}}\n"));
                        sinks.push_str(&format!("  - {{channel: t{i}/post, adapter: stdout-text}}\n"));
                        format!("[{{op: format, params: {{template: \"<{{{{query}}}}>\"}}, publish: t{i}/post}}]")
                    } else {
                        "[]".to_string()
                    };
                    nodes.push_str(&format!(
                        "  - {{name: n{i}, model: echo, backend: identity, device: {}, labels: [{labels}], inputs: [t{i}/in], publish_raw: t{i}/out, post: {post}}}\n",
                        yaml_str(device)
                    ));
                    sinks.push_str(&format!("  - {{channel: t{i}/out, adapter: stdout-text}}\n"));
                    if let Some(p) = place {
                        placement.push_str(&format!("  n{i}: {p}\n"));
                    }
                } else {
                    sinks.push_str(&format!("  - {{channel: t{i}/in, adapter: stdout-text}}\n"));
                }
            }
            Lane::Vision {
                width,
                height,
                threshold,
                block,
                min_score,
                label,
            } => {
                channels.push_str(&format!("  - {{name: v{i}/img, kind: image}}\n"));
                channels.push_str(&format!("  - {{name: v{i}/count, kind: scalar}}\n"));
                sources.push_str(&format!(
                    "  - {{channel: v{i}/img, adapter: synthetic-frames, params: {{width: {width}, height: {height}, blocks: [[[0, 0]]]}}}}\n"
                ));
                nodes.push_str(&format!(
                    "  - name: n{i}\n    model: det\n    backend: stub-detector\n    device: {}\n    labels: [{labels}]\n    config: {{threshold: {threshold}, block: {block}, label: {label}}}\n    inputs: [v{i}/img]\n    post:\n      - {{op: count, params: {{label: {label}, min_score: {min_score:?}}}, publish: v{i}/count}}\n",
                    yaml_str(device)
                ));
                sinks.push_str(&format!("  - {{channel: v{i}/count, adapter: stdout-text}}\n"));
                if let Some(p) = place {
                    placement.push_str(&format!("  n{i}: {p}\n"));
                }
            }
        }
    }
    let sched: Vec<String> = schedule
        .iter()
        .map(|&k| {
            let i = k % lanes.len();
            match &lanes[i].0 {
                Lane::Text { .. } => format!("t{i}/in"),
                Lane::Vision { .. } => format!("v{i}/img"),
            }
        })
        .collect();
    let mut out = format!("version: 1\nchannels:\n{channels}");
    for (key, body) in [
        ("nodes", nodes),
        ("sources", sources),
        ("sinks", sinks),
        ("placement", placement),
    ] {
        if !body.is_empty() {
            out.push_str(&format!("{key}:\n{body}"));
        }
    }
    if !sched.is_empty() {
        out.push_str(&format!("schedule: [{}]\n", sched.join(", ")));
    }
    out
}

fn spec_text() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(
            (
                lane(),
                placement(),
                prop::collection::vec("[a-z]{1,6}", 0..3),
                "[a-z]{1,4}(:[0-9])?",
            ),
            1..6,
        ),
        prop::collection::vec(any::<usize>(), 0..5),
    )
        .prop_map(|(lanes, schedule)| build(&lanes, &schedule))
}

fn structurally_equal(a: &PipelineSpec, b: &PipelineSpec) -> bool {
    a == b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn round_trip(text in spec_text()) {
        let spec = parse_spec(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        let out = serialize_spec(&spec);
        let again = parse_spec(&out).map_err(|e| TestCaseError::fail(format!("{e}\n{out}")))?;
        prop_assert!(structurally_equal(&spec, &again));
        prop_assert_eq!(serialize_spec(&again), out);
    }

    #[test]
    fn order_respects_every_edge(text in spec_text()) {
        let spec = parse_spec(&text).unwrap();
        let order = validate_graph(&spec).unwrap();
        let mut names: Vec<&str> = spec.nodes.iter().map(|n| n.name.as_str()).collect();
        names.sort();
        let mut sorted = order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, names);
        let pos: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        for a in &spec.nodes {
            for b in &spec.nodes {
                let feeds = oricf_core::spec::node_produces(a)
                    .iter()
                    .any(|c| b.inputs.iter().any(|i| i == c));
                if feeds {
                    prop_assert!(pos[a.name.as_str()] < pos[b.name.as_str()]);
                }
            }
        }
    }

    #[test]
    fn k_injected_violations_give_at_least_k(text in spec_text(), k in 1usize..5) {
        let mut bad = text.clone();
        for j in 0..k {
            bad.push_str(&format!("bogus_{j}: 1\n"));
        }
        let err = parse_spec(&bad).unwrap_err();
        prop_assert!(err.len() >= k);
    }
}
