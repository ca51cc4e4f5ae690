//! The declarative pipeline format.
//!
//! [`parse_spec`] turns YAML text into a validated [`PipelineSpec`] or the
//! full list of problems found; [`serialize_spec`] writes the canonical form
//! back; [`validate_graph`] orders nodes so every producer precedes its
//! consumers. The schema is documented in `SCHEMA.md` at the repository root.

mod check;
mod emit;
mod graph;
mod parse;

pub use emit::serialize_spec;
pub use graph::{node_consumes, node_produces, validate_graph, validate_graph_with};
pub use parse::{parse_spec, parse_spec_with};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::params::Params;
use crate::payload::PayloadKind;
use crate::postproc::PostOp;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub version: u64,
    pub channels: Vec<ChannelDecl>,
    pub nodes: Vec<NodeSpec>,
    pub sources: Vec<SourceDecl>,
    pub sinks: Vec<SinkDecl>,
    /// Nodes absent from this map run onboard.
    pub placement: BTreeMap<String, PlacementTarget>,
    /// Sequenced-mode interleave order: each entry names a source channel
    /// whose next item is emitted once the pipeline is idle. Empty means
    /// free-running sources.
    pub schedule: Vec<String>,
}

impl PipelineSpec {
    pub fn channel(&self, name: &str) -> Option<&ChannelDecl> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn placement_of(&self, node: &str) -> PlacementTarget {
        self.placement.get(node).cloned().unwrap_or(PlacementTarget::Onboard)
    }

    pub fn is_sequenced(&self) -> bool {
        !self.schedule.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelDecl {
    pub name: String,
    pub kind: PayloadKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub model_id: String,
    pub backend: String,
    /// Opaque label handed to the backend; never interpreted here.
    pub device: String,
    pub labels: Vec<String>,
    pub backend_config: Params,
    /// The first input triggers inference; the rest are context channels.
    pub inputs: Vec<String>,
    pub publish_raw: Option<String>,
    pub post: Vec<PostStep>,
}

impl NodeSpec {
    pub fn trigger(&self) -> &str {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostStep {
    pub op: PostOp,
    pub params: Params,
    pub publish: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterDecl {
    pub channel: String,
    pub adapter: String,
    pub params: Params,
}

pub type SourceDecl = AdapterDecl;
pub type SinkDecl = AdapterDecl;

/// Where a node's inference executes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PlacementTarget {
    Onboard,
    Edge { host: String, port: u16 },
}

impl PlacementTarget {
    /// `host:port`, for edge targets.
    pub fn address(&self) -> Option<String> {
        match self {
            PlacementTarget::Onboard => None,
            PlacementTarget::Edge { host, port } => Some(format!("{host}:{port}")),
        }
    }
}

impl fmt::Display for PlacementTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlacementTarget::Onboard => f.write_str("onboard"),
            PlacementTarget::Edge { host, port } => write!(f, "edge://{host}:{port}"),
        }
    }
}

impl FromStr for PlacementTarget {
    type Err = String;

    /// `onboard` or `edge://<host>:<port>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "onboard" {
            return Ok(PlacementTarget::Onboard);
        }
        let rest = s
            .strip_prefix("edge://")
            .ok_or_else(|| format!("placement {s:?} must be `onboard` or `edge://<host>:<port>`"))?;
        let (host, port) = rest
            .rsplit_once(':')
            .ok_or_else(|| format!("edge address {rest:?} is missing a port"))?;
        let port: u16 = port
            .parse()
            .map_err(|_| format!("edge port {port:?} is not a 16-bit number"))?;
        if host.is_empty() || host.contains(|c: char| c.is_whitespace() || c == '/') {
            return Err(format!("edge host {host:?} is invalid"));
        }
        Ok(PlacementTarget::Edge {
            host: host.to_string(),
            port,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagnosticKind {
    Syntax,
    UnknownField,
    MissingField,
    InvalidValue,
    UnsupportedVersion,
    Duplicate,
    UndeclaredChannel,
    UnknownNode,
    MultipleProducers,
    KindMismatch,
    UnknownBackend,
    UnknownAdapter,
    Cycle,
    OrphanChannel,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::Syntax => "syntax",
            DiagnosticKind::UnknownField => "unknown-field",
            DiagnosticKind::MissingField => "missing-field",
            DiagnosticKind::InvalidValue => "invalid-value",
            DiagnosticKind::UnsupportedVersion => "unsupported-version",
            DiagnosticKind::Duplicate => "duplicate",
            DiagnosticKind::UndeclaredChannel => "undeclared-channel",
            DiagnosticKind::UnknownNode => "unknown-node",
            DiagnosticKind::MultipleProducers => "multiple-producers",
            DiagnosticKind::KindMismatch => "kind-mismatch",
            DiagnosticKind::UnknownBackend => "unknown-backend",
            DiagnosticKind::UnknownAdapter => "unknown-adapter",
            DiagnosticKind::Cycle => "cycle",
            DiagnosticKind::OrphanChannel => "orphan-channel",
        }
    }
}

/// One problem found in a spec, located by a path such as `nodes[0].inputs`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, kind: DiagnosticKind, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            path: path.into(),
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "<root>" } else { &self.path };
        write!(f, "{path}: [{}] {}", self.kind.as_str(), self.message)
    }
}

/// Non-empty list of diagnostics from a failed parse or validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosticList(pub Vec<Diagnostic>);

impl DiagnosticList {
    pub fn iter(&self) -> std::slice::Iter<'_, Diagnostic> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn of_kind(&self, kind: DiagnosticKind) -> Vec<&Diagnostic> {
        self.0.iter().filter(|d| d.kind == kind).collect()
    }
}

impl fmt::Display for DiagnosticList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for DiagnosticList {}

/// Names of channels and nodes: nonempty, no whitespace.
pub(crate) fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.contains(char::is_whitespace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_grammar() {
        assert_eq!("onboard".parse::<PlacementTarget>().unwrap(), PlacementTarget::Onboard);
        let e: PlacementTarget = "edge://h:7070".parse().unwrap();
        assert_eq!(
            e,
            PlacementTarget::Edge {
                host: "h".into(),
                port: 7070
            }
        );
        assert_eq!(e.to_string(), "edge://h:7070");
        assert_eq!(e.address().unwrap(), "h:7070");
        let v6: PlacementTarget = "edge://[::1]:9".parse().unwrap();
        assert_eq!(v6.to_string(), "edge://[::1]:9");
        for bad in [
            "edge",
            "edge://h",
            "edge://h:70000",
            "edge://:1",
            "tcp://h:1",
            "edge://h:-1",
        ] {
            assert!(bad.parse::<PlacementTarget>().is_err(), "{bad}");
        }
    }
}
