//! Declarative multimodal inference pipelines.
//!
//! A pipeline is described in YAML ([`spec`]), wired over typed in-process
//! channels ([`bus`]), executed by pluggable model backends ([`inference`])
//! followed by post-processing chains ([`postproc`]), and driven by the
//! [`orchestrator`]. Any node can be placed on a remote worker speaking the
//! [`offload`] protocol. [`telemetry`] turns utilization traces into power
//! and energy estimates.

pub mod bus;
pub mod inference;
pub mod offload;
pub mod orchestrator;
pub mod params;
pub mod payload;
pub mod postproc;
pub mod registry;
pub mod spec;
pub mod telemetry;
