//! Turns a validated spec into running tasks and drives messages through them.
//!
//! Every node, source and sink runs on its own thread and talks to the others
//! only through the [`Bus`]. A node's first input is its trigger: each message
//! there causes one inference. Its other inputs, and any channels named by
//! its backend config or `format` steps, are context channels whose latest
//! value is handed to the model and the post chain.
//!
//! With a `schedule`, sources named there are driven one item at a time and
//! the next item is only emitted once every message on the bus has been
//! consumed, which makes whole runs reproducible. Sources not named in the
//! schedule, or all sources without one, run freely at their own pace.

mod dot;
mod node;

pub use dot::{graph_dot, graph_dot_with};
pub use node::{Executor, NodeReport, NodeRuntime};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::adapters::{
    source_interval, spawn_sink, spawn_source, AdapterError, AdapterHandle, AdapterStatus, SinkAdapter, SourceAdapter,
};
use crate::bus::{Bus, BusError, Publisher, Subscription};
use crate::inference::InferError;
use crate::offload::{OffloadError, RemoteModelProxy, RetryPolicy};
use crate::payload::Payload;
use crate::postproc::{CompiledStep, PostChain};
use crate::registry::Registry;
use crate::spec::{node_consumes, validate_graph_with, DiagnosticList, PipelineSpec, PlacementTarget};

const POLL: Duration = Duration::from_millis(5);
const SOURCE_GRACE: Duration = Duration::from_millis(200);

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid pipeline:\n{0}")]
    Invalid(DiagnosticList),
    #[error("placement: {0}")]
    Placement(String),
    #[error("node {node:?}: {source}")]
    Model {
        node: String,
        #[source]
        source: InferError,
    },
    #[error("node {node:?}: worker {addr}: {source}")]
    Worker {
        node: String,
        addr: String,
        #[source]
        source: OffloadError,
    },
    #[error("node {node:?}: {reason}")]
    Chain { node: String, reason: String },
    #[error("{channel}: {source}")]
    Adapter {
        channel: String,
        #[source]
        source: AdapterError,
    },
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Returns `spec` with `overrides` applied on top of its placement section.
/// Later entries win.
pub fn with_placement(
    spec: &PipelineSpec,
    overrides: &[(String, PlacementTarget)],
) -> Result<PipelineSpec, BuildError> {
    let mut out = spec.clone();
    for (node, target) in overrides {
        if spec.node(node).is_none() {
            return Err(BuildError::Placement(format!("unknown node {node:?}")));
        }
        out.placement.insert(node.clone(), target.clone());
    }
    Ok(out)
}

/// Creates the bus for a spec's channels.
pub fn bus_for(spec: &PipelineSpec) -> Result<Bus, BusError> {
    Bus::new(spec.channels.iter().map(|c| (c.name.clone(), c.kind)))
}

/// Wires every node to `bus` in topological order: subscriptions, publishers
/// and a loaded model, local or on the node's worker.
pub fn build_runtime(
    spec: &PipelineSpec,
    registry: &Registry,
    bus: &Bus,
    retry: RetryPolicy,
) -> Result<Vec<NodeRuntime>, BuildError> {
    let order = validate_graph_with(spec, registry).map_err(BuildError::Invalid)?;
    let models = Arc::new(registry.model_registry());
    let mut out = Vec::with_capacity(order.len());
    for name in order {
        let n = spec.node(&name).expect("ordered names come from the spec");
        let placement = spec.placement_of(&n.name);
        let executor = match placement.address() {
            None => {
                let handle = models
                    .load_model(&n.model_id, &n.backend, &n.backend_config)
                    .map_err(|source| BuildError::Model {
                        node: n.name.clone(),
                        source,
                    })?;
                Executor::Local {
                    models: models.clone(),
                    handle,
                }
            }
            Some(addr) => {
                let proxy = RemoteModelProxy::connect(&addr, &n.model_id, &n.backend, &n.backend_config, retry)
                    .map_err(|source| BuildError::Worker {
                        node: n.name.clone(),
                        addr: addr.clone(),
                        source,
                    })?;
                log::info!("node {} runs on {addr}", n.name);
                Executor::Remote(proxy)
            }
        };
        let trigger = bus.subscribe(n.trigger())?;
        let context = node_consumes(n, registry)
            .iter()
            .filter(|c| c.as_str() != n.trigger())
            .map(|c| bus.subscribe(c))
            .collect::<Result<Vec<_>, _>>()?;
        let raw = n
            .publish_raw
            .as_deref()
            .map(|c| bus.publisher(c, &n.name))
            .transpose()?;
        let chain_err = |reason: String| BuildError::Chain {
            node: n.name.clone(),
            reason,
        };
        let mut steps = Vec::with_capacity(n.post.len());
        for (i, step) in n.post.iter().enumerate() {
            let compiled =
                CompiledStep::compile(step.op, &step.params).map_err(|e| chain_err(format!("post[{i}]: {e}")))?;
            let publisher = step.publish.as_deref().map(|c| bus.publisher(c, &n.name)).transpose()?;
            steps.push((compiled, publisher));
        }
        let output_kind = registry
            .backend(&n.backend)
            .map(|b| b.descriptor().output_kind)
            .ok_or_else(|| chain_err(format!("unknown backend {:?}", n.backend)))?;
        let trigger_kind = bus.channel_kind(n.trigger()).expect("subscribed above");
        let chain = PostChain::new(output_kind, trigger_kind, steps).map_err(chain_err)?;
        out.push(NodeRuntime {
            spec: n.clone(),
            placement,
            executor,
            trigger,
            context,
            raw,
            chain,
        });
    }
    Ok(out)
}

/// When a run ends. Every run also ends once its sources are exhausted and
/// all queues have drained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopCondition {
    #[default]
    Exhaustion,
    /// Stop after this long even if sources still have data.
    Duration(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub stop: StopCondition,
    /// Record wall time in the report. Off by default so that reports of
    /// sequenced runs are byte-stable.
    pub timing: bool,
    /// How long the scheduler waits for the pipeline to settle after each
    /// scheduled item before moving on anyway.
    pub settle_timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stop: StopCondition::Exhaustion,
            timing: false,
            settle_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterReport {
    pub channel: String,
    pub adapter: String,
    pub items: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Exhausted,
    Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sequenced: bool,
    pub stopped_by: StopReason,
    pub nodes: BTreeMap<String, NodeReport>,
    /// Messages published per channel.
    pub channels: BTreeMap<String, u64>,
    pub sources: Vec<AdapterReport>,
    pub sinks: Vec<AdapterReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry_trace: Option<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    /// Nodes whose worker was lost during the run.
    pub fn failed_nodes(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|(_, r)| r.failed)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Records every payload published on one channel.
pub struct Tap {
    thread: JoinHandle<Vec<Payload>>,
}

impl Tap {
    /// Payloads in publish order. Returns once the channel has closed,
    /// which [`Pipeline::run`] guarantees for every channel.
    pub fn join(self) -> Vec<Payload> {
        self.thread.join().unwrap_or_default()
    }
}

struct PendingSource {
    channel: String,
    adapter: String,
    interval: Duration,
    source: Box<dyn SourceAdapter>,
    publisher: Publisher,
}

struct PendingSink {
    channel: String,
    adapter: String,
    sink: Box<dyn SinkAdapter>,
    subscription: Subscription,
}

/// A fully wired pipeline that has not started yet.
pub struct Pipeline {
    bus: Bus,
    schedule: Vec<String>,
    runtimes: Vec<NodeRuntime>,
    sources: Vec<PendingSource>,
    sinks: Vec<PendingSink>,
}

impl Pipeline {
    /// Validates `spec`, loads every model (connecting to workers for edge
    /// nodes) and opens all adapters.
    pub fn build(spec: &PipelineSpec, registry: &Registry, retry: RetryPolicy) -> Result<Pipeline, BuildError> {
        let bus = bus_for(spec)?;
        let runtimes = build_runtime(spec, registry, &bus, retry)?;
        let adapter_err = |channel: &str| {
            let channel = channel.to_string();
            move |source| BuildError::Adapter { channel, source }
        };
        let mut sources = Vec::with_capacity(spec.sources.len());
        for s in &spec.sources {
            let source = registry
                .adapters
                .open_source(&s.adapter, &s.params)
                .map_err(adapter_err(&s.channel))?;
            let publisher = bus.publisher(&s.channel, &format!("source:{}", s.adapter))?;
            sources.push(PendingSource {
                channel: s.channel.clone(),
                adapter: s.adapter.clone(),
                interval: source_interval(&s.params),
                source,
                publisher,
            });
        }
        let mut sinks = Vec::with_capacity(spec.sinks.len());
        for s in &spec.sinks {
            let sink = registry
                .adapters
                .open_sink(&s.adapter, &s.params)
                .map_err(adapter_err(&s.channel))?;
            sinks.push(PendingSink {
                channel: s.channel.clone(),
                adapter: s.adapter.clone(),
                sink,
                subscription: bus.subscribe(&s.channel)?,
            });
        }
        // Nobody will ever publish on these; close them so readers finish.
        let mut unproduced: BTreeMap<String, ()> = spec.channels.iter().map(|c| (c.name.clone(), ())).collect();
        for r in &runtimes {
            if let Some(p) = &r.raw {
                unproduced.remove(p.channel());
            }
            for c in r.spec.post.iter().filter_map(|s| s.publish.as_ref()) {
                unproduced.remove(c);
            }
        }
        for s in &sources {
            unproduced.remove(&s.channel);
        }
        for c in unproduced.keys() {
            bus.close(c)?;
        }
        Ok(Pipeline {
            bus,
            schedule: spec.schedule.clone(),
            runtimes,
            sources,
            sinks,
        })
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn runtimes(&self) -> &[NodeRuntime] {
        &self.runtimes
    }

    /// Records `channel` for the coming run.
    pub fn tap(&self, channel: &str) -> Result<Tap, BusError> {
        let sub = self.bus.subscribe(channel)?;
        let thread = thread::spawn(move || {
            let mut out = Vec::new();
            while let Some(d) = sub.recv() {
                out.push((*d.payload).clone());
            }
            out
        });
        Ok(Tap { thread })
    }

    /// Taps every channel.
    pub fn tap_all(&self) -> Result<BTreeMap<String, Tap>, BusError> {
        self.bus
            .channel_names()
            .into_iter()
            .map(|c| self.tap(&c).map(|t| (c, t)))
            .collect()
    }

    pub fn run(self, options: &RunOptions) -> RunReport {
        run(self, options)
    }
}

enum SourceTask {
    Free {
        channel: String,
        adapter: String,
        handle: AdapterHandle,
    },
    Sequenced(JoinHandle<Vec<AdapterReport>>),
}

/// Runs a built pipeline until its sources are exhausted and every queue
/// has drained, or until the stop condition fires.
pub fn run(pipeline: Pipeline, options: &RunOptions) -> RunReport {
    let started = Instant::now();
    let Pipeline {
        bus,
        schedule,
        runtimes,
        sources,
        sinks,
    } = pipeline;
    let sequenced = !schedule.is_empty();
    let stop = Arc::new(AtomicBool::new(false));
    let mut channels: BTreeMap<String, u64> = bus.channel_names().into_iter().map(|c| (c, 0)).collect();

    let sink_tasks: Vec<(String, String, AdapterHandle)> = sinks
        .into_iter()
        .map(|s| (s.channel, s.adapter, spawn_sink(s.sink, s.subscription)))
        .collect();
    let node_tasks: Vec<(String, JoinHandle<NodeReport>)> = runtimes
        .into_iter()
        .map(|rt| {
            let name = rt.name().to_string();
            let flag = stop.clone();
            (name, thread::spawn(move || node::run_node(rt, flag)))
        })
        .collect();

    let (scheduled, free): (Vec<_>, Vec<_>) = sources.into_iter().partition(|s| schedule.contains(&s.channel));
    let mut source_tasks: Vec<SourceTask> = free
        .into_iter()
        .map(|s| SourceTask::Free {
            channel: s.channel,
            adapter: s.adapter,
            handle: spawn_source(s.source, s.publisher, s.interval),
        })
        .collect();
    if sequenced {
        let bus = bus.clone();
        let flag = stop.clone();
        let settle = options.settle_timeout;
        source_tasks.push(SourceTask::Sequenced(thread::spawn(move || {
            run_schedule(&schedule, scheduled, &bus, &flag, settle)
        })));
    }

    let deadline = match options.stop {
        StopCondition::Exhaustion => None,
        StopCondition::Duration(d) => Some(started + d),
    };
    let mut stopped_by = StopReason::Exhausted;
    loop {
        let done = node_tasks.iter().all(|(_, h)| h.is_finished())
            && sink_tasks.iter().all(|(_, _, h)| h.is_finished())
            && source_tasks.iter().all(|s| match s {
                SourceTask::Free { handle, .. } => handle.is_finished(),
                SourceTask::Sequenced(h) => h.is_finished(),
            });
        if done {
            break;
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            stopped_by = StopReason::Duration;
            break;
        }
        thread::sleep(POLL);
    }

    stop.store(true, Ordering::SeqCst);
    let mut source_reports = Vec::new();
    for task in source_tasks {
        match task {
            SourceTask::Free {
                channel,
                adapter,
                handle,
            } => {
                handle.stop();
                let give_up = Instant::now() + SOURCE_GRACE;
                while !handle.is_finished() && Instant::now() < give_up {
                    thread::sleep(POLL);
                }
                if handle.is_finished() {
                    let AdapterStatus { items, error, .. } = handle.join();
                    source_reports.push(AdapterReport {
                        channel,
                        adapter,
                        items,
                        error,
                    });
                } else {
                    // Blocked in a read; the thread is left behind.
                    log::warn!("source {adapter} on {channel} did not stop");
                    source_reports.push(AdapterReport {
                        channel,
                        adapter,
                        items: 0,
                        error: Some("did not stop".into()),
                    });
                }
            }
            SourceTask::Sequenced(h) => source_reports.extend(h.join().unwrap_or_default()),
        }
    }
    let mut nodes = BTreeMap::new();
    for (name, h) in node_tasks {
        let report = h.join().unwrap_or_else(|_| NodeReport {
            failed: true,
            last_error: Some("node task panicked".into()),
            ..NodeReport::default()
        });
        nodes.insert(name, report);
    }
    // Sinks and taps finish once their channel has closed.
    for c in bus.channel_names() {
        let _ = bus.close(&c);
    }
    let sink_reports: Vec<AdapterReport> = sink_tasks
        .into_iter()
        .map(|(channel, adapter, h)| {
            h.stop();
            let AdapterStatus { items, error, .. } = h.join();
            AdapterReport {
                channel,
                adapter,
                items,
                error,
            }
        })
        .collect();

    for s in &source_reports {
        *channels.entry(s.channel.clone()).or_default() += s.items;
    }
    for r in nodes.values() {
        for (c, n) in &r.published {
            *channels.entry(c.clone()).or_default() += n;
        }
    }
    source_reports.sort_by(|a, b| a.channel.cmp(&b.channel));
    RunReport {
        sequenced,
        stopped_by,
        nodes,
        channels,
        sources: source_reports,
        sinks: sink_reports,
        wall_time_s: options.timing.then(|| started.elapsed().as_secs_f64()),
        telemetry_trace: None,
    }
}

/// Emits one item per schedule entry, each after the bus has gone idle.
fn run_schedule(
    schedule: &[String],
    sources: Vec<PendingSource>,
    bus: &Bus,
    stop: &AtomicBool,
    settle: Duration,
) -> Vec<AdapterReport> {
    let mut by_channel: BTreeMap<String, (PendingSource, AdapterReport, bool)> = sources
        .into_iter()
        .map(|s| {
            let report = AdapterReport {
                channel: s.channel.clone(),
                adapter: s.adapter.clone(),
                items: 0,
                error: None,
            };
            (s.channel.clone(), (s, report, false))
        })
        .collect();
    for entry in schedule {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Some((src, report, done)) = by_channel.get_mut(entry) else {
            continue;
        };
        if *done {
            log::debug!("schedule: {entry} is exhausted, entry skipped");
            continue;
        }
        match src.source.next() {
            Ok(Some(p)) => match src.publisher.publish(p) {
                Ok(_) => report.items += 1,
                Err(e) => {
                    report.error = Some(e.to_string());
                    *done = true;
                }
            },
            Ok(None) => *done = true,
            Err(e) => {
                log::warn!("source on {entry} failed: {e}");
                report.error = Some(e.to_string());
                *done = true;
            }
        }
        settle_bus(bus, stop, settle);
    }
    // Dropping the publishers closes the scheduled channels.
    by_channel.into_values().map(|(_, r, _)| r).collect()
}

fn settle_bus(bus: &Bus, stop: &AtomicBool, settle: Duration) {
    let give_up = Instant::now() + settle;
    while !bus.wait_idle(Duration::from_millis(50)) {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        if Instant::now() >= give_up {
            log::warn!("schedule: pipeline did not settle within {settle:?}; continuing");
            return;
        }
    }
}

/// Builds and runs `spec` in one step.
pub fn run_spec(
    spec: &PipelineSpec,
    registry: &Registry,
    retry: RetryPolicy,
    options: &RunOptions,
) -> Result<RunReport, BuildError> {
    Ok(Pipeline::build(spec, registry, retry)?.run(options))
}
