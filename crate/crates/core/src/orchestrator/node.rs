use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Select, TryRecvError};
use serde::{Deserialize, Serialize};

use crate::bus::{Delivery, Publisher, Subscription};
use crate::inference::{InferenceContext, ModelHandle, ModelRegistry};
use crate::offload::{OffloadError, RemoteModelProxy};
use crate::payload::Payload;
use crate::postproc::PostChain;
use crate::spec::{NodeSpec, PlacementTarget};

const POLL: Duration = Duration::from_millis(20);

/// Where a node's `infer` calls go.
pub enum Executor {
    Local {
        models: Arc<ModelRegistry>,
        handle: ModelHandle,
    },
    Remote(RemoteModelProxy),
}

enum ExecError {
    /// The message is dropped; the node keeps running.
    Message(String),
    /// The node cannot make progress any more.
    Fatal(String),
}

impl Executor {
    fn infer(&self, trigger: &Payload, ctx: &InferenceContext) -> Result<Payload, ExecError> {
        let inputs = std::slice::from_ref(trigger);
        match self {
            Executor::Local { models, handle } => models
                .infer(handle, inputs, ctx)
                .map_err(|e| ExecError::Message(e.to_string())),
            Executor::Remote(proxy) => proxy.infer(inputs, ctx).map_err(|e| match e {
                OffloadError::Unavailable { .. } => ExecError::Fatal(e.to_string()),
                other => ExecError::Message(other.to_string()),
            }),
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, Executor::Remote(_))
    }
}

/// One node, wired to the bus and ready to run.
pub struct NodeRuntime {
    pub(super) spec: NodeSpec,
    pub(super) placement: PlacementTarget,
    pub(super) executor: Executor,
    pub(super) trigger: Subscription,
    pub(super) context: Vec<Subscription>,
    pub(super) raw: Option<Publisher>,
    pub(super) chain: PostChain,
}

impl NodeRuntime {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &NodeSpec {
        &self.spec
    }

    pub fn placement(&self) -> &PlacementTarget {
        &self.placement
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn trigger_channel(&self) -> &str {
        self.trigger.channel()
    }

    /// Channels read for their latest value only.
    pub fn context_channels(&self) -> Vec<&str> {
        self.context.iter().map(|s| s.channel()).collect()
    }
}

/// Per-node totals of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub placement: String,
    /// Trigger messages taken from the input channel.
    pub messages_in: u64,
    /// Messages published on every channel this node produces.
    pub messages_out: u64,
    /// Messages dropped because inference, post-processing or publishing failed.
    pub errors: u64,
    /// Set once the remote worker stayed unreachable through every retry.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    /// Messages received per consumed channel, trigger and context alike.
    pub received: BTreeMap<String, u64>,
    /// Messages published per produced channel.
    pub published: BTreeMap<String, u64>,
}

enum Event {
    Trigger(Delivery),
    TriggerClosed,
    Context(usize, Delivery),
    ContextClosed(usize),
    Idle,
}

struct Task {
    rt: NodeRuntime,
    latest: InferenceContext,
    report: NodeReport,
}

pub(super) fn run_node(rt: NodeRuntime, stop: Arc<AtomicBool>) -> NodeReport {
    let mut report = NodeReport {
        placement: rt.placement.to_string(),
        ..NodeReport::default()
    };
    report.received.insert(rt.trigger.channel().to_string(), 0);
    for s in &rt.context {
        report.received.insert(s.channel().to_string(), 0);
    }
    let mut task = Task {
        rt,
        latest: InferenceContext::default(),
        report,
    };
    let mut open: Vec<usize> = (0..task.rt.context.len()).collect();
    while !stop.load(Ordering::SeqCst) {
        match task.next_event(&open) {
            Event::Trigger(d) => {
                task.absorb_ready_context(&mut open);
                task.handle(&d);
            }
            Event::TriggerClosed => break,
            Event::Context(i, d) => task.absorb(i, &d),
            Event::ContextClosed(i) => open.retain(|&j| j != i),
            Event::Idle => {}
        }
    }
    task.finish()
}

impl Task {
    fn next_event(&self, open: &[usize]) -> Event {
        let mut sel = Select::new();
        let trig = self.rt.trigger.receiver();
        sel.recv(trig);
        for &i in open {
            sel.recv(self.rt.context[i].receiver());
        }
        let Ok(op) = sel.select_timeout(POLL) else {
            return Event::Idle;
        };
        match op.index() {
            0 => match op.recv(trig) {
                Ok(m) => Event::Trigger(self.rt.trigger.deliver(m)),
                Err(_) => Event::TriggerClosed,
            },
            k => {
                let i = open[k - 1];
                let sub = &self.rt.context[i];
                match op.recv(sub.receiver()) {
                    Ok(m) => Event::Context(i, sub.deliver(m)),
                    Err(_) => Event::ContextClosed(i),
                }
            }
        }
    }

    fn absorb(&mut self, i: usize, d: &Delivery) {
        let ch = self.rt.context[i].channel().to_string();
        *self.report.received.entry(ch.clone()).or_default() += 1;
        self.latest.latest.insert(ch, (*d.payload).clone());
    }

    /// Applies every context value already queued, so the trigger sees the
    /// newest state available.
    fn absorb_ready_context(&mut self, open: &mut Vec<usize>) {
        let mut closed = Vec::new();
        for &i in open.iter() {
            loop {
                match self.rt.context[i].try_recv() {
                    Ok(d) => self.absorb(i, &d),
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => {
                        closed.push(i);
                        break;
                    }
                }
            }
        }
        open.retain(|i| !closed.contains(i));
    }

    fn fail(&mut self, why: String) {
        log::warn!("node {}: {why}", self.rt.spec.name);
        self.report.errors += 1;
        self.report.last_error = Some(why);
    }

    // The delivery is held until all follow-up messages are published.
    fn handle(&mut self, d: &Delivery) {
        self.report.messages_in += 1;
        *self
            .report
            .received
            .entry(self.rt.trigger.channel().to_string())
            .or_default() += 1;
        if self.report.failed {
            self.report.errors += 1;
            return;
        }
        let trigger: &Payload = &d.payload;
        let out = match self.rt.executor.infer(trigger, &self.latest) {
            Ok(p) => p,
            Err(ExecError::Message(e)) => return self.fail(e),
            Err(ExecError::Fatal(e)) => {
                self.report.failed = true;
                return self.fail(e);
            }
        };
        if let Some(p) = &self.rt.raw {
            if let Err(e) = p.publish(out.clone()) {
                return self.fail(e.to_string());
            }
        }
        if let Err(e) = self.rt.chain.run(out, trigger, &self.latest) {
            self.fail(e.to_string());
        }
    }

    fn finish(mut self) -> NodeReport {
        let mut counts: Vec<(String, u64)> = self
            .rt
            .raw
            .iter()
            .map(|p| (p.channel().to_string(), p.published()))
            .collect();
        counts.extend(self.rt.chain.publish_counts());
        for (ch, n) in counts {
            self.report.messages_out += n;
            *self.report.published.entry(ch).or_default() += n;
        }
        self.report
    }
}
