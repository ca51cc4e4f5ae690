//! Typed in-process publish/subscribe channels.
//!
//! Every channel has at most one producer ([`Publisher`]) and any number of
//! subscribers. Each subscriber owns a bounded FIFO; a publish blocks while
//! any subscriber queue is full, so nothing is ever dropped.
//!
//! The bus also counts messages that have been enqueued but not yet
//! acknowledged by their consumer. A [`Delivery`] acknowledges on drop, so a
//! consumer that publishes follow-up messages before dropping the delivery
//! keeps the count above zero until the whole cascade has settled. The
//! sequenced scheduler uses [`Bus::wait_idle`] on that count.

pub mod adapters;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TryRecvError};
use thiserror::Error;

use crate::payload::{Payload, PayloadError, PayloadKind};

pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("duplicate channel {0:?}")]
    DuplicateChannel(String),
    #[error("channel {channel:?} carries {expected}, got {actual}")]
    KindMismatch {
        channel: String,
        expected: PayloadKind,
        actual: PayloadKind,
    },
    #[error("channel {channel:?} is produced by {producer:?}, not {caller:?}")]
    NotProducer {
        channel: String,
        producer: String,
        caller: String,
    },
    #[error("channel {0:?} is closed")]
    Closed(String),
    #[error("invalid payload on {channel:?}: {source}")]
    InvalidPayload {
        channel: String,
        #[source]
        source: PayloadError,
    },
}

/// One published value.
#[derive(Debug, Clone)]
pub struct Message {
    pub channel: Arc<str>,
    pub seq: u64,
    /// Nanoseconds since the bus was created.
    pub timestamp_ns: u64,
    pub payload: Arc<Payload>,
}

#[derive(Default)]
struct InFlight {
    count: Mutex<u64>,
    idle: Condvar,
}

impl InFlight {
    fn add(&self, n: u64) {
        *self.count.lock().unwrap() += n;
    }

    fn done(&self) {
        let mut c = self.count.lock().unwrap();
        *c = c.saturating_sub(1);
        if *c == 0 {
            self.idle.notify_all();
        }
    }
}

struct ChannelState {
    next_seq: u64,
    next_sub: u64,
    subscribers: Vec<(u64, Sender<Message>)>,
    producer: Option<String>,
    closed: bool,
}

struct Channel {
    name: Arc<str>,
    kind: PayloadKind,
    state: Mutex<ChannelState>,
}

struct BusInner {
    epoch: Instant,
    capacity: usize,
    channels: BTreeMap<String, Arc<Channel>>,
    in_flight: Arc<InFlight>,
}

/// Cheaply cloneable handle to a set of typed channels.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl fmt::Debug for Bus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bus")
            .field("channels", &self.channel_names())
            .field("capacity", &self.inner.capacity)
            .finish()
    }
}

impl Bus {
    /// Creates a bus with the default per-subscriber capacity.
    pub fn new<I, S>(channels: I) -> Result<Bus, BusError>
    where
        I: IntoIterator<Item = (S, PayloadKind)>,
        S: Into<String>,
    {
        Bus::with_capacity(channels, DEFAULT_CAPACITY)
    }

    pub fn with_capacity<I, S>(channels: I, capacity: usize) -> Result<Bus, BusError>
    where
        I: IntoIterator<Item = (S, PayloadKind)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (name, kind) in channels {
            let name: String = name.into();
            if map.contains_key(&name) {
                return Err(BusError::DuplicateChannel(name));
            }
            let ch = Channel {
                name: Arc::from(name.as_str()),
                kind,
                state: Mutex::new(ChannelState {
                    next_seq: 0,
                    next_sub: 0,
                    subscribers: Vec::new(),
                    producer: None,
                    closed: false,
                }),
            };
            map.insert(name, Arc::new(ch));
        }
        Ok(Bus {
            inner: Arc::new(BusInner {
                epoch: Instant::now(),
                capacity: capacity.max(1),
                channels: map,
                in_flight: Arc::default(),
            }),
        })
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.inner.channels.keys().cloned().collect()
    }

    pub fn channel_kind(&self, channel: &str) -> Option<PayloadKind> {
        self.inner.channels.get(channel).map(|c| c.kind)
    }

    fn channel(&self, name: &str) -> Result<&Arc<Channel>, BusError> {
        self.inner
            .channels
            .get(name)
            .ok_or_else(|| BusError::UnknownChannel(name.to_string()))
    }

    /// Registers `owner` as the single producer of `channel`.
    pub fn publisher(&self, channel: &str, owner: &str) -> Result<Publisher, BusError> {
        let ch = self.channel(channel)?;
        let mut st = ch.state.lock().unwrap();
        if let Some(existing) = &st.producer {
            return Err(BusError::NotProducer {
                channel: channel.to_string(),
                producer: existing.clone(),
                caller: owner.to_string(),
            });
        }
        st.producer = Some(owner.to_string());
        drop(st);
        Ok(Publisher {
            channel: ch.clone(),
            bus: self.inner.clone(),
        })
    }

    /// Receives every message published on `channel` from now on.
    pub fn subscribe(&self, channel: &str) -> Result<Subscription, BusError> {
        let ch = self.channel(channel)?;
        let (tx, rx) = bounded(self.inner.capacity);
        let mut st = ch.state.lock().unwrap();
        let id = st.next_sub;
        st.next_sub += 1;
        if !st.closed {
            st.subscribers.push((id, tx));
        }
        drop(st);
        Ok(Subscription {
            channel: ch.clone(),
            id,
            rx,
            in_flight: self.inner.in_flight.clone(),
        })
    }

    /// Closes a channel from outside its producer: subscribers see end of
    /// stream once drained, later publishes fail with [`BusError::Closed`].
    pub fn close(&self, channel: &str) -> Result<(), BusError> {
        let ch = self.channel(channel)?;
        close_channel(ch);
        Ok(())
    }

    /// Number of published messages not yet acknowledged by a consumer.
    pub fn in_flight(&self) -> u64 {
        *self.inner.in_flight.count.lock().unwrap()
    }

    /// Blocks until no message is in flight. Returns false on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut c = self.inner.in_flight.count.lock().unwrap();
        while *c > 0 {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            c = self.inner.in_flight.idle.wait_timeout(c, deadline - now).unwrap().0;
        }
        true
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.inner.epoch.elapsed().as_nanos() as u64
    }
}

fn close_channel(ch: &Channel) {
    let mut st = ch.state.lock().unwrap();
    st.closed = true;
    st.subscribers.clear();
}

/// The producer side of one channel. Dropping it closes the channel.
pub struct Publisher {
    channel: Arc<Channel>,
    bus: Arc<BusInner>,
}

impl fmt::Debug for Publisher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Publisher")
            .field("channel", &self.channel.name)
            .finish()
    }
}

impl Publisher {
    pub fn channel(&self) -> &str {
        &self.channel.name
    }

    pub fn kind(&self) -> PayloadKind {
        self.channel.kind
    }

    /// Publishes to every current subscriber and returns the assigned seq.
    /// Blocks while a subscriber queue is full.
    pub fn publish(&self, payload: Payload) -> Result<u64, BusError> {
        let name = &self.channel.name;
        if !self.channel.kind.admits(&payload) {
            return Err(BusError::KindMismatch {
                channel: name.to_string(),
                expected: self.channel.kind,
                actual: payload.kind(),
            });
        }
        payload.validate().map_err(|source| BusError::InvalidPayload {
            channel: name.to_string(),
            source,
        })?;
        let mut st = self.channel.state.lock().unwrap();
        if st.closed {
            return Err(BusError::Closed(name.to_string()));
        }
        let seq = st.next_seq;
        st.next_seq += 1;
        let msg = Message {
            channel: name.clone(),
            seq,
            timestamp_ns: self.bus.epoch.elapsed().as_nanos() as u64,
            payload: Arc::new(payload),
        };
        let in_flight = &self.bus.in_flight;
        st.subscribers.retain(|(_, tx)| {
            in_flight.add(1);
            match tx.send(msg.clone()) {
                Ok(()) => true,
                Err(_) => {
                    in_flight.done();
                    false
                }
            }
        });
        Ok(seq)
    }

    /// Number of messages published so far.
    pub fn published(&self) -> u64 {
        self.channel.state.lock().unwrap().next_seq
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        close_channel(&self.channel);
    }
}

/// A single consumer's queue on one channel.
pub struct Subscription {
    channel: Arc<Channel>,
    id: u64,
    rx: Receiver<Message>,
    in_flight: Arc<InFlight>,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription")
            .field("channel", &self.channel.name)
            .field("id", &self.id)
            .finish()
    }
}

impl Subscription {
    pub fn channel(&self) -> &str {
        &self.channel.name
    }

    /// Blocks for the next message; `None` once the channel is closed and drained.
    pub fn recv(&self) -> Option<Delivery> {
        self.rx.recv().ok().map(|m| self.deliver(m))
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Delivery, RecvTimeoutError> {
        self.rx.recv_timeout(timeout).map(|m| self.deliver(m))
    }

    pub fn try_recv(&self) -> Result<Delivery, TryRecvError> {
        self.rx.try_recv().map(|m| self.deliver(m))
    }

    /// Raw receiver, for use with `crossbeam_channel::Select`. Messages taken
    /// from it must be passed through [`Subscription::deliver`].
    pub fn receiver(&self) -> &Receiver<Message> {
        &self.rx
    }

    pub fn deliver(&self, message: Message) -> Delivery {
        Delivery {
            message,
            in_flight: self.in_flight.clone(),
        }
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        // Unregister, draining meanwhile so a producer blocked on our full
        // queue can finish and release the channel lock.
        loop {
            while let Ok(_m) = self.rx.try_recv() {
                self.in_flight.done();
            }
            if let Ok(mut st) = self.channel.state.try_lock() {
                st.subscribers.retain(|(id, _)| *id != self.id);
                break;
            }
            std::thread::yield_now();
        }
        while let Ok(_m) = self.rx.try_recv() {
            self.in_flight.done();
        }
    }
}

/// A received message. Acknowledged when dropped.
pub struct Delivery {
    message: Message,
    in_flight: Arc<InFlight>,
}

impl Deref for Delivery {
    type Target = Message;

    fn deref(&self) -> &Message {
        &self.message
    }
}

impl Delivery {
    pub fn message(&self) -> &Message {
        &self.message
    }
}

impl Drop for Delivery {
    fn drop(&mut self) {
        self.in_flight.done();
    }
}
