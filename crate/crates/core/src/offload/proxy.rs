//! Client side: a remote model behind the same infer contract as a local one.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use crate::inference::InferenceContext;
use crate::params::{canonical_yaml, Params};
use crate::payload::Payload;

use super::codec::{read_frame, write_frame, CodecError, ErrorCode, Message, ReadError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
    pub connect_timeout: Duration,
    /// Upper bound on waiting for one response.
    pub io_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            backoff: Duration::from_millis(200),
            connect_timeout: Duration::from_secs(2),
            io_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffloadError {
    /// The worker answered with an Error frame. Not retried.
    #[error("worker error {code}: {message}")]
    Remote { code: ErrorCode, message: String },
    #[error("worker {addr} unreachable after {attempts} attempts: {last}")]
    Unavailable { addr: String, attempts: u32, last: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("cannot encode request: {0}")]
    Encode(CodecError),
}

/// Transport-level failure that warrants reconnecting.
#[derive(Debug)]
struct Transport(String);

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_id: u64,
    handle: u32,
}

impl Conn {
    fn open(addr: &str, policy: &RetryPolicy) -> Result<Conn, Transport> {
        let mut last = Transport(format!("{addr}: no addresses"));
        let addrs = addr.to_socket_addrs().map_err(|e| Transport(format!("{addr}: {e}")))?;
        for sa in addrs {
            match TcpStream::connect_timeout(&sa, policy.connect_timeout) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    s.set_read_timeout(Some(policy.io_timeout))
                        .map_err(|e| Transport(e.to_string()))?;
                    let w = s.try_clone().map_err(|e| Transport(e.to_string()))?;
                    return Ok(Conn {
                        reader: BufReader::new(s),
                        writer: BufWriter::new(w),
                        next_id: 1,
                        handle: 0,
                    });
                }
                Err(e) => last = Transport(format!("{sa}: {e}")),
            }
        }
        Err(last)
    }

    /// Sends one request and waits for the response carrying its id.
    fn call(&mut self, msg: Message) -> Result<Result<Message, OffloadError>, Transport> {
        let id = self.next_id;
        self.next_id += 1;
        let frame = match msg.into_frame(id) {
            Ok(f) => f,
            Err(e) => return Ok(Err(OffloadError::Encode(e))),
        };
        write_frame(&mut self.writer, &frame).map_err(|e| Transport(format!("send: {e}")))?;
        let reply = match read_frame(&mut self.reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Err(Transport("connection closed by worker".into())),
            Err(ReadError::Io(e)) => return Err(Transport(format!("receive: {e}"))),
            Err(ReadError::Codec { error, .. }) => return Err(Transport(format!("receive: {error}"))),
        };
        if reply.request_id != id {
            return Err(Transport(format!(
                "response id {} does not match request id {id}",
                reply.request_id
            )));
        }
        match Message::from_frame(&reply) {
            Ok(Message::Error { code, message }) => Ok(Err(OffloadError::Remote { code, message })),
            Ok(m) => Ok(Ok(m)),
            Err(e) => Err(Transport(format!("malformed response: {e}"))),
        }
    }
}

/// A model loaded on a remote worker. One caller at a time; calls are
/// serialized internally.
pub struct RemoteModelProxy {
    addr: String,
    model_id: String,
    backend: String,
    config: String,
    policy: RetryPolicy,
    conn: Mutex<Option<Conn>>,
}

impl std::fmt::Debug for RemoteModelProxy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModelProxy")
            .field("addr", &self.addr)
            .field("model_id", &self.model_id)
            .field("backend", &self.backend)
            .finish()
    }
}

impl RemoteModelProxy {
    /// Connects and loads the model, retrying transport failures.
    pub fn connect(
        addr: &str,
        model_id: &str,
        backend: &str,
        config: &Params,
        policy: RetryPolicy,
    ) -> Result<RemoteModelProxy, OffloadError> {
        let proxy = RemoteModelProxy {
            addr: addr.to_string(),
            model_id: model_id.to_string(),
            backend: backend.to_string(),
            config: canonical_yaml(config),
            policy,
            conn: Mutex::new(None),
        };
        proxy.with_retry(|_| Ok(Ok(())))?;
        Ok(proxy)
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn infer(&self, inputs: &[Payload], ctx: &InferenceContext) -> Result<Payload, OffloadError> {
        self.with_retry(|conn| {
            let msg = Message::Infer {
                handle: conn.handle,
                inputs: inputs.to_vec(),
                ctx: ctx.latest.clone(),
            };
            Ok(match conn.call(msg)? {
                Ok(Message::InferOk(p)) => Ok(p),
                Ok(other) => Err(OffloadError::Protocol(format!(
                    "expected InferOk, got {:?}",
                    other.msg_type()
                ))),
                Err(e) => Err(e),
            })
        })
    }

    pub fn ping(&self) -> Result<(), OffloadError> {
        self.with_retry(|conn| {
            Ok(match conn.call(Message::Ping)? {
                Ok(Message::Pong) => Ok(()),
                Ok(other) => Err(OffloadError::Protocol(format!(
                    "expected Pong, got {:?}",
                    other.msg_type()
                ))),
                Err(e) => Err(e),
            })
        })
    }

    fn load(&self, conn: &mut Conn) -> Result<Result<(), OffloadError>, Transport> {
        let msg = Message::LoadModel {
            model_id: self.model_id.clone(),
            backend: self.backend.clone(),
            config: self.config.clone(),
        };
        Ok(match conn.call(msg)? {
            Ok(Message::LoadOk { handle }) => {
                conn.handle = handle;
                Ok(())
            }
            Ok(other) => Err(OffloadError::Protocol(format!(
                "expected LoadOk, got {:?}",
                other.msg_type()
            ))),
            Err(e) => Err(e),
        })
    }

    /// Runs `op` on a live, loaded connection. A transport failure drops the
    /// connection and, after the backoff, reconnects, reloads and retries.
    fn with_retry<T>(
        &self,
        mut op: impl FnMut(&mut Conn) -> Result<Result<T, OffloadError>, Transport>,
    ) -> Result<T, OffloadError> {
        let mut guard = self.conn.lock().unwrap();
        let attempts = self.policy.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                thread::sleep(self.policy.backoff);
            }
            if guard.is_none() {
                let mut conn = match Conn::open(&self.addr, &self.policy) {
                    Ok(c) => c,
                    Err(Transport(e)) => {
                        warn!("connect to {} failed (attempt {attempt}/{attempts}): {e}", self.addr);
                        last = e;
                        continue;
                    }
                };
                match self.load(&mut conn) {
                    Ok(Ok(())) => *guard = Some(conn),
                    Ok(Err(e)) => return Err(e),
                    Err(Transport(e)) => {
                        warn!("load on {} failed (attempt {attempt}/{attempts}): {e}", self.addr);
                        last = e;
                        continue;
                    }
                }
            }
            let conn = guard.as_mut().expect("connection established above");
            match op(conn) {
                Ok(r) => return r,
                Err(Transport(e)) => {
                    debug!("request to {} failed (attempt {attempt}/{attempts}): {e}", self.addr);
                    *guard = None;
                    last = e;
                }
            }
        }
        Err(OffloadError::Unavailable {
            addr: self.addr.clone(),
            attempts,
            last,
        })
    }
}
