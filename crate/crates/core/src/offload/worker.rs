//! Worker daemon serving remote inference over TCP.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};

use crate::inference::{BackendTable, InferError, InferenceContext, ModelHandle, ModelRegistry};
use crate::params::params_from_yaml;

use super::codec::{read_frame, write_frame, ErrorCode, Frame, Message, ReadError};

/// A bound worker, not yet accepting connections.
pub struct Worker {
    listener: TcpListener,
    backends: Arc<BackendTable>,
}

impl Worker {
    pub fn bind<A: ToSocketAddrs>(addr: A, backends: Arc<BackendTable>) -> std::io::Result<Worker> {
        Ok(Worker {
            listener: TcpListener::bind(addr)?,
            backends,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves on a background thread until [`WorkerHandle::stop`].
    pub fn spawn(self) -> std::io::Result<WorkerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::Builder::new()
            .name(format!("oricf-worker-{addr}"))
            .spawn(move || self.serve(&flag))?;
        Ok(WorkerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    /// Accepts connections until `stop` is set. Each connection gets its own
    /// thread and its own model handles. Open connections are shut down on
    /// exit.
    pub fn serve(self, stop: &AtomicBool) {
        info!(
            "worker listening on {}",
            self.listener.local_addr().map(|a| a.to_string()).unwrap_or_default()
        );
        let mut conns: Vec<(TcpStream, JoinHandle<()>)> = Vec::new();
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "?".into());
            let Ok(control) = stream.try_clone() else { continue };
            let backends = self.backends.clone();
            let spawned = thread::Builder::new()
                .name(format!("oricf-conn-{peer}"))
                .spawn(move || serve_connection(stream, backends));
            match spawned {
                Ok(t) => conns.push((control, t)),
                Err(e) => warn!("cannot spawn connection thread: {e}"),
            }
            conns.retain(|(_, t)| !t.is_finished());
        }
        for (s, t) in conns {
            let _ = s.shutdown(Shutdown::Both);
            let _ = t.join();
        }
        info!("worker stopped");
    }
}

pub struct WorkerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl WorkerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes open connections and waits for the threads.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WorkerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.shutdown();
        }
    }
}

type SharedWriter = Arc<Mutex<BufWriter<TcpStream>>>;

fn send(writer: &SharedWriter, request_id: u64, msg: Message) {
    let frame = match msg.into_frame(request_id) {
        Ok(f) => f,
        Err(e) => error_frame(request_id, e.error_code(), &e.to_string()),
    };
    let mut w = writer.lock().unwrap();
    if let Err(e) = write_frame(&mut *w, &frame) {
        debug!("write failed: {e}");
    }
}

fn error_frame(request_id: u64, code: ErrorCode, message: &str) -> Frame {
    Message::Error {
        code,
        message: message.to_string(),
    }
    .into_frame(request_id)
    .expect("error frames are small")
}

fn send_error(writer: &SharedWriter, request_id: u64, code: ErrorCode, message: impl Into<String>) {
    send(
        writer,
        request_id,
        Message::Error {
            code,
            message: message.into(),
        },
    );
}

fn infer_error_code(e: &InferError) -> ErrorCode {
    match e {
        InferError::UnknownBackend(_) => ErrorCode::UnknownBackend,
        InferError::UnknownHandle(_) => ErrorCode::UnknownModelHandle,
        InferError::KindMismatch { .. } => ErrorCode::MalformedPayload,
        _ => ErrorCode::BackendFailure,
    }
}

/// Reads requests until end of stream. Load and Ping are answered inline so
/// a handle exists before any later request uses it; Infer runs on its own
/// thread and may answer out of order.
fn serve_connection(stream: TcpStream, backends: Arc<BackendTable>) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "?".into());
    info!("connection from {peer}");
    let writer: SharedWriter = match stream.try_clone() {
        Ok(s) => Arc::new(Mutex::new(BufWriter::new(s))),
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    let models = Arc::new(ModelRegistry::new(backends));
    let mut in_flight: Vec<JoinHandle<()>> = Vec::new();

    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(ReadError::Codec { request_id, error }) => {
                send_error(&writer, request_id, error.error_code(), error.to_string());
                if error.is_fatal() {
                    warn!("{peer}: {error}; closing");
                    break;
                }
                continue;
            }
            Err(ReadError::Io(e)) => {
                debug!("{peer}: {e}");
                break;
            }
        };
        let id = frame.request_id;
        let msg = match Message::from_frame(&frame) {
            Ok(m) => m,
            Err(e) => {
                send_error(&writer, id, e.error_code(), e.to_string());
                continue;
            }
        };
        match msg {
            Message::Ping => send(&writer, id, Message::Pong),
            Message::LoadModel {
                model_id,
                backend,
                config,
            } => {
                let reply = params_from_yaml(&config)
                    .map_err(|e| (ErrorCode::MalformedPayload, format!("config: {e}")))
                    .and_then(|cfg| {
                        models
                            .load_model(&model_id, &backend, &cfg)
                            .map_err(|e| (infer_error_code(&e), e.to_string()))
                    });
                match reply {
                    Ok(h) => send(&writer, id, Message::LoadOk { handle: h.id }),
                    Err((code, m)) => send_error(&writer, id, code, m),
                }
            }
            Message::Infer { handle, inputs, ctx } => {
                let models = models.clone();
                let out = writer.clone();
                let spawned = thread::Builder::new().spawn(move || {
                    let h = ModelHandle {
                        id: handle,
                        model_id: String::new(),
                        backend: String::new(),
                    };
                    let ctx = InferenceContext { latest: ctx };
                    match models.infer(&h, &inputs, &ctx) {
                        Ok(p) => send(&out, id, Message::InferOk(p)),
                        Err(e) => send_error(&out, id, infer_error_code(&e), e.to_string()),
                    }
                });
                match spawned {
                    Ok(t) => in_flight.push(t),
                    Err(e) => send_error(&writer, id, ErrorCode::BackendFailure, format!("cannot spawn: {e}")),
                }
                in_flight.retain(|t| !t.is_finished());
            }
            other => {
                let t = other.msg_type();
                send_error(
                    &writer,
                    id,
                    ErrorCode::MalformedPayload,
                    format!("{t:?} is a response type and cannot be sent to a worker"),
                );
            }
        }
    }
    for t in in_flight {
        let _ = t.join();
    }
    let _ = writer.lock().unwrap().flush();
    // Other handles to this socket exist, so dropping ours would not close it.
    let _ = reader.get_ref().shutdown(Shutdown::Both);
    info!("connection from {peer} closed");
}
