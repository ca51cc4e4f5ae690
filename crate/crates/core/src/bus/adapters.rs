//! Source and sink adapters bridging channels to the outside world.
//!
//! Adapters are looked up by name in an [`AdapterRegistry`]. A source is a
//! pull iterator of payloads; who drives it (a free-running thread or the
//! sequenced scheduler) is decided by the caller. A sink consumes messages.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_yaml::Value;
use thiserror::Error;

use crate::params::{Params, ParamsExt};
use crate::payload::{
    payload_from_json_line, payload_to_json_line, render_text, AudioChunk, Payload, PayloadKind, Tensor,
};

use super::{Bus, BusError, Message, Publisher, Subscription};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("unknown adapter {0:?}")]
    Unknown(String),
    #[error("invalid params: {0}")]
    Params(String),
    #[error("{path}: line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Bus(#[from] BusError),
}

pub trait SourceAdapter: Send {
    /// Next payload, `None` when exhausted.
    fn next(&mut self) -> Result<Option<Payload>, AdapterError>;
}

pub trait SinkAdapter: Send {
    fn write(&mut self, message: &Message) -> Result<(), AdapterError>;

    fn finish(&mut self) -> Result<(), AdapterError> {
        Ok(())
    }
}

pub trait SourceFactory: Send + Sync {
    /// Kinds this adapter can emit.
    fn emits(&self) -> &[PayloadKind];
    fn check(&self, params: &Params) -> Result<(), String>;
    fn open(&self, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError>;
}

pub trait SinkFactory: Send + Sync {
    /// Kinds this adapter can consume.
    fn consumes(&self) -> &[PayloadKind];
    fn check(&self, params: &Params) -> Result<(), String>;
    fn open(&self, params: &Params) -> Result<Box<dyn SinkAdapter>, AdapterError>;
}

/// Pause between items of a free-running source, from the `interval_ms` param.
pub fn source_interval(params: &Params) -> Duration {
    Duration::from_millis(params.opt_u64("interval_ms").ok().flatten().unwrap_or(0))
}

/// Whether a source emitting `emits` may feed a channel of `kind`.
pub fn source_fits(emits: &[PayloadKind], kind: PayloadKind) -> bool {
    emits.iter().any(|e| e.is_subkind_of(kind) || kind.is_subkind_of(*e))
}

#[derive(Clone, Default)]
pub struct AdapterRegistry {
    sources: BTreeMap<String, Arc<dyn SourceFactory>>,
    sinks: BTreeMap<String, Arc<dyn SinkFactory>>,
}

impl AdapterRegistry {
    pub fn empty() -> AdapterRegistry {
        AdapterRegistry::default()
    }

    pub fn builtin() -> AdapterRegistry {
        let mut r = AdapterRegistry::empty();
        r.register_source("synthetic-frames", Arc::new(SyntheticFrames));
        r.register_source("file", Arc::new(FileAdapter));
        r.register_sink("file", Arc::new(FileAdapter));
        r.register_source("stdin-text", Arc::new(StdinText));
        r.register_sink("stdout-text", Arc::new(StdoutText));
        r.register_source("text-lines", Arc::new(TextLines));
        r.register_source("tcp-text", Arc::new(TcpText));
        r.register_sink("tcp-text", Arc::new(TcpText));
        r.register_source("audio-script", Arc::new(AudioScript));
        r
    }

    pub fn register_source(&mut self, name: &str, factory: Arc<dyn SourceFactory>) {
        self.sources.insert(name.to_string(), factory);
    }

    pub fn register_sink(&mut self, name: &str, factory: Arc<dyn SinkFactory>) {
        self.sinks.insert(name.to_string(), factory);
    }

    pub fn source(&self, name: &str) -> Option<&Arc<dyn SourceFactory>> {
        self.sources.get(name)
    }

    pub fn sink(&self, name: &str) -> Option<&Arc<dyn SinkFactory>> {
        self.sinks.get(name)
    }

    pub fn open_source(&self, name: &str, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        let f = self
            .source(name)
            .ok_or_else(|| AdapterError::Unknown(name.to_string()))?;
        f.check(params).map_err(AdapterError::Params)?;
        f.open(params)
    }

    pub fn open_sink(&self, name: &str, params: &Params) -> Result<Box<dyn SinkAdapter>, AdapterError> {
        let f = self.sink(name).ok_or_else(|| AdapterError::Unknown(name.to_string()))?;
        f.check(params).map_err(AdapterError::Params)?;
        f.open(params)
    }
}

/// Final state of an adapter task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterStatus {
    pub channel: String,
    pub items: u64,
    pub error: Option<String>,
}

/// A running adapter task with a cooperative stop signal.
pub struct AdapterHandle {
    stop: Arc<AtomicBool>,
    thread: JoinHandle<AdapterStatus>,
}

impl AdapterHandle {
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.thread.is_finished()
    }

    pub fn join(self) -> AdapterStatus {
        self.thread.join().unwrap_or_else(|_| AdapterStatus {
            channel: String::new(),
            items: 0,
            error: Some("adapter task panicked".into()),
        })
    }
}

const POLL: Duration = Duration::from_millis(20);

/// Runs a source on its own thread until exhausted, stopped, or failed.
/// The publisher is dropped on exit, closing the channel.
pub fn spawn_source(mut source: Box<dyn SourceAdapter>, publisher: Publisher, interval: Duration) -> AdapterHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::spawn(move || {
        let mut status = AdapterStatus {
            channel: publisher.channel().to_string(),
            items: 0,
            error: None,
        };
        while !flag.load(Ordering::SeqCst) {
            match source.next() {
                Ok(Some(p)) => {
                    if let Err(e) = publisher.publish(p) {
                        status.error = Some(e.to_string());
                        break;
                    }
                    status.items += 1;
                }
                Ok(None) => break,
                Err(e) => {
                    log::warn!("source on {} failed: {e}", status.channel);
                    status.error = Some(e.to_string());
                    break;
                }
            }
            if !interval.is_zero() {
                sleep_unless_stopped(interval, &flag);
            }
        }
        status
    });
    AdapterHandle { stop, thread }
}

fn sleep_unless_stopped(total: Duration, flag: &AtomicBool) {
    let mut left = total;
    while !left.is_zero() && !flag.load(Ordering::SeqCst) {
        let step = left.min(POLL);
        thread::sleep(step);
        left -= step;
    }
}

/// Drains a subscription into a sink until the channel closes. A stop
/// request is honored once the queue is empty.
pub fn spawn_sink(mut sink: Box<dyn SinkAdapter>, subscription: Subscription) -> AdapterHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::spawn(move || {
        let mut status = AdapterStatus {
            channel: subscription.channel().to_string(),
            items: 0,
            error: None,
        };
        loop {
            match subscription.recv_timeout(POLL) {
                Ok(d) => {
                    if status.error.is_none() {
                        match sink.write(d.message()) {
                            Ok(()) => status.items += 1,
                            Err(e) => {
                                log::warn!("sink on {} failed: {e}", status.channel);
                                status.error = Some(e.to_string());
                            }
                        }
                    }
                }
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                }
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => break,
            }
        }
        if let Err(e) = sink.finish() {
            status.error.get_or_insert(e.to_string());
        }
        status
    });
    AdapterHandle { stop, thread }
}

/// Which side of a channel an adapter declaration attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterRole {
    Source,
    Sink,
}

/// Opens the named adapter on `channel` and starts it.
pub fn run_adapter(
    registry: &AdapterRegistry,
    role: AdapterRole,
    channel: &str,
    adapter: &str,
    params: &Params,
    bus: &Bus,
) -> Result<AdapterHandle, AdapterError> {
    match role {
        AdapterRole::Source => {
            let src = registry.open_source(adapter, params)?;
            let publisher = bus.publisher(channel, &format!("source:{adapter}"))?;
            Ok(spawn_source(src, publisher, source_interval(params)))
        }
        AdapterRole::Sink => {
            let sink = registry.open_sink(adapter, params)?;
            let sub = bus.subscribe(channel)?;
            Ok(spawn_sink(sink, sub))
        }
    }
}

fn u32_param(params: &Params, key: &str) -> Result<Option<u32>, String> {
    params
        .opt_u64(key)?
        .map(|v| u32::try_from(v).map_err(|_| format!("{key}: {v} is too large")))
        .transpose()
}

// ---------------------------------------------------------------------------
// synthetic-frames

/// Black u8 frames with bright `block`-sized squares at scripted `[x, y]` positions.
pub struct SyntheticFrames;

#[derive(Debug, Clone, PartialEq)]
struct FramesConfig {
    width: u32,
    height: u32,
    channels: u32,
    block: u32,
    frames: usize,
    blocks: Vec<Vec<(u32, u32)>>,
}

impl FramesConfig {
    fn from_params(params: &Params) -> Result<FramesConfig, String> {
        params.only_keys(&[
            "width",
            "height",
            "channels",
            "block",
            "blocks",
            "frames",
            "interval_ms",
        ])?;
        let width = u32_param(params, "width")?.ok_or("width: required")?;
        let height = u32_param(params, "height")?.ok_or("height: required")?;
        let channels = u32_param(params, "channels")?.unwrap_or(3);
        if !matches!(channels, 1 | 3) {
            return Err(format!("channels: {channels} must be 1 or 3"));
        }
        if u64::from(width) * u64::from(height) * u64::from(channels) > 64 << 20 {
            return Err("width x height x channels exceeds 64 MiB".into());
        }
        let block = u32_param(params, "block")?.unwrap_or(8);
        params.opt_u64("interval_ms")?;
        let blocks = match params.get("blocks") {
            None => Vec::new(),
            Some(Value::Sequence(frames)) => frames
                .iter()
                .enumerate()
                .map(|(i, f)| parse_positions(f).map_err(|e| format!("blocks[{i}]: {e}")))
                .collect::<Result<Vec<_>, _>>()?,
            Some(_) => return Err("blocks: expected a list of per-frame position lists".into()),
        };
        let frames = match params.opt_u64("frames")? {
            Some(n) => n as usize,
            None => blocks.len(),
        };
        Ok(FramesConfig {
            width,
            height,
            channels,
            block,
            frames,
            blocks,
        })
    }

    fn frame(&self, index: usize) -> Tensor {
        let (w, h, c) = (self.width as usize, self.height as usize, self.channels as usize);
        let mut px = vec![0u8; w * h * c];
        let b = self.block as usize;
        for &(x0, y0) in self.blocks.get(index).map(Vec::as_slice).unwrap_or(&[]) {
            let (x0, y0) = (x0 as usize, y0 as usize);
            for y in y0..(y0 + b).min(h) {
                for x in x0..(x0 + b).min(w) {
                    px[(y * w + x) * c..(y * w + x + 1) * c].fill(255);
                }
            }
        }
        Tensor::image(self.height, self.width, self.channels, px).expect("frame shape matches buffer")
    }
}

fn parse_positions(v: &Value) -> Result<Vec<(u32, u32)>, String> {
    let Value::Sequence(items) = v else {
        return Err("expected a list of [x, y] positions".into());
    };
    items
        .iter()
        .map(|p| match p {
            Value::Sequence(xy) if xy.len() == 2 => {
                let coord = |v: &Value| {
                    v.as_u64()
                        .and_then(|n| u32::try_from(n).ok())
                        .ok_or_else(|| "position coordinates must be nonnegative integers".to_string())
                };
                Ok((coord(&xy[0])?, coord(&xy[1])?))
            }
            _ => Err("each position must be a two-element [x, y] list".into()),
        })
        .collect()
}

struct FramesSource {
    cfg: FramesConfig,
    next: usize,
}

impl SourceAdapter for FramesSource {
    fn next(&mut self) -> Result<Option<Payload>, AdapterError> {
        if self.next >= self.cfg.frames {
            return Ok(None);
        }
        let f = self.cfg.frame(self.next);
        self.next += 1;
        Ok(Some(Payload::Tensor(f)))
    }
}

impl SourceFactory for SyntheticFrames {
    fn emits(&self) -> &[PayloadKind] {
        &[PayloadKind::Image]
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        FramesConfig::from_params(params).map(|_| ())
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        let cfg = FramesConfig::from_params(params).map_err(AdapterError::Params)?;
        Ok(Box::new(FramesSource { cfg, next: 0 }))
    }
}

// ---------------------------------------------------------------------------
// file

/// Newline-delimited JSON payloads, readable as a source and writable as a sink.
pub struct FileAdapter;

fn file_path(params: &Params) -> Result<PathBuf, String> {
    params.only_keys(&["path", "interval_ms"])?;
    params.opt_u64("interval_ms")?;
    Ok(PathBuf::from(params.req_str("path")?))
}

struct FileSource {
    path: String,
    lines: io::Lines<BufReader<File>>,
    line: usize,
}

impl SourceAdapter for FileSource {
    fn next(&mut self) -> Result<Option<Payload>, AdapterError> {
        loop {
            let Some(line) = self.lines.next() else {
                return Ok(None);
            };
            let line = line?;
            self.line += 1;
            if line.trim().is_empty() {
                continue;
            }
            return payload_from_json_line(&line)
                .map(Some)
                .map_err(|reason| AdapterError::Parse {
                    path: self.path.clone(),
                    line: self.line,
                    reason,
                });
        }
    }
}

struct FileSink {
    out: BufWriter<File>,
}

impl SinkAdapter for FileSink {
    fn write(&mut self, message: &Message) -> Result<(), AdapterError> {
        writeln!(self.out, "{}", payload_to_json_line(&message.payload))?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), AdapterError> {
        self.out.flush()?;
        Ok(())
    }
}

impl SourceFactory for FileAdapter {
    fn emits(&self) -> &[PayloadKind] {
        &PayloadKind::ALL
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        file_path(params).map(|_| ())
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        let path = file_path(params).map_err(AdapterError::Params)?;
        let f = File::open(&path)?;
        Ok(Box::new(FileSource {
            path: path.display().to_string(),
            lines: BufReader::new(f).lines(),
            line: 0,
        }))
    }
}

impl SinkFactory for FileAdapter {
    fn consumes(&self) -> &[PayloadKind] {
        &PayloadKind::ALL
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        file_path(params).map(|_| ())
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SinkAdapter>, AdapterError> {
        let path = file_path(params).map_err(AdapterError::Params)?;
        Ok(Box::new(FileSink {
            out: BufWriter::new(File::create(path)?),
        }))
    }
}

// ---------------------------------------------------------------------------
// text lines

/// One Text payload per input line, line terminators stripped.
pub struct LineSource<R> {
    reader: R,
}

impl<R: BufRead + Send> LineSource<R> {
    pub fn new(reader: R) -> Self {
        LineSource { reader }
    }
}

impl<R: BufRead + Send> SourceAdapter for LineSource<R> {
    fn next(&mut self) -> Result<Option<Payload>, AdapterError> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        if line.ends_with('\n') {
            line.pop();
            if line.ends_with('\r') {
                line.pop();
            }
        }
        Ok(Some(Payload::Text(line)))
    }
}

/// Writes the text rendering of each payload followed by a newline.
pub struct LineSink<W> {
    out: W,
}

impl<W: Write + Send> LineSink<W> {
    pub fn new(out: W) -> Self {
        LineSink { out }
    }
}

impl<W: Write + Send> SinkAdapter for LineSink<W> {
    fn write(&mut self, message: &Message) -> Result<(), AdapterError> {
        writeln!(self.out, "{}", render_text(&message.payload))?;
        self.out.flush()?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), AdapterError> {
        self.out.flush()?;
        Ok(())
    }
}

const TEXTUAL: [PayloadKind; 3] = [PayloadKind::Text, PayloadKind::Scalar, PayloadKind::Detections];

pub struct StdinText;

impl SourceFactory for StdinText {
    fn emits(&self) -> &[PayloadKind] {
        &[PayloadKind::Text]
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        params.only_keys(&["interval_ms"])?;
        params.opt_u64("interval_ms").map(|_| ())
    }

    fn open(&self, _params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        Ok(Box::new(LineSource::new(BufReader::new(io::stdin()))))
    }
}

pub struct StdoutText;

impl SinkFactory for StdoutText {
    fn consumes(&self) -> &[PayloadKind] {
        &TEXTUAL
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        params.only_keys(&[])
    }

    fn open(&self, _params: &Params) -> Result<Box<dyn SinkAdapter>, AdapterError> {
        Ok(Box::new(LineSink::new(io::stdout())))
    }
}

/// Scripted text messages from the `lines` param.
pub struct TextLines;

struct ScriptSource<T> {
    items: std::vec::IntoIter<T>,
}

impl SourceAdapter for ScriptSource<Payload> {
    fn next(&mut self) -> Result<Option<Payload>, AdapterError> {
        Ok(self.items.next())
    }
}

impl SourceFactory for TextLines {
    fn emits(&self) -> &[PayloadKind] {
        &[PayloadKind::Text]
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        params.only_keys(&["lines", "interval_ms"])?;
        params.opt_u64("interval_ms")?;
        params.opt_str_list("lines")?.ok_or("lines: required")?;
        Ok(())
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        self.check(params).map_err(AdapterError::Params)?;
        let lines = params.opt_str_list("lines").ok().flatten().unwrap_or_default();
        Ok(Box::new(ScriptSource {
            items: lines.into_iter().map(Payload::Text).collect::<Vec<_>>().into_iter(),
        }))
    }
}

// ---------------------------------------------------------------------------
// tcp-text

/// Line-oriented text over TCP. `mode: connect` (default) dials `address`,
/// `mode: listen` accepts one peer on it.
pub struct TcpText;

fn tcp_stream(params: &Params) -> Result<TcpStream, AdapterError> {
    let addr = params.req_str("address").map_err(AdapterError::Params)?;
    match params
        .opt_str("mode")
        .map_err(AdapterError::Params)?
        .unwrap_or("connect")
    {
        "connect" => Ok(TcpStream::connect(addr)?),
        "listen" => {
            let l = TcpListener::bind(addr)?;
            Ok(l.accept()?.0)
        }
        other => Err(AdapterError::Params(format!(
            "mode: {other:?} must be connect or listen"
        ))),
    }
}

fn tcp_check(params: &Params) -> Result<(), String> {
    params.only_keys(&["address", "mode", "interval_ms"])?;
    params.opt_u64("interval_ms")?;
    params.req_str("address")?;
    match params.opt_str("mode")?.unwrap_or("connect") {
        "connect" | "listen" => Ok(()),
        other => Err(format!("mode: {other:?} must be connect or listen")),
    }
}

impl SourceFactory for TcpText {
    fn emits(&self) -> &[PayloadKind] {
        &[PayloadKind::Text]
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        tcp_check(params)
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        Ok(Box::new(LineSource::new(BufReader::new(tcp_stream(params)?))))
    }
}

impl SinkFactory for TcpText {
    fn consumes(&self) -> &[PayloadKind] {
        &TEXTUAL
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        tcp_check(params)
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SinkAdapter>, AdapterError> {
        Ok(Box::new(LineSink::new(tcp_stream(params)?)))
    }
}

// ---------------------------------------------------------------------------
// audio-script

/// One AudioChunk per entry of `tokens`; the chunk's first sample is the
/// token id and the rest are silence.
pub struct AudioScript;

fn audio_chunks(params: &Params) -> Result<Vec<Payload>, String> {
    params.only_keys(&["tokens", "chunk_samples", "sample_rate_hz", "interval_ms"])?;
    params.opt_u64("interval_ms")?;
    let rate = u32_param(params, "sample_rate_hz")?.unwrap_or(16_000);
    if rate == 0 {
        return Err("sample_rate_hz: must be positive".into());
    }
    let len = params.opt_u64("chunk_samples")?.unwrap_or(160);
    if len == 0 || len > 1 << 20 {
        return Err("chunk_samples: must be in 1..=1048576".into());
    }
    let Some(Value::Sequence(tokens)) = params.get("tokens") else {
        return Err("tokens: required list of token ids".into());
    };
    tokens
        .iter()
        .map(|t| {
            let id = t
                .as_i64()
                .and_then(|v| i16::try_from(v).ok())
                .ok_or_else(|| "tokens: ids must be 16-bit integers".to_string())?;
            let mut samples = vec![0i16; len as usize];
            samples[0] = id;
            Ok(Payload::Audio(AudioChunk {
                sample_rate_hz: rate,
                samples,
            }))
        })
        .collect()
}

impl SourceFactory for AudioScript {
    fn emits(&self) -> &[PayloadKind] {
        &[PayloadKind::Audio]
    }

    fn check(&self, params: &Params) -> Result<(), String> {
        audio_chunks(params).map(|_| ())
    }

    fn open(&self, params: &Params) -> Result<Box<dyn SourceAdapter>, AdapterError> {
        let items = audio_chunks(params).map_err(AdapterError::Params)?;
        Ok(Box::new(ScriptSource {
            items: items.into_iter(),
        }))
    }
}
