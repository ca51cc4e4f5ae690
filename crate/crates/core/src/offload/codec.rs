//! Frame and payload encoding. Layout is documented in `PROTOCOL.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::payload::{AudioChunk, BBox, DType, Detection, Payload, Tensor, TensorData};

pub const MAGIC: [u8; 4] = *b"ORCF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    LoadModel = 1,
    LoadOk = 2,
    Infer = 3,
    InferOk = 4,
    Error = 5,
    Ping = 6,
    Pong = 7,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::LoadModel,
        MsgType::LoadOk,
        MsgType::Infer,
        MsgType::InferOk,
        MsgType::Error,
        MsgType::Ping,
        MsgType::Pong,
    ];

    pub fn from_u8(v: u8) -> Option<MsgType> {
        MsgType::ALL.get(usize::from(v).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnsupportedVersion,
    UnknownModelHandle,
    UnknownBackend,
    MalformedPayload,
    PayloadTooLarge,
    BackendFailure,
    /// A code this build does not know; kept so decoding never fails on it.
    Other(u16),
}

impl ErrorCode {
    pub fn code(self) -> u16 {
        match self {
            ErrorCode::UnsupportedVersion => 1,
            ErrorCode::UnknownModelHandle => 2,
            ErrorCode::UnknownBackend => 3,
            ErrorCode::MalformedPayload => 4,
            ErrorCode::PayloadTooLarge => 5,
            ErrorCode::BackendFailure => 6,
            ErrorCode::Other(c) => c,
        }
    }

    pub fn from_code(c: u16) -> ErrorCode {
        match c {
            1 => ErrorCode::UnsupportedVersion,
            2 => ErrorCode::UnknownModelHandle,
            3 => ErrorCode::UnknownBackend,
            4 => ErrorCode::MalformedPayload,
            5 => ErrorCode::PayloadTooLarge,
            6 => ErrorCode::BackendFailure,
            c => ErrorCode::Other(c),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnsupportedVersion => "unsupported-version",
            ErrorCode::UnknownModelHandle => "unknown-model-handle",
            ErrorCode::UnknownBackend => "unknown-backend",
            ErrorCode::MalformedPayload => "malformed-payload",
            ErrorCode::PayloadTooLarge => "payload-too-large",
            ErrorCode::BackendFailure => "backend-failure",
            ErrorCode::Other(_) => "unknown-error",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.as_str(), self.code())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(u64),
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

impl CodecError {
    /// The error code a worker answers with.
    pub fn error_code(&self) -> ErrorCode {
        match self {
            CodecError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
            CodecError::Oversize(_) => ErrorCode::PayloadTooLarge,
            _ => ErrorCode::MalformedPayload,
        }
    }

    /// Whether the stream can no longer be trusted to be at a frame boundary.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            CodecError::BadMagic(_)
                | CodecError::UnsupportedVersion(_)
                | CodecError::Oversize(_)
                | CodecError::Truncated { .. }
        )
    }
}

/// One protocol unit: header fields plus the undecoded payload bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub request_id: u64,
    pub payload: Vec<u8>,
}

/// Fixed-size header as read off the wire, before validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub magic: [u8; 4],
    pub version: u8,
    pub msg_type: u8,
    pub request_id: u64,
    pub payload_len: u32,
}

impl Header {
    pub fn parse(b: &[u8; HEADER_LEN]) -> Header {
        Header {
            magic: [b[0], b[1], b[2], b[3]],
            version: b[4],
            msg_type: b[5],
            request_id: u64::from_le_bytes(b[6..14].try_into().unwrap()),
            payload_len: u32::from_le_bytes(b[14..18].try_into().unwrap()),
        }
    }

    /// Magic, version and length bound: the checks that must pass before
    /// any payload byte is read.
    pub fn check_framing(&self) -> Result<(), CodecError> {
        if self.magic != MAGIC {
            return Err(CodecError::BadMagic(self.magic));
        }
        if self.version != VERSION {
            return Err(CodecError::UnsupportedVersion(self.version));
        }
        if self.payload_len > MAX_PAYLOAD {
            return Err(CodecError::Oversize(u64::from(self.payload_len)));
        }
        Ok(())
    }

    /// [`Header::check_framing`], then the message type.
    pub fn validate(&self) -> Result<MsgType, CodecError> {
        self.check_framing()?;
        MsgType::from_u8(self.msg_type).ok_or(CodecError::UnknownMsgType(self.msg_type))
    }
}

pub fn encode_frame(f: &Frame) -> Result<Vec<u8>, CodecError> {
    if f.payload.len() as u64 > u64::from(MAX_PAYLOAD) {
        return Err(CodecError::Oversize(f.payload.len() as u64));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + f.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(f.msg_type as u8);
    out.extend_from_slice(&f.request_id.to_le_bytes());
    out.extend_from_slice(&(f.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&f.payload);
    Ok(out)
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed. Never reads past `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), CodecError> {
    let head: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .ok_or(CodecError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        })?
        .try_into()
        .unwrap();
    let h = Header::parse(head);
    let msg_type = h.validate()?;
    let total = HEADER_LEN + h.payload_len as usize;
    let payload = bytes.get(HEADER_LEN..total).ok_or(CodecError::Truncated {
        needed: total,
        available: bytes.len(),
    })?;
    Ok((
        Frame {
            msg_type,
            request_id: h.request_id,
            payload: payload.to_vec(),
        },
        total,
    ))
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    /// The header was read but is invalid. `request_id` is taken from its
    /// position in the header so the peer can be answered. Unless
    /// [`CodecError::is_fatal`], the stream is still at a frame boundary.
    #[error("{error}")]
    Codec { request_id: u64, error: CodecError },
}

/// Reads one frame. `Ok(None)` on a clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, ReadError> {
    let mut head = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut head[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = Header::parse(&head);
    h.check_framing().map_err(|error| ReadError::Codec {
        request_id: h.request_id,
        error,
    })?;
    // Grow with the data actually received rather than trusting the length.
    let mut payload = Vec::new();
    r.take(u64::from(h.payload_len)).read_to_end(&mut payload)?;
    if payload.len() != h.payload_len as usize {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    // Checked after the payload so the stream stays at a frame boundary.
    let msg_type = MsgType::from_u8(h.msg_type).ok_or(ReadError::Codec {
        request_id: h.request_id,
        error: CodecError::UnknownMsgType(h.msg_type),
    })?;
    Ok(Some(Frame {
        msg_type,
        request_id: h.request_id,
        payload,
    }))
}

pub fn write_frame<W: Write>(w: &mut W, f: &Frame) -> io::Result<()> {
    let bytes = encode_frame(f).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Decoded frame body.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    LoadModel {
        model_id: String,
        backend: String,
        /// Canonical YAML of the backend config.
        config: String,
    },
    LoadOk {
        handle: u32,
    },
    Infer {
        handle: u32,
        inputs: Vec<Payload>,
        ctx: BTreeMap<String, Payload>,
    },
    InferOk(Payload),
    Error {
        code: ErrorCode,
        message: String,
    },
    Ping,
    Pong,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::LoadModel { .. } => MsgType::LoadModel,
            Message::LoadOk { .. } => MsgType::LoadOk,
            Message::Infer { .. } => MsgType::Infer,
            Message::InferOk(_) => MsgType::InferOk,
            Message::Error { .. } => MsgType::Error,
            Message::Ping => MsgType::Ping,
            Message::Pong => MsgType::Pong,
        }
    }

    pub fn encode_body(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Vec::new();
        match self {
            Message::LoadModel {
                model_id,
                backend,
                config,
            } => {
                put_str16(&mut w, model_id)?;
                put_str16(&mut w, backend)?;
                put_str32(&mut w, config)?;
            }
            Message::LoadOk { handle } => w.extend_from_slice(&handle.to_le_bytes()),
            Message::Infer { handle, inputs, ctx } => {
                w.extend_from_slice(&handle.to_le_bytes());
                let n = u8::try_from(inputs.len())
                    .map_err(|_| CodecError::Malformed(format!("{} inputs exceed 255", inputs.len())))?;
                w.push(n);
                for p in inputs {
                    encode_payload_into(&mut w, p)?;
                }
                let n = u16::try_from(ctx.len())
                    .map_err(|_| CodecError::Malformed(format!("{} context entries exceed 65535", ctx.len())))?;
                w.extend_from_slice(&n.to_le_bytes());
                for (name, p) in ctx {
                    put_str16(&mut w, name)?;
                    encode_payload_into(&mut w, p)?;
                }
            }
            Message::InferOk(p) => encode_payload_into(&mut w, p)?,
            Message::Error { code, message } => {
                w.extend_from_slice(&code.code().to_le_bytes());
                put_str16(&mut w, truncate_utf8(message, u16::MAX as usize))?;
            }
            Message::Ping | Message::Pong => {}
        }
        Ok(w)
    }

    pub fn decode_body(msg_type: MsgType, body: &[u8]) -> Result<Message, CodecError> {
        let mut r = Cursor::new(body);
        let m = match msg_type {
            MsgType::LoadModel => Message::LoadModel {
                model_id: r.str16()?,
                backend: r.str16()?,
                config: r.str32()?,
            },
            MsgType::LoadOk => Message::LoadOk { handle: r.u32()? },
            MsgType::Infer => {
                let handle = r.u32()?;
                let n = r.u8()?;
                let mut inputs = Vec::with_capacity(usize::from(n).min(r.remaining()));
                for _ in 0..n {
                    inputs.push(r.payload()?);
                }
                let n = r.u16()?;
                let mut ctx = BTreeMap::new();
                for _ in 0..n {
                    let name = r.str16()?;
                    let p = r.payload()?;
                    if ctx.insert(name.clone(), p).is_some() {
                        return Err(CodecError::Malformed(format!("duplicate context channel {name:?}")));
                    }
                }
                Message::Infer { handle, inputs, ctx }
            }
            MsgType::InferOk => Message::InferOk(r.payload()?),
            MsgType::Error => Message::Error {
                code: ErrorCode::from_code(r.u16()?),
                message: r.str16()?,
            },
            MsgType::Ping => Message::Ping,
            MsgType::Pong => Message::Pong,
        };
        r.finish()?;
        Ok(m)
    }

    pub fn into_frame(self, request_id: u64) -> Result<Frame, CodecError> {
        let payload = self.encode_body()?;
        if payload.len() as u64 > u64::from(MAX_PAYLOAD) {
            return Err(CodecError::Oversize(payload.len() as u64));
        }
        Ok(Frame {
            msg_type: self.msg_type(),
            request_id,
            payload,
        })
    }

    pub fn from_frame(f: &Frame) -> Result<Message, CodecError> {
        Message::decode_body(f.msg_type, &f.payload)
    }
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

const KIND_TENSOR: u8 = 1;
const KIND_TEXT: u8 = 2;
const KIND_AUDIO: u8 = 3;
const KIND_DETECTIONS: u8 = 4;
const KIND_SCALAR: u8 = 5;

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::U8 => 1,
        DType::F32 => 2,
        DType::I64 => 3,
    }
}

fn put_str16(w: &mut Vec<u8>, s: &str) -> Result<(), CodecError> {
    let n = u16::try_from(s.len())
        .map_err(|_| CodecError::Malformed(format!("string of {} bytes exceeds 65535", s.len())))?;
    w.extend_from_slice(&n.to_le_bytes());
    w.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_str32(w: &mut Vec<u8>, s: &str) -> Result<(), CodecError> {
    let n = u32::try_from(s.len()).map_err(|_| CodecError::Oversize(s.len() as u64))?;
    w.extend_from_slice(&n.to_le_bytes());
    w.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_payload(p: &Payload) -> Result<Vec<u8>, CodecError> {
    let mut w = Vec::new();
    encode_payload_into(&mut w, p)?;
    Ok(w)
}

fn encode_payload_into(w: &mut Vec<u8>, p: &Payload) -> Result<(), CodecError> {
    match p {
        Payload::Tensor(t) => {
            w.push(KIND_TENSOR);
            w.push(dtype_code(t.dtype()));
            let rank = u8::try_from(t.shape().len())
                .map_err(|_| CodecError::Malformed(format!("rank {} exceeds 255", t.shape().len())))?;
            w.push(rank);
            for d in t.shape() {
                w.extend_from_slice(&d.to_le_bytes());
            }
            match t.data() {
                TensorData::U8(v) => w.extend_from_slice(v),
                TensorData::F32(v) => v.iter().for_each(|x| w.extend_from_slice(&x.to_le_bytes())),
                TensorData::I64(v) => v.iter().for_each(|x| w.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Payload::Text(s) => {
            w.push(KIND_TEXT);
            put_str32(w, s)?;
        }
        Payload::Audio(a) => {
            w.push(KIND_AUDIO);
            w.extend_from_slice(&a.sample_rate_hz.to_le_bytes());
            let n = u32::try_from(a.samples.len()).map_err(|_| CodecError::Oversize(a.samples.len() as u64))?;
            w.extend_from_slice(&n.to_le_bytes());
            for s in &a.samples {
                w.extend_from_slice(&s.to_le_bytes());
            }
        }
        Payload::Detections(items) => {
            w.push(KIND_DETECTIONS);
            let n = u32::try_from(items.len()).map_err(|_| CodecError::Oversize(items.len() as u64))?;
            w.extend_from_slice(&n.to_le_bytes());
            for d in items {
                put_str16(w, &d.label)?;
                w.extend_from_slice(&d.score.to_le_bytes());
                for v in d.bbox.as_array() {
                    w.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Payload::Scalar(v) => {
            w.push(KIND_SCALAR);
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

/// Decodes exactly one payload; trailing bytes are an error.
pub fn decode_payload(bytes: &[u8]) -> Result<Payload, CodecError> {
    let mut r = Cursor::new(bytes);
    let p = r.payload()?;
    r.finish()?;
    Ok(p)
}

/// Bounds-checked reader over a byte slice.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if n > self.remaining() {
            return Err(CodecError::Truncated {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        self.array().map(u32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        self.array().map(f32::from_le_bytes)
    }

    fn utf8(&mut self, n: usize) -> Result<String, CodecError> {
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::Malformed("string is not valid UTF-8".into()))
    }

    fn str16(&mut self) -> Result<String, CodecError> {
        let n = self.u16()?;
        self.utf8(usize::from(n))
    }

    fn str32(&mut self) -> Result<String, CodecError> {
        let n = self.u32()?;
        self.utf8(n as usize)
    }

    /// Checks that `count` items of at least `min_size` bytes can fit.
    fn fits(&self, count: u64, min_size: u64) -> Result<usize, CodecError> {
        let need = count.checked_mul(min_size).ok_or(CodecError::Oversize(u64::MAX))?;
        if need > self.remaining() as u64 {
            return Err(CodecError::Truncated {
                needed: self.pos.saturating_add(usize::try_from(need).unwrap_or(usize::MAX)),
                available: self.buf.len(),
            });
        }
        Ok(need as usize)
    }

    fn payload(&mut self) -> Result<Payload, CodecError> {
        let p = match self.u8()? {
            KIND_TENSOR => {
                let dtype = match self.u8()? {
                    1 => DType::U8,
                    2 => DType::F32,
                    3 => DType::I64,
                    d => return Err(CodecError::Malformed(format!("unknown dtype {d}"))),
                };
                let rank = self.u8()?;
                self.fits(u64::from(rank), 4)?;
                let shape: Vec<u32> = (0..rank).map(|_| self.u32()).collect::<Result<_, _>>()?;
                let count = crate::payload::element_count(&shape).ok_or(CodecError::Oversize(u64::MAX))?;
                let bytes = self.fits(count, dtype.size() as u64)?;
                let raw = self.take(bytes)?;
                let data = TensorData::from_le_bytes(dtype, raw).expect("length is a multiple of the element size");
                Payload::Tensor(Tensor::new(shape, data).map_err(|e| CodecError::Malformed(e.to_string()))?)
            }
            KIND_TEXT => Payload::Text(self.str32()?),
            KIND_AUDIO => {
                let sample_rate_hz = self.u32()?;
                let n = self.u32()?;
                let bytes = self.fits(u64::from(n), 2)?;
                let samples = self
                    .take(bytes)?
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect();
                Payload::Audio(AudioChunk {
                    sample_rate_hz,
                    samples,
                })
            }
            KIND_DETECTIONS => {
                let n = self.u32()?;
                // label length prefix, score and four bbox coordinates
                self.fits(u64::from(n), 2 + 4 + 16)?;
                let mut items = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    let label = self.str16()?;
                    let score = self.f32()?;
                    let bbox = BBox::new(self.f32()?, self.f32()?, self.f32()?, self.f32()?);
                    items.push(Detection { label, score, bbox });
                }
                Payload::Detections(items)
            }
            KIND_SCALAR => Payload::Scalar(f64::from_le_bytes(self.array()?)),
            k => return Err(CodecError::Malformed(format!("unknown payload kind {k}"))),
        };
        p.validate().map_err(|e| CodecError::Malformed(e.to_string()))?;
        Ok(p)
    }

    fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_layout() {
        let f = Frame {
            msg_type: MsgType::Ping,
            request_id: 7,
            payload: Vec::new(),
        };
        let b = encode_frame(&f).unwrap();
        assert_eq!(
            b,
            [0x4F, 0x52, 0x43, 0x46, 0x01, 0x06, 7, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        );
        assert_eq!(decode_frame(&b).unwrap(), (f, 18));
    }

    #[test]
    fn short_input_is_truncation() {
        let b = [0x4F, 0x52, 0x43, 0x46, 0x01];
        assert_eq!(
            decode_frame(&b),
            Err(CodecError::Truncated {
                needed: 18,
                available: 5
            })
        );
    }

    #[test]
    fn header_checks_in_order() {
        let mut b = encode_frame(&Frame {
            msg_type: MsgType::Pong,
            request_id: 1,
            payload: vec![],
        })
        .unwrap();
        b[4] = 2;
        assert_eq!(decode_frame(&b).unwrap_err(), CodecError::UnsupportedVersion(2));
        b[0] = b'X';
        assert!(matches!(decode_frame(&b).unwrap_err(), CodecError::BadMagic(_)));
        let mut big = encode_frame(&Frame {
            msg_type: MsgType::Pong,
            request_id: 1,
            payload: vec![],
        })
        .unwrap();
        big[14..18].copy_from_slice(&(MAX_PAYLOAD + 1).to_le_bytes());
        assert_eq!(
            decode_frame(&big).unwrap_err(),
            CodecError::Oversize(u64::from(MAX_PAYLOAD) + 1)
        );
        big[14..18].copy_from_slice(&0u32.to_le_bytes());
        big[5] = 9;
        assert_eq!(decode_frame(&big).unwrap_err(), CodecError::UnknownMsgType(9));
    }

    #[test]
    fn scalar_payload_bytes() {
        assert_eq!(
            encode_payload(&Payload::Scalar(1.0)).unwrap(),
            [5, 0, 0, 0, 0, 0, 0, 0xF0, 0x3F]
        );
    }

    #[test]
    fn huge_declared_counts_do_not_allocate() {
        // Detections claiming u32::MAX items with no bytes behind them.
        let b = [KIND_DETECTIONS, 0xFF, 0xFF, 0xFF, 0xFF];
        assert!(matches!(decode_payload(&b), Err(CodecError::Truncated { .. })));
        // Tensor dims whose product overflows u64.
        let mut t = vec![KIND_TENSOR, 3, 4];
        for _ in 0..4 {
            t.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(decode_payload(&t).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = encode_payload(&Payload::text("x")).unwrap();
        b.push(0);
        assert_eq!(decode_payload(&b), Err(CodecError::TrailingBytes(1)));
    }
}
