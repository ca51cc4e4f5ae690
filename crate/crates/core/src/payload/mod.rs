//! Typed payloads carried on channels and across the wire.
//!
//! An image is not a separate type: it is a `u8` tensor of shape `[H, W, C]`
//! with `C` in `{1, 3}`. The `image` channel kind accepts exactly those
//! tensors and is a sub-kind of `tensor`.

mod json;
mod render;

pub use json::{payload_from_json_line, payload_to_json_line, JsonPayload};
pub use render::{render_scalar, render_text};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayloadError {
    #[error("tensor data length {actual} does not match shape {shape:?} (expected {expected})")]
    ShapeMismatch {
        shape: Vec<u32>,
        expected: u64,
        actual: usize,
    },
    #[error("detection {index}: {reason}")]
    InvalidDetection { index: usize, reason: String },
    #[error("audio sample rate must be positive")]
    ZeroSampleRate,
    #[error("expected {expected} payload, got {actual}")]
    KindMismatch { expected: PayloadKind, actual: PayloadKind },
}

/// Declared kind of a channel or backend port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Tensor,
    Image,
    Text,
    Audio,
    Detections,
    Scalar,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 6] = [
        PayloadKind::Tensor,
        PayloadKind::Image,
        PayloadKind::Text,
        PayloadKind::Audio,
        PayloadKind::Detections,
        PayloadKind::Scalar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::Tensor => "tensor",
            PayloadKind::Image => "image",
            PayloadKind::Text => "text",
            PayloadKind::Audio => "audio",
            PayloadKind::Detections => "detections",
            PayloadKind::Scalar => "scalar",
        }
    }

    /// True if every value of kind `self` is also a valid value of `other`.
    pub fn is_subkind_of(self, other: PayloadKind) -> bool {
        self == other || (self == PayloadKind::Image && other == PayloadKind::Tensor)
    }

    /// True if a port accepting any of `accepted` can take values of kind `self`.
    pub fn accepted_by(self, accepted: &[PayloadKind]) -> bool {
        accepted.iter().any(|k| self.is_subkind_of(*k))
    }

    /// Whether a concrete payload is a legal value for this kind.
    pub fn admits(self, payload: &Payload) -> bool {
        match (self, payload) {
            (PayloadKind::Tensor, Payload::Tensor(_)) => true,
            (PayloadKind::Image, Payload::Tensor(t)) => t.is_image(),
            (PayloadKind::Text, Payload::Text(_)) => true,
            (PayloadKind::Audio, Payload::Audio(_)) => true,
            (PayloadKind::Detections, Payload::Detections(_)) => true,
            (PayloadKind::Scalar, Payload::Scalar(_)) => true,
            _ => false,
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PayloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PayloadKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            format!("unknown payload kind {s:?} (expected one of tensor, image, text, audio, detections, scalar)")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    U8,
    F32,
    I64,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::U8 => "u8",
            DType::F32 => "f32",
            DType::I64 => "i64",
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
            DType::I64 => 8,
        }
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "u8" => Ok(DType::U8),
            "f32" => Ok(DType::F32),
            "i64" => Ok(DType::I64),
            other => Err(format!("unknown dtype {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::U8(_) => DType::U8,
            TensorData::F32(_) => DType::F32,
            TensorData::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw little-endian bytes of the elements.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::U8(v) => v.clone(),
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    /// Inverse of [`TensorData::to_le_bytes`]. `bytes.len()` must be a
    /// multiple of the element size.
    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Option<TensorData> {
        if !bytes.len().is_multiple_of(dtype.size()) {
            return None;
        }
        Some(match dtype {
            DType::U8 => TensorData::U8(bytes.to_vec()),
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I64 => TensorData::I64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        })
    }
}

/// Row-major dense tensor. Construction checks `data.len() == product(shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<u32>,
    data: TensorData,
}

/// Product of dims, `None` on overflow.
pub fn element_count(shape: &[u32]) -> Option<u64> {
    shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)))
}

impl Tensor {
    pub fn new(shape: Vec<u32>, data: TensorData) -> Result<Tensor, PayloadError> {
        let expected = element_count(&shape);
        if expected != Some(data.len() as u64) {
            return Err(PayloadError::ShapeMismatch {
                shape,
                expected: expected.unwrap_or(u64::MAX),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds an `[H, W, C]` u8 image.
    pub fn image(height: u32, width: u32, channels: u32, pixels: Vec<u8>) -> Result<Tensor, PayloadError> {
        Tensor::new(vec![height, width, channels], TensorData::U8(pixels))
    }

    pub fn shape(&self) -> &[u32] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn is_image(&self) -> bool {
        self.dtype() == DType::U8 && self.shape.len() == 3 && matches!(self.shape[2], 1 | 3)
    }

    /// `(height, width, channels, pixels)` for u8 rank-3 tensors.
    pub fn as_hwc(&self) -> Option<(usize, usize, usize, &[u8])> {
        match (&self.data, self.shape.as_slice()) {
            (TensorData::U8(px), [h, w, c]) => Some((*h as usize, *w as usize, *c as usize, px)),
            _ => None,
        }
    }

    pub fn into_parts(self) -> (Vec<u32>, TensorData) {
        (self.shape, self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioChunk {
    pub sample_rate_hz: u32,
    pub samples: Vec<i16>,
}

/// Normalized box `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub fn new(x0: f32, y0: f32, x1: f32, y1: f32) -> BBox {
        BBox { x0, y0, x1, y1 }
    }

    pub fn as_array(&self) -> [f32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: String,
    pub score: f32,
    pub bbox: BBox,
}

impl Detection {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |v: f32| (0.0..=1.0).contains(&v);
        if self.label.is_empty() {
            return Err("empty label".into());
        }
        if !unit(self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        let b = &self.bbox;
        if !b.as_array().into_iter().all(unit) {
            return Err(format!("bbox {:?} outside [0, 1]", b.as_array()));
        }
        if b.x0 > b.x1 || b.y0 > b.y1 {
            return Err(format!("bbox {:?} has inverted corners", b.as_array()));
        }
        Ok(())
    }
}

pub type DetectionSet = Vec<Detection>;

/// One value on a channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Tensor(Tensor),
    Text(String),
    Audio(AudioChunk),
    Detections(DetectionSet),
    Scalar(f64),
}

impl Payload {
    /// The most specific kind describing this value.
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Tensor(t) if t.is_image() => PayloadKind::Image,
            Payload::Tensor(_) => PayloadKind::Tensor,
            Payload::Text(_) => PayloadKind::Text,
            Payload::Audio(_) => PayloadKind::Audio,
            Payload::Detections(_) => PayloadKind::Detections,
            Payload::Scalar(_) => PayloadKind::Scalar,
        }
    }

    pub fn text(s: impl Into<String>) -> Payload {
        Payload::Text(s.into())
    }

    /// Checks the value-level invariants (tensor length, detection ranges,
    /// audio rate).
    pub fn validate(&self) -> Result<(), PayloadError> {
        match self {
            Payload::Tensor(t) => {
                if element_count(&t.shape) != Some(t.data.len() as u64) {
                    return Err(PayloadError::ShapeMismatch {
                        shape: t.shape.clone(),
                        expected: element_count(&t.shape).unwrap_or(u64::MAX),
                        actual: t.data.len(),
                    });
                }
            }
            Payload::Audio(a) if a.sample_rate_hz == 0 => return Err(PayloadError::ZeroSampleRate),
            Payload::Detections(items) => {
                for (index, d) in items.iter().enumerate() {
                    d.validate()
                        .map_err(|reason| PayloadError::InvalidDetection { index, reason })?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: PayloadKind) -> Result<(), PayloadError> {
        if kind.admits(self) {
            Ok(())
        } else {
            Err(PayloadError::KindMismatch {
                expected: kind,
                actual: self.kind(),
            })
        }
    }
}
