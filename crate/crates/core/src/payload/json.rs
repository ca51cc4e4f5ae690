//! Newline-delimited JSON form of payloads, used by the `file` adapter.
//!
//! One object per line, tagged by `kind`. Tensor elements travel as base64
//! (standard alphabet, padded) of their little-endian bytes.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{AudioChunk, BBox, DType, Detection, Payload, Tensor, TensorData};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum JsonPayload {
    Tensor {
        dtype: String,
        shape: Vec<u32>,
        data: String,
    },
    Text {
        text: String,
    },
    Audio {
        sample_rate_hz: u32,
        samples: Vec<i16>,
    },
    Detections {
        items: Vec<JsonDetection>,
    },
    Scalar {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonDetection {
    pub label: String,
    pub score: f32,
    pub bbox: [f32; 4],
}

impl From<&Payload> for JsonPayload {
    fn from(p: &Payload) -> Self {
        match p {
            Payload::Tensor(t) => JsonPayload::Tensor {
                dtype: t.dtype().as_str().to_string(),
                shape: t.shape().to_vec(),
                data: STANDARD.encode(t.data().to_le_bytes()),
            },
            Payload::Text(text) => JsonPayload::Text { text: text.clone() },
            Payload::Audio(a) => JsonPayload::Audio {
                sample_rate_hz: a.sample_rate_hz,
                samples: a.samples.clone(),
            },
            Payload::Detections(items) => JsonPayload::Detections {
                items: items
                    .iter()
                    .map(|d| JsonDetection {
                        label: d.label.clone(),
                        score: d.score,
                        bbox: d.bbox.as_array(),
                    })
                    .collect(),
            },
            Payload::Scalar(value) => JsonPayload::Scalar { value: *value },
        }
    }
}

impl TryFrom<JsonPayload> for Payload {
    type Error = String;

    fn try_from(j: JsonPayload) -> Result<Self, Self::Error> {
        let payload = match j {
            JsonPayload::Tensor { dtype, shape, data } => {
                let dtype: DType = dtype.parse()?;
                let bytes = STANDARD
                    .decode(data.as_bytes())
                    .map_err(|e| format!("tensor data is not valid base64: {e}"))?;
                let data = TensorData::from_le_bytes(dtype, &bytes).ok_or_else(|| {
                    format!(
                        "tensor data is {} bytes, not a multiple of {}",
                        bytes.len(),
                        dtype.size()
                    )
                })?;
                Payload::Tensor(Tensor::new(shape, data).map_err(|e| e.to_string())?)
            }
            JsonPayload::Text { text } => Payload::Text(text),
            JsonPayload::Audio {
                sample_rate_hz,
                samples,
            } => Payload::Audio(AudioChunk {
                sample_rate_hz,
                samples,
            }),
            JsonPayload::Detections { items } => Payload::Detections(
                items
                    .into_iter()
                    .map(|d| Detection {
                        label: d.label,
                        score: d.score,
                        bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
                    })
                    .collect(),
            ),
            JsonPayload::Scalar { value } => Payload::Scalar(value),
        };
        payload.validate().map_err(|e| e.to_string())?;
        Ok(payload)
    }
}

/// Serializes one payload as a single JSON line (no trailing newline).
pub fn payload_to_json_line(p: &Payload) -> String {
    serde_json::to_string(&JsonPayload::from(p)).expect("payload JSON serialization is infallible")
}

pub fn payload_from_json_line(line: &str) -> Result<Payload, String> {
    let j: JsonPayload = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Payload::try_from(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_line_layout() {
        let p = Payload::Tensor(Tensor::new(vec![2], TensorData::I64(vec![1, -1])).unwrap());
        let line = payload_to_json_line(&p);
        assert_eq!(
            line,
            r#"{"kind":"tensor","dtype":"i64","shape":[2],"data":"AQAAAAAAAAD//////////w=="}"#
        );
        assert_eq!(payload_from_json_line(&line).unwrap(), p);
    }

    #[test]
    fn scalar_and_text_lines() {
        assert_eq!(
            payload_to_json_line(&Payload::Scalar(2.0)),
            r#"{"kind":"scalar","value":2.0}"#
        );
        let t = payload_from_json_line(r#"{"kind":"text","text":"hi"}"#).unwrap();
        assert_eq!(t, Payload::text("hi"));
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(payload_from_json_line(r#"{"kind":"text","text":"hi","x":1}"#).is_err());
        assert!(payload_from_json_line(r#"{"kind":"tensor","dtype":"u8","shape":[3],"data":"AAA="}"#).is_err());
        assert!(payload_from_json_line(
            r#"{"kind":"detections","items":[{"label":"p","score":2.0,"bbox":[0,0,1,1]}]}"#
        )
        .is_err());
    }
}
