use super::{Payload, TensorData};

/// Shortest round-trip decimal; integral values print without a fraction
/// (`2.0` renders as `2`).
pub fn render_scalar(value: f64) -> String {
    format!("{value}")
}

/// Text rendering of any payload.
///
/// Scalars use [`render_scalar`], text is verbatim, detection sets become one
/// `label score x0 y0 x1 y1` line per item at 4 decimals. Tensors and audio
/// render as a one-line summary.
pub fn render_text(payload: &Payload) -> String {
    match payload {
        Payload::Scalar(v) => render_scalar(*v),
        Payload::Text(s) => s.clone(),
        Payload::Detections(items) => items
            .iter()
            .map(|d| {
                format!(
                    "{} {:.4} {:.4} {:.4} {:.4} {:.4}",
                    d.label, d.score, d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1
                )
            })
            .collect::<Vec<_>>()
            .join("\n"),
        Payload::Tensor(t) => {
            let dims = t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let dtype = match t.data() {
                TensorData::U8(_) => "u8",
                TensorData::F32(_) => "f32",
                TensorData::I64(_) => "i64",
            };
            format!("tensor {dtype} [{dims}]")
        }
        Payload::Audio(a) => format!("audio {} Hz, {} samples", a.sample_rate_hz, a.samples.len()),
    }
}
