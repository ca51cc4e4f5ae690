//! Post-processing operators and chains.
//!
//! A chain runs after a node's inference. Each step is a pure function of
//! its input, its params and (for `annotate`/`format`) the node's trigger
//! payload and context. A step may publish its output on a channel before
//! the next step runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde_yaml::Value;
use thiserror::Error;

use crate::bus::{BusError, Publisher};
use crate::inference::template::Template;
use crate::inference::InferenceContext;
use crate::params::{Params, ParamsExt};
use crate::payload::{render_text, Detection, DetectionSet, Payload, PayloadKind, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PostOp {
    LabelMap,
    Count,
    Annotate,
    ToText,
    Format,
}

impl PostOp {
    pub const ALL: [PostOp; 5] = [
        PostOp::LabelMap,
        PostOp::Count,
        PostOp::Annotate,
        PostOp::ToText,
        PostOp::Format,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PostOp::LabelMap => "label_map",
            PostOp::Count => "count",
            PostOp::Annotate => "annotate",
            PostOp::ToText => "to_text",
            PostOp::Format => "format",
        }
    }
}

impl fmt::Display for PostOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PostOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PostOp::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| format!("unknown post op {s:?} (expected label_map, count, annotate, to_text or format)"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostError {
    #[error("{op}: expected {expected}, got {actual}")]
    WrongInput {
        op: PostOp,
        expected: &'static str,
        actual: PayloadKind,
    },
    #[error("min_score {0} outside [0, 1]")]
    MinScore(f64),
    #[error("{0}")]
    Invalid(String),
    #[error("publish failed: {0}")]
    Publish(#[from] BusError),
}

/// Replaces labels found in `map`; everything else passes through.
pub fn label_map(d: &DetectionSet, map: &BTreeMap<String, String>) -> DetectionSet {
    d.iter()
        .map(|x| Detection {
            label: map.get(&x.label).cloned().unwrap_or_else(|| x.label.clone()),
            ..x.clone()
        })
        .collect()
}

/// Number of detections with `label` and `score >= min_score`.
pub fn count(d: &DetectionSet, label: &str, min_score: f64) -> Result<f64, PostError> {
    if !(0.0..=1.0).contains(&min_score) {
        return Err(PostError::MinScore(min_score));
    }
    Ok(d.iter()
        .filter(|x| x.label == label && f64::from(x.score) >= min_score)
        .count() as f64)
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Draws the 1-pixel border of every box onto a copy of `img`.
///
/// Box corners are scaled by `(W, H)`, rounded half-up and clamped into the
/// image before drawing.
pub fn annotate(img: &Tensor, d: &DetectionSet, value: u8) -> Result<Tensor, PostError> {
    let (h, w, c, px) = img
        .as_hwc()
        .ok_or_else(|| PostError::Invalid("annotate: expected a u8 [H, W, C] tensor".into()))?;
    let mut out = px.to_vec();
    if h == 0 || w == 0 {
        return Ok(img.clone());
    }
    let clamp = |v: f64, n: usize| round_half_up(v * n as f64).clamp(0, n as i64 - 1) as usize;
    let mut set = |x: usize, y: usize| out[(y * w + x) * c..(y * w + x + 1) * c].fill(value);
    for det in d {
        let b = det.bbox;
        let (x0, x1) = (clamp(f64::from(b.x0), w), clamp(f64::from(b.x1), w));
        let (y0, y1) = (clamp(f64::from(b.y0), h), clamp(f64::from(b.y1), h));
        for x in x0..=x1 {
            set(x, y0);
            set(x, y1);
        }
        for y in y0..=y1 {
            set(x0, y);
            set(x1, y);
        }
    }
    Ok(Tensor::image(h as u32, w as u32, c as u32, out).expect("same shape as input"))
}

/// Text rendering of a detection set or scalar.
pub fn to_text(p: &Payload) -> Result<String, PostError> {
    match p {
        Payload::Detections(_) | Payload::Scalar(_) => Ok(render_text(p)),
        other => Err(PostError::WrongInput {
            op: PostOp::ToText,
            expected: "detections or scalar",
            actual: other.kind(),
        }),
    }
}

/// A post step with parsed params.
#[derive(Debug, Clone, PartialEq)]
pub enum CompiledStep {
    LabelMap(BTreeMap<String, String>),
    Count { label: String, min_score: f64 },
    Annotate { value: u8 },
    ToText,
    Format(Template),
}

impl CompiledStep {
    pub fn compile(op: PostOp, params: &Params) -> Result<CompiledStep, String> {
        match op {
            PostOp::LabelMap => {
                params.only_keys(&["map"])?;
                let map = match params.get("map") {
                    None => BTreeMap::new(),
                    Some(Value::Mapping(m)) => m
                        .iter()
                        .map(|(k, v)| match (k.as_str(), v.as_str()) {
                            (Some(k), Some(v)) if !v.is_empty() => Ok((k.to_string(), v.to_string())),
                            _ => Err("map: entries must map a label to a nonempty label".to_string()),
                        })
                        .collect::<Result<_, _>>()?,
                    Some(_) => return Err("map: expected a mapping of old label to new label".into()),
                };
                Ok(CompiledStep::LabelMap(map))
            }
            PostOp::Count => {
                params.only_keys(&["label", "min_score"])?;
                let label = params.req_str("label")?.to_string();
                let min_score = params.opt_f64("min_score")?.unwrap_or(0.0);
                if !(0.0..=1.0).contains(&min_score) {
                    return Err(format!("min_score: {min_score} outside [0, 1]"));
                }
                Ok(CompiledStep::Count { label, min_score })
            }
            PostOp::Annotate => {
                params.only_keys(&["value"])?;
                let value = match params.opt_u64("value")? {
                    None => 255,
                    Some(v) => u8::try_from(v).map_err(|_| format!("value: {v} exceeds 255"))?,
                };
                Ok(CompiledStep::Annotate { value })
            }
            PostOp::ToText => {
                params.only_keys(&[])?;
                Ok(CompiledStep::ToText)
            }
            PostOp::Format => {
                params.only_keys(&["template"])?;
                Template::parse(params.req_str("template")?)
                    .map(CompiledStep::Format)
                    .map_err(|e| format!("template: {e}"))
            }
        }
    }

    pub fn op(&self) -> PostOp {
        match self {
            CompiledStep::LabelMap(_) => PostOp::LabelMap,
            CompiledStep::Count { .. } => PostOp::Count,
            CompiledStep::Annotate { .. } => PostOp::Annotate,
            CompiledStep::ToText => PostOp::ToText,
            CompiledStep::Format(_) => PostOp::Format,
        }
    }

    /// Output kind for a given input kind. `trigger` is the kind of the
    /// node's primary input, which `annotate` draws on.
    pub fn output_kind(&self, input: PayloadKind, trigger: PayloadKind) -> Result<PayloadKind, String> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(format!("{} expects {what} input, got {input}", self.op()))
            }
        };
        match self {
            CompiledStep::LabelMap(_) => {
                need(input == PayloadKind::Detections, "detections")?;
                Ok(PayloadKind::Detections)
            }
            CompiledStep::Count { .. } => {
                need(input == PayloadKind::Detections, "detections")?;
                Ok(PayloadKind::Scalar)
            }
            CompiledStep::Annotate { .. } => {
                need(input == PayloadKind::Detections, "detections")?;
                if trigger != PayloadKind::Image {
                    return Err(format!(
                        "annotate needs an image trigger input, node consumes {trigger}"
                    ));
                }
                Ok(PayloadKind::Image)
            }
            CompiledStep::ToText => {
                need(
                    matches!(input, PayloadKind::Detections | PayloadKind::Scalar),
                    "detections or scalar",
                )?;
                Ok(PayloadKind::Text)
            }
            CompiledStep::Format(_) => Ok(PayloadKind::Text),
        }
    }

    pub fn context_channels(&self) -> Vec<String> {
        match self {
            CompiledStep::Format(t) => t.channels(),
            _ => Vec::new(),
        }
    }

    pub fn apply(&self, input: &Payload, trigger: &Payload, ctx: &InferenceContext) -> Result<Payload, PostError> {
        let wrong = |expected| PostError::WrongInput {
            op: self.op(),
            expected,
            actual: input.kind(),
        };
        match self {
            CompiledStep::LabelMap(map) => match input {
                Payload::Detections(d) => Ok(Payload::Detections(label_map(d, map))),
                _ => Err(wrong("detections")),
            },
            CompiledStep::Count { label, min_score } => match input {
                Payload::Detections(d) => count(d, label, *min_score).map(Payload::Scalar),
                _ => Err(wrong("detections")),
            },
            CompiledStep::Annotate { value } => match (input, trigger) {
                (Payload::Detections(d), Payload::Tensor(img)) => annotate(img, d, *value).map(Payload::Tensor),
                (Payload::Detections(_), _) => {
                    Err(PostError::Invalid("annotate: trigger input is not an image".into()))
                }
                _ => Err(wrong("detections")),
            },
            CompiledStep::ToText => to_text(input).map(Payload::Text),
            CompiledStep::Format(t) => Ok(Payload::Text(t.render(&render_text(input), ctx))),
        }
    }
}

/// A compiled chain with optional publish bindings per step.
pub struct PostChain {
    input_kind: PayloadKind,
    steps: Vec<(CompiledStep, Option<Publisher>)>,
}

impl fmt::Debug for PostChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PostChain")
            .field("input_kind", &self.input_kind)
            .field("steps", &self.steps.iter().map(|s| s.0.op()).collect::<Vec<_>>())
            .finish()
    }
}

impl PostChain {
    /// Checks that kinds flow through the chain and that each publisher's
    /// channel accepts its step's output.
    pub fn new(
        input_kind: PayloadKind,
        trigger_kind: PayloadKind,
        steps: Vec<(CompiledStep, Option<Publisher>)>,
    ) -> Result<PostChain, String> {
        let mut kind = input_kind;
        for (i, (step, publisher)) in steps.iter().enumerate() {
            kind = step
                .output_kind(kind, trigger_kind)
                .map_err(|e| format!("post[{i}]: {e}"))?;
            if let Some(p) = publisher {
                if !kind.is_subkind_of(p.kind()) {
                    return Err(format!(
                        "post[{i}]: publishes {kind} on {:?}, which carries {}",
                        p.channel(),
                        p.kind()
                    ));
                }
            }
        }
        Ok(PostChain { input_kind, steps })
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn input_kind(&self) -> PayloadKind {
        self.input_kind
    }

    /// Messages published so far on each bound channel, in step order.
    pub fn publish_counts(&self) -> Vec<(String, u64)> {
        self.steps
            .iter()
            .filter_map(|(_, p)| p.as_ref())
            .map(|p| (p.channel().to_string(), p.published()))
            .collect()
    }

    /// Applies every step in order, publishing where bound. Returns the final
    /// payload and the number of messages published.
    pub fn run(
        &self,
        node_output: Payload,
        trigger: &Payload,
        ctx: &InferenceContext,
    ) -> Result<(Payload, u64), PostError> {
        let mut current = node_output;
        let mut published = 0;
        for (step, publisher) in &self.steps {
            current = step.apply(&current, trigger, ctx)?;
            if let Some(p) = publisher {
                p.publish(current.clone())?;
                published += 1;
            }
        }
        Ok((current, published))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Bus;
    use crate::params::params_from_yaml;
    use crate::payload::BBox;

    fn det(label: &str, score: f32, b: [f32; 4]) -> Detection {
        Detection {
            label: label.into(),
            score,
            bbox: BBox::new(b[0], b[1], b[2], b[3]),
        }
    }

    #[test]
    fn label_mapping() {
        let d = vec![det("person", 0.9, [0.0, 0.0, 1.0, 1.0])];
        let map: BTreeMap<_, _> = [("person".to_string(), "human".to_string())].into();
        assert_eq!(label_map(&d, &map), vec![det("human", 0.9, [0.0, 0.0, 1.0, 1.0])]);
        assert_eq!(label_map(&d, &BTreeMap::new()), d);
        let absent: BTreeMap<_, _> = [("car".to_string(), "auto".to_string())].into();
        assert_eq!(label_map(&d, &absent), d);
    }

    #[test]
    fn counting() {
        let b = [0.0, 0.0, 1.0, 1.0];
        let d = vec![det("person", 0.9, b), det("person", 0.8, b), det("person", 0.4, b)];
        assert_eq!(count(&d, "person", 0.5).unwrap(), 2.0);
        assert_eq!(count(&vec![], "person", 0.0).unwrap(), 0.0);
        assert_eq!(count(&d, "car", 0.0).unwrap(), 0.0);
        // inclusive threshold
        assert_eq!(count(&d, "person", f64::from(0.4f32)).unwrap(), 3.0);
        assert!(count(&d, "person", 1.5).is_err());
        assert!(count(&d, "person", -0.1).is_err());
    }

    #[test]
    fn to_text_rules() {
        assert_eq!(to_text(&Payload::Scalar(2.0)).unwrap(), "2");
        assert_eq!(to_text(&Payload::Detections(vec![])).unwrap(), "");
        assert_eq!(
            to_text(&Payload::Detections(vec![det("person", 0.5, [0.0, 0.0, 0.5, 0.5])])).unwrap(),
            "person 0.5000 0.0000 0.0000 0.5000 0.5000"
        );
        assert!(to_text(&Payload::text("x")).is_err());
    }

    fn changed(a: &Tensor, b: &Tensor) -> Vec<(usize, usize)> {
        let (h, w, c, pa) = a.as_hwc().unwrap();
        let pb = b.as_hwc().unwrap().3;
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                if (0..c).any(|k| pa[(y * w + x) * c + k] != pb[(y * w + x) * c + k]) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn annotate_full_frame() {
        let img = Tensor::image(5, 6, 3, vec![0; 90]).unwrap();
        let out = annotate(&img, &vec![det("p", 1.0, [0.0, 0.0, 1.0, 1.0])], 255).unwrap();
        let got = changed(&img, &out);
        let mut want = vec![];
        for y in 0..5 {
            for x in 0..6 {
                if x == 0 || y == 0 || x == 5 || y == 4 {
                    want.push((x, y));
                }
            }
        }
        assert_eq!(got, want);
        assert_eq!(annotate(&img, &vec![], 255).unwrap(), img);
    }

    #[test]
    fn annotate_rejects_non_image() {
        let t = Tensor::new(vec![4], crate::payload::TensorData::U8(vec![0; 4])).unwrap();
        assert!(annotate(&t, &vec![], 255).is_err());
    }

    #[test]
    fn compile_params() {
        assert!(CompiledStep::compile(PostOp::Count, &Params::new()).is_err());
        assert!(CompiledStep::compile(PostOp::Count, &params_from_yaml("label: p\nmin_score: 2").unwrap()).is_err());
        assert!(CompiledStep::compile(PostOp::Annotate, &params_from_yaml("value: 256").unwrap()).is_err());
        assert!(CompiledStep::compile(PostOp::ToText, &params_from_yaml("x: 1").unwrap()).is_err());
        assert!(CompiledStep::compile(PostOp::Format, &params_from_yaml("template: '{bad}'").unwrap()).is_err());
        assert_eq!(
            CompiledStep::compile(PostOp::LabelMap, &params_from_yaml("map: {person: human}").unwrap()).unwrap(),
            CompiledStep::LabelMap([("person".to_string(), "human".to_string())].into())
        );
    }

    #[test]
    fn chain_kind_errors() {
        let count = CompiledStep::compile(PostOp::Count, &params_from_yaml("label: p").unwrap()).unwrap();
        let err = PostChain::new(PayloadKind::Text, PayloadKind::Text, vec![(count.clone(), None)]).unwrap_err();
        assert!(err.contains("post[0]"), "{err}");
        let bus = Bus::new([("t", PayloadKind::Text)]).unwrap();
        let p = bus.publisher("t", "n").unwrap();
        assert!(PostChain::new(PayloadKind::Detections, PayloadKind::Image, vec![(count, Some(p))]).is_err());
    }

    #[test]
    fn demo_chain_publishes_count() {
        let bus = Bus::new([("/human_counter", PayloadKind::Scalar)]).unwrap();
        let sub = bus.subscribe("/human_counter").unwrap();
        let step = CompiledStep::compile(PostOp::Count, &params_from_yaml("label: person").unwrap()).unwrap();
        let chain = PostChain::new(
            PayloadKind::Detections,
            PayloadKind::Image,
            vec![(step, Some(bus.publisher("/human_counter", "person_detector").unwrap()))],
        )
        .unwrap();
        let b = [0.0, 0.0, 0.5, 0.5];
        let two = Payload::Detections(vec![det("person", 1.0, b), det("person", 1.0, b)]);
        let (out, published) = chain
            .run(two, &Payload::Scalar(0.0), &InferenceContext::default())
            .unwrap();
        assert_eq!(out, Payload::Scalar(2.0));
        assert_eq!(published, 1);
        assert_eq!(*sub.recv().unwrap().payload, Payload::Scalar(2.0));
    }

    #[test]
    fn empty_chain_is_identity() {
        let chain = PostChain::new(PayloadKind::Text, PayloadKind::Text, vec![]).unwrap();
        let (out, n) = chain
            .run(Payload::text("x"), &Payload::text("x"), &InferenceContext::default())
            .unwrap();
        assert_eq!((out, n), (Payload::text("x"), 0));
    }

    #[test]
    fn chain_equals_manual_composition() {
        let lm = CompiledStep::compile(PostOp::LabelMap, &params_from_yaml("map: {person: human}").unwrap()).unwrap();
        let ct = CompiledStep::compile(PostOp::Count, &params_from_yaml("label: human").unwrap()).unwrap();
        let chain = PostChain::new(
            PayloadKind::Detections,
            PayloadKind::Image,
            vec![(lm, None), (ct, None)],
        )
        .unwrap();
        let b = [0.0, 0.0, 0.5, 0.5];
        let d = vec![det("person", 0.7, b), det("car", 0.9, b), det("human", 0.2, b)];
        let manual = count(
            &label_map(&d, &[("person".into(), "human".into())].into()),
            "human",
            0.0,
        )
        .unwrap();
        let (out, _) = chain
            .run(
                Payload::Detections(d),
                &Payload::Scalar(0.0),
                &InferenceContext::default(),
            )
            .unwrap();
        assert_eq!(out, Payload::Scalar(manual));
        assert_eq!(manual, 2.0);
    }

    #[test]
    fn format_step_uses_context() {
        let step = CompiledStep::compile(
            PostOp::Format,
            &params_from_yaml("template: 'count={query} other={chan:x}'").unwrap(),
        )
        .unwrap();
        assert_eq!(step.context_channels(), vec!["x"]);
        let mut ctx = InferenceContext::default();
        ctx.latest.insert("x".into(), Payload::text("y"));
        let out = step.apply(&Payload::Scalar(3.0), &Payload::Scalar(0.0), &ctx).unwrap();
        assert_eq!(out, Payload::text("count=3 other=y"));
    }
}
