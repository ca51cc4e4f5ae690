//! Deterministic reference backends standing in for the detector, language
//! model and speech recognizer.

use std::sync::Arc;

use crate::params::{Params, ParamsExt};
use crate::payload::{BBox, Detection, DetectionSet, Payload, PayloadKind, Tensor};

use super::template::Template;
use super::{Backend, BackendDescriptor, BackendTable, InferError, InferenceContext, Model};

/// All reference backends, keyed by registration name.
pub fn builtin_backends() -> BackendTable {
    let list: Vec<Arc<dyn Backend>> = vec![
        Arc::new(IdentityBackend::new("identity", PayloadKind::Text)),
        Arc::new(IdentityBackend::new("identity-tensor", PayloadKind::Tensor)),
        Arc::new(IdentityDetectionsBackend::new()),
        Arc::new(DetectorBackend::new()),
        Arc::new(TemplateLlmBackend::new()),
        Arc::new(AsrBackend::new()),
    ];
    list.into_iter().map(|b| (b.descriptor().name.clone(), b)).collect()
}

fn descriptor(name: &str, inputs: &[PayloadKind], output: PayloadKind, context: bool) -> BackendDescriptor {
    BackendDescriptor {
        name: name.to_string(),
        input_kinds: inputs.to_vec(),
        output_kind: output,
        context_channels_allowed: context,
    }
}

/// Returns its first input unchanged.
pub struct IdentityBackend {
    descriptor: BackendDescriptor,
}

impl IdentityBackend {
    pub fn new(name: &str, kind: PayloadKind) -> IdentityBackend {
        IdentityBackend {
            descriptor: descriptor(name, &[kind], kind, false),
        }
    }
}

struct Identity;

impl Model for Identity {
    fn infer(&self, inputs: &[Payload], _ctx: &InferenceContext) -> Result<Payload, InferError> {
        Ok(inputs[0].clone())
    }
}

impl Backend for IdentityBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn load(&self, config: &Params) -> Result<Box<dyn Model>, String> {
        config.only_keys(&[])?;
        Ok(Box::new(Identity))
    }
}

/// Drop-in replacement for `stub-detector`: detection sets pass through
/// unchanged, images yield an empty set. Accepts and ignores the detector's
/// config so that only the `backend` field changes when swapping.
pub struct IdentityDetectionsBackend {
    descriptor: BackendDescriptor,
}

impl IdentityDetectionsBackend {
    pub fn new() -> Self {
        IdentityDetectionsBackend {
            descriptor: descriptor(
                "identity-detections",
                &[PayloadKind::Detections, PayloadKind::Image],
                PayloadKind::Detections,
                false,
            ),
        }
    }
}

impl Default for IdentityDetectionsBackend {
    fn default() -> Self {
        Self::new()
    }
}

struct IdentityDetections;

impl Model for IdentityDetections {
    fn infer(&self, inputs: &[Payload], _ctx: &InferenceContext) -> Result<Payload, InferError> {
        match &inputs[0] {
            Payload::Detections(d) => Ok(Payload::Detections(d.clone())),
            _ => Ok(Payload::Detections(Vec::new())),
        }
    }
}

impl Backend for IdentityDetectionsBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn load(&self, config: &Params) -> Result<Box<dyn Model>, String> {
        DetectorConfig::from_params(config)?;
        Ok(Box::new(IdentityDetections))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorConfig {
    pub threshold: u8,
    pub block: usize,
    pub label: String,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold: 200,
            block: 8,
            label: "person".into(),
        }
    }
}

impl DetectorConfig {
    pub fn from_params(config: &Params) -> Result<DetectorConfig, String> {
        config.only_keys(&["threshold", "block", "label"])?;
        let mut out = DetectorConfig::default();
        if let Some(t) = config.opt_u64("threshold")? {
            out.threshold = u8::try_from(t).map_err(|_| format!("threshold: {t} exceeds 255"))?;
        }
        if let Some(b) = config.opt_u64("block")? {
            if b == 0 || b > 4096 {
                return Err(format!("block: {b} must be in 1..=4096"));
            }
            out.block = b as usize;
        }
        if let Some(l) = config.opt_str("label")? {
            if l.is_empty() {
                return Err("label: must be nonempty".into());
            }
            out.label = l.to_string();
        }
        Ok(out)
    }
}

/// Tile-mean detector.
///
/// Each disjoint `block`×`block` tile (row-major, trailing partial tiles
/// ignored) whose mean over all pixels and channels is strictly above the
/// threshold becomes one detection with score `mean / 255` and the tile's
/// extent normalized by `(W, H)`.
pub fn stub_detect(image: &Tensor, cfg: &DetectorConfig) -> Result<DetectionSet, InferError> {
    let (h, w, c, px) = image
        .as_hwc()
        .ok_or_else(|| InferError::Precondition("stub detector expects a u8 [H, W, C] tensor".into()))?;
    let b = cfg.block;
    let mut out = Vec::new();
    if c == 0 {
        return Ok(out);
    }
    let denom = (b * b * c) as f64;
    for ty in 0..h / b {
        for tx in 0..w / b {
            let mut sum = 0u64;
            for y in ty * b..(ty + 1) * b {
                let row = &px[(y * w + tx * b) * c..(y * w + (tx + 1) * b) * c];
                sum += row.iter().map(|&v| u64::from(v)).sum::<u64>();
            }
            let mean = sum as f64 / denom;
            if mean > f64::from(cfg.threshold) {
                out.push(Detection {
                    label: cfg.label.clone(),
                    score: (mean / 255.0) as f32,
                    bbox: BBox::new(
                        ((tx * b) as f64 / w as f64) as f32,
                        ((ty * b) as f64 / h as f64) as f32,
                        (((tx + 1) * b) as f64 / w as f64) as f32,
                        (((ty + 1) * b) as f64 / h as f64) as f32,
                    ),
                });
            }
        }
    }
    Ok(out)
}

pub struct DetectorBackend {
    descriptor: BackendDescriptor,
}

impl DetectorBackend {
    pub fn new() -> Self {
        DetectorBackend {
            descriptor: descriptor("stub-detector", &[PayloadKind::Image], PayloadKind::Detections, false),
        }
    }
}

impl Default for DetectorBackend {
    fn default() -> Self {
        Self::new()
    }
}

struct Detector(DetectorConfig);

impl Model for Detector {
    fn infer(&self, inputs: &[Payload], _ctx: &InferenceContext) -> Result<Payload, InferError> {
        match &inputs[0] {
            Payload::Tensor(t) => stub_detect(t, &self.0).map(Payload::Detections),
            other => Err(InferError::Precondition(format!(
                "stub detector expects an image, got {}",
                other.kind()
            ))),
        }
    }
}

impl Backend for DetectorBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn load(&self, config: &Params) -> Result<Box<dyn Model>, String> {
        Ok(Box::new(Detector(DetectorConfig::from_params(config)?)))
    }
}

/// Template substitution in place of a language model.
pub struct TemplateLlmBackend {
    descriptor: BackendDescriptor,
}

impl TemplateLlmBackend {
    pub fn new() -> Self {
        TemplateLlmBackend {
            descriptor: descriptor("template-llm", &[PayloadKind::Text], PayloadKind::Text, true),
        }
    }

    fn template(config: &Params) -> Result<Template, String> {
        config.only_keys(&["template"])?;
        Template::parse(config.req_str("template")?).map_err(|e| format!("template: {e}"))
    }
}

impl Default for TemplateLlmBackend {
    fn default() -> Self {
        Self::new()
    }
}

struct TemplateLlm(Template);

impl Model for TemplateLlm {
    fn infer(&self, inputs: &[Payload], ctx: &InferenceContext) -> Result<Payload, InferError> {
        match &inputs[0] {
            Payload::Text(q) => Ok(Payload::Text(self.0.render(q, ctx))),
            other => Err(InferError::Precondition(format!(
                "template-llm expects text, got {}",
                other.kind()
            ))),
        }
    }
}

impl Backend for TemplateLlmBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn load(&self, config: &Params) -> Result<Box<dyn Model>, String> {
        Ok(Box::new(TemplateLlm(Self::template(config)?)))
    }

    fn context_channels(&self, config: &Params) -> Result<Vec<String>, String> {
        Ok(Self::template(config)?.channels())
    }
}

/// Token-table speech recognizer: the first sample of a chunk is a word id.
pub struct AsrBackend {
    descriptor: BackendDescriptor,
}

impl AsrBackend {
    pub fn new() -> Self {
        AsrBackend {
            descriptor: descriptor("token-asr", &[PayloadKind::Audio], PayloadKind::Text, false),
        }
    }
}

impl Default for AsrBackend {
    fn default() -> Self {
        Self::new()
    }
}

struct TokenAsr(Vec<String>);

impl Model for TokenAsr {
    fn infer(&self, inputs: &[Payload], _ctx: &InferenceContext) -> Result<Payload, InferError> {
        let Payload::Audio(chunk) = &inputs[0] else {
            return Err(InferError::Precondition("token-asr expects audio".into()));
        };
        let first = *chunk
            .samples
            .first()
            .ok_or_else(|| InferError::Precondition("audio chunk has no samples".into()))?;
        if first < 0 {
            return Err(InferError::Precondition(format!("negative token id {first}")));
        }
        Ok(Payload::Text(self.0.get(first as usize).cloned().unwrap_or_default()))
    }
}

impl Backend for AsrBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn load(&self, config: &Params) -> Result<Box<dyn Model>, String> {
        config.only_keys(&["vocab"])?;
        let vocab = config
            .opt_str_list("vocab")?
            .ok_or_else(|| "vocab: required".to_string())?;
        Ok(Box::new(TokenAsr(vocab)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::LocalModel;
    use crate::params::params_from_yaml;
    use crate::payload::AudioChunk;

    fn image_with_tiles(h: u32, w: u32, c: u32, tiles: &[(usize, usize)]) -> Tensor {
        let mut px = vec![0u8; (h * w * c) as usize];
        for &(tx, ty) in tiles {
            for y in ty * 8..ty * 8 + 8 {
                for x in tx * 8..tx * 8 + 8 {
                    for ch in 0..c as usize {
                        px[(y * w as usize + x) * c as usize + ch] = 255;
                    }
                }
            }
        }
        Tensor::image(h, w, c, px).unwrap()
    }

    #[test]
    fn one_bright_tile() {
        let img = image_with_tiles(16, 16, 3, &[(0, 0)]);
        let d = stub_detect(&img, &DetectorConfig::default()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].label, "person");
        assert_eq!(d[0].score, 1.0);
        assert_eq!(d[0].bbox, BBox::new(0.0, 0.0, 0.5, 0.5));
    }

    #[test]
    fn all_bright_single_channel() {
        let img = Tensor::image(16, 16, 1, vec![255; 256]).unwrap();
        assert_eq!(stub_detect(&img, &DetectorConfig::default()).unwrap().len(), 4);
    }

    #[test]
    fn zeros_and_threshold_ties() {
        let zeros = Tensor::image(64, 64, 3, vec![0; 64 * 64 * 3]).unwrap();
        assert!(stub_detect(&zeros, &DetectorConfig::default()).unwrap().is_empty());
        let at = Tensor::image(8, 8, 1, vec![200; 64]).unwrap();
        assert!(stub_detect(&at, &DetectorConfig::default()).unwrap().is_empty());
        let above = Tensor::image(8, 8, 1, vec![201; 64]).unwrap();
        assert_eq!(stub_detect(&above, &DetectorConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn partial_tiles_ignored() {
        let img = Tensor::image(12, 20, 1, vec![255; 240]).unwrap();
        // 1 row x 2 columns of full tiles
        let d = stub_detect(&img, &DetectorConfig::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[1].bbox.x0, (8.0f64 / 20.0) as f32);
    }

    #[test]
    fn detector_rejects_wrong_rank() {
        let t = Tensor::new(vec![4, 4], crate::payload::TensorData::U8(vec![0; 16])).unwrap();
        assert!(stub_detect(&t, &DetectorConfig::default()).is_err());
    }

    #[test]
    fn asr_lookup() {
        let b = AsrBackend::new();
        let m = LocalModel::load(&b, &params_from_yaml("vocab: [how, many]").unwrap()).unwrap();
        let chunk = |first: Option<i16>| {
            Payload::Audio(AudioChunk {
                sample_rate_hz: 16000,
                samples: first.into_iter().chain([0, 0]).collect(),
            })
        };
        let ctx = InferenceContext::default();
        assert_eq!(m.infer(&[chunk(Some(1))], &ctx).unwrap(), Payload::text("many"));
        assert_eq!(m.infer(&[chunk(Some(99))], &ctx).unwrap(), Payload::text(""));
        assert!(m.infer(&[chunk(Some(-1))], &ctx).is_err());
        let empty = Payload::Audio(AudioChunk {
            sample_rate_hz: 16000,
            samples: vec![],
        });
        assert!(matches!(m.infer(&[empty], &ctx), Err(InferError::Precondition(_))));
    }

    #[test]
    fn llm_context_channels() {
        let b = TemplateLlmBackend::new();
        let cfg = params_from_yaml("template: 'I see {chan:/human_counter} people.'").unwrap();
        assert_eq!(b.context_channels(&cfg).unwrap(), vec!["/human_counter"]);
        assert!(b.load(&params_from_yaml("template: '{oops}'").unwrap()).is_err());
        assert!(b.load(&Params::new()).is_err());
    }

    #[test]
    fn identity_detections_passes_sets() {
        let b = IdentityDetectionsBackend::new();
        let m = LocalModel::load(&b, &Params::new()).unwrap();
        let set = Payload::Detections(vec![Detection {
            label: "person".into(),
            score: 0.9,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
        }]);
        let ctx = InferenceContext::default();
        assert_eq!(m.infer(std::slice::from_ref(&set), &ctx).unwrap(), set);
        let img = Payload::Tensor(image_with_tiles(8, 8, 3, &[(0, 0)]));
        assert_eq!(m.infer(&[img], &ctx).unwrap(), Payload::Detections(vec![]));
    }
}
