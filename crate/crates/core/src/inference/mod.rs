//! Uniform model interface and the loaded-model registry.
//!
//! A backend is registered by name and describes the payload kinds it takes
//! and produces. Loading a backend with a config yields a [`Model`]; the
//! [`ModelRegistry`] hands out numeric handles for loaded models.

mod backends;
pub mod template;

pub use backends::{
    builtin_backends, stub_detect, AsrBackend, DetectorBackend, DetectorConfig, IdentityBackend,
    IdentityDetectionsBackend, TemplateLlmBackend,
};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::params::Params;
use crate::payload::{Payload, PayloadKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub name: String,
    pub input_kinds: Vec<PayloadKind>,
    pub output_kind: PayloadKind,
    /// Whether the backend may read latest values of auxiliary channels.
    pub context_channels_allowed: bool,
}

/// Latest payload observed on each context channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InferenceContext {
    pub latest: BTreeMap<String, Payload>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelHandle {
    pub id: u32,
    pub model_id: String,
    pub backend: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("invalid config for backend {backend:?}: {reason}")]
    InvalidConfig { backend: String, reason: String },
    #[error("unknown model handle {0}")]
    UnknownHandle(u32),
    #[error("input kind mismatch: backend {backend:?} accepts {accepted:?}, got {actual}")]
    KindMismatch {
        backend: String,
        accepted: Vec<PayloadKind>,
        actual: PayloadKind,
    },
    #[error("backend {backend:?} produced {actual}, declared {declared}")]
    OutputKind {
        backend: String,
        declared: PayloadKind,
        actual: PayloadKind,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// A loadable model runtime.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Builds a model instance, rejecting invalid configs with a reason.
    fn load(&self, config: &Params) -> Result<Box<dyn Model>, String>;

    /// Validates a config without keeping the model around.
    fn check_config(&self, config: &Params) -> Result<(), String> {
        self.load(config).map(|_| ())
    }

    /// Channels whose latest values the configured model reads.
    fn context_channels(&self, _config: &Params) -> Result<Vec<String>, String> {
        Ok(Vec::new())
    }
}

/// A loaded model. Reference models are pure functions of their arguments.
pub trait Model: Send + Sync {
    fn infer(&self, inputs: &[Payload], ctx: &InferenceContext) -> Result<Payload, InferError>;
}

/// A loaded model wrapped with kind checks on both sides of `infer`.
pub struct LocalModel {
    descriptor: BackendDescriptor,
    model: Box<dyn Model>,
}

impl LocalModel {
    pub fn load(backend: &dyn Backend, config: &Params) -> Result<LocalModel, InferError> {
        let descriptor = backend.descriptor().clone();
        let model = backend.load(config).map_err(|reason| InferError::InvalidConfig {
            backend: descriptor.name.clone(),
            reason,
        })?;
        Ok(LocalModel { descriptor, model })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    pub fn infer(&self, inputs: &[Payload], ctx: &InferenceContext) -> Result<Payload, InferError> {
        if inputs.is_empty() {
            return Err(InferError::Precondition("at least one input is required".into()));
        }
        for input in inputs {
            if !self.descriptor.input_kinds.iter().any(|k| k.admits(input)) {
                return Err(InferError::KindMismatch {
                    backend: self.descriptor.name.clone(),
                    accepted: self.descriptor.input_kinds.clone(),
                    actual: input.kind(),
                });
            }
        }
        let out = self.model.infer(inputs, ctx)?;
        if !self.descriptor.output_kind.admits(&out) {
            return Err(InferError::OutputKind {
                backend: self.descriptor.name.clone(),
                declared: self.descriptor.output_kind,
                actual: out.kind(),
            });
        }
        Ok(out)
    }
}

pub type BackendTable = BTreeMap<String, Arc<dyn Backend>>;

/// Loaded models keyed by handle id. Safe to share between threads.
pub struct ModelRegistry {
    backends: Arc<BackendTable>,
    models: RwLock<HashMap<u32, Arc<LocalModel>>>,
    next_id: AtomicU32,
}

impl ModelRegistry {
    pub fn new(backends: Arc<BackendTable>) -> ModelRegistry {
        ModelRegistry {
            backends,
            models: RwLock::new(HashMap::new()),
            next_id: AtomicU32::new(1),
        }
    }

    pub fn with_builtins() -> ModelRegistry {
        ModelRegistry::new(Arc::new(builtin_backends()))
    }

    pub fn backends(&self) -> &BackendTable {
        &self.backends
    }

    pub fn load_model(&self, model_id: &str, backend: &str, config: &Params) -> Result<ModelHandle, InferError> {
        let b = self
            .backends
            .get(backend)
            .ok_or_else(|| InferError::UnknownBackend(backend.to_string()))?;
        let model = LocalModel::load(b.as_ref(), config)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.models.write().unwrap().insert(id, Arc::new(model));
        Ok(ModelHandle {
            id,
            model_id: model_id.to_string(),
            backend: backend.to_string(),
        })
    }

    pub fn model(&self, id: u32) -> Result<Arc<LocalModel>, InferError> {
        self.models
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(InferError::UnknownHandle(id))
    }

    pub fn infer(
        &self,
        handle: &ModelHandle,
        inputs: &[Payload],
        ctx: &InferenceContext,
    ) -> Result<Payload, InferError> {
        self.model(handle.id)?.infer(inputs, ctx)
    }

    pub fn unload(&self, handle: &ModelHandle) -> bool {
        self.models.write().unwrap().remove(&handle.id).is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::params_from_yaml;
    use crate::payload::Tensor;

    #[test]
    fn load_and_infer_identity() {
        let reg = ModelRegistry::with_builtins();
        let h = reg.load_model("echo", "identity", &Params::new()).unwrap();
        let out = reg
            .infer(&h, &[Payload::text("hi")], &InferenceContext::default())
            .unwrap();
        assert_eq!(out, Payload::text("hi"));
    }

    #[test]
    fn unknown_backend() {
        let reg = ModelRegistry::with_builtins();
        let err = reg.load_model("x", "no-such-backend", &Params::new()).unwrap_err();
        assert_eq!(err, InferError::UnknownBackend("no-such-backend".into()));
    }

    #[test]
    fn invalid_config() {
        let reg = ModelRegistry::with_builtins();
        let cfg = params_from_yaml("threshold: 300").unwrap();
        let err = reg.load_model("d", "stub-detector", &cfg).unwrap_err();
        assert!(matches!(err, InferError::InvalidConfig { .. }));
    }

    #[test]
    fn same_triple_twice_gives_distinct_equivalent_handles() {
        let reg = ModelRegistry::with_builtins();
        let cfg = params_from_yaml("threshold: 200").unwrap();
        let a = reg.load_model("person-detection-0200", "stub-detector", &cfg).unwrap();
        let b = reg.load_model("person-detection-0200", "stub-detector", &cfg).unwrap();
        assert_ne!(a.id, b.id);
        let mut px = vec![0u8; 16 * 16 * 3];
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    px[(y * 16 + x) * 3 + c] = 255;
                }
            }
        }
        let img = Payload::Tensor(Tensor::image(16, 16, 3, px).unwrap());
        let ctx = InferenceContext::default();
        let ra = reg.infer(&a, std::slice::from_ref(&img), &ctx).unwrap();
        let rb = reg.infer(&b, &[img], &ctx).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn kind_mismatch_on_input() {
        let reg = ModelRegistry::with_builtins();
        let h = reg.load_model("echo", "identity", &Params::new()).unwrap();
        let err = reg
            .infer(&h, &[Payload::Scalar(1.0)], &InferenceContext::default())
            .unwrap_err();
        assert!(matches!(err, InferError::KindMismatch { .. }));
        assert!(matches!(
            reg.infer(&h, &[], &InferenceContext::default()),
            Err(InferError::Precondition(_))
        ));
    }

    #[test]
    fn unknown_handle() {
        let reg = ModelRegistry::with_builtins();
        let h = ModelHandle {
            id: 999,
            model_id: "m".into(),
            backend: "identity".into(),
        };
        assert_eq!(
            reg.infer(&h, &[Payload::text("x")], &InferenceContext::default()),
            Err(InferError::UnknownHandle(999))
        );
    }
}
