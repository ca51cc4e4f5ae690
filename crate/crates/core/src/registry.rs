//! Plugin tables: backends by runtime name and adapters by adapter name.

use std::sync::Arc;

use crate::bus::adapters::AdapterRegistry;
use crate::inference::{builtin_backends, Backend, BackendTable, ModelRegistry};

/// Everything a pipeline may refer to by name. Third-party plugins are added
/// with [`Registry::register_backend`] and the adapter registry before a spec
/// is parsed.
#[derive(Clone)]
pub struct Registry {
    backends: Arc<BackendTable>,
    pub adapters: AdapterRegistry,
}

impl Registry {
    pub fn builtin() -> Registry {
        Registry {
            backends: Arc::new(builtin_backends()),
            adapters: AdapterRegistry::builtin(),
        }
    }

    pub fn register_backend(&mut self, backend: Arc<dyn Backend>) {
        let name = backend.descriptor().name.clone();
        Arc::make_mut(&mut self.backends).insert(name, backend);
    }

    pub fn backend(&self, name: &str) -> Option<&Arc<dyn Backend>> {
        self.backends.get(name)
    }

    pub fn backends(&self) -> &Arc<BackendTable> {
        &self.backends
    }

    /// A fresh model registry over the same backends.
    pub fn model_registry(&self) -> ModelRegistry {
        ModelRegistry::new(self.backends.clone())
    }
}

impl Default for Registry {
    fn default() -> Self {
        Registry::builtin()
    }
}
