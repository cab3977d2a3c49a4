//! Versioned binary container for named arrays plus string metadata,
//! stored in the safetensors layout.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::safetensors::Load;
use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const FORMAT_KEY: &str = "format";
pub const VERSION_KEY: &str = "format_version";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert(FORMAT_KEY.to_string(), kind.to_string());
        metadata.insert(VERSION_KEY.to_string(), FORMAT_VERSION.to_string());
        Self {
            tensors: BTreeMap::new(),
            metadata,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))
    }

    /// Stores every parameter of `store` under `prefix/`.
    pub fn insert_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.tensors() {
            self.tensors.insert(format!("{prefix}/{name}"), t);
        }
    }

    /// Loads the `prefix/` arrays back into `store`, rejecting missing,
    /// extra or mis-shaped entries.
    pub fn restore_store(&self, prefix: &str, store: &ParamStore) -> Result<()> {
        let head = format!("{prefix}/");
        let subset: BTreeMap<String, Tensor> = self
            .tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(&head).map(|n| (n.to_string(), t.clone())))
            .collect();
        store
            .load_tensors(&subset)
            .map_err(|e| Error::Checkpoint(format!("{prefix}: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let data: Vec<(&str, &Tensor)> = self.tensors.iter().map(|(k, t)| (k.as_str(), t)).collect();
        safetensors::serialize(data, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8], expected_kind: &str) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let metadata: BTreeMap<String, String> = header
            .metadata()
            .clone()
            .unwrap_or_default()
            .into_iter()
            .collect();
        match metadata.get(FORMAT_KEY) {
            Some(k) if k == expected_kind => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "expected a {expected_kind} container, found {other:?}"
                )))
            }
        }
        if metadata.get(VERSION_KEY).map(String::as_str) != Some(FORMAT_VERSION) {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {:?}",
                metadata.get(VERSION_KEY)
            )));
        }
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            tensors.insert(name, view.load(&Device::Cpu)?);
        }
        Ok(Self { tensors, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, expected_kind)
    }
}
