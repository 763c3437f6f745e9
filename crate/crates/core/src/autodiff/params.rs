//! Named parameter storage and the on-disk checkpoint format.
//!
//! A checkpoint is a JSON manifest (names, shapes, dtype, element offsets and an
//! optional embedded config) next to a raw little-endian `f64` payload.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

/// Parameters of a [`ParamStore`] recorded as leaves on one tape.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    #[cfg(test)]
    pub(crate) fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`; `trainable` decides which ones require gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(ParamId) -> bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(t.clone(), trainable(ParamId(i))))
            .collect();
        BoundParams { vars }
    }

    /// Copies values from `other` for every name both stores share with matching shapes.
    pub fn load_matching(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for (i, name) in self.names.iter().enumerate() {
            if let Some(j) = other.index.get(name) {
                if other.tensors[*j].shape() == self.tensors[i].shape() {
                    self.tensors[i] = other.tensors[*j].clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    payload: String,
    params: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

const FORMAT_TAG: &str = "latentflow-checkpoint";

/// Writes `<stem>.json` and `<stem>.bin` into `dir`, returning the manifest path.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    store: &ParamStore,
    config: Option<serde_json::Value>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let payload_name = format!("{stem}.bin");
    let mut payload = Vec::with_capacity(store.scalar_count() * 8);
    let mut params = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (name, t) in store.names.iter().zip(&store.tensors) {
        params.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape(),
            offset,
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.len();
    }
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        version: 1,
        dtype: "f64-le".to_string(),
        payload: payload_name.clone(),
        params,
        config,
    };
    fs::write(dir.join(&payload_name), payload)?;
    let manifest_path = dir.join(format!("{stem}.json"));
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest_path)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(ParamStore, Option<serde_json::Value>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format != FORMAT_TAG || manifest.dtype != "f64-le" {
        return Err(Error::invalid(format!(
            "{}: not a checkpoint manifest (format {}, dtype {})",
            manifest_path.display(),
            manifest.format,
            manifest.dtype
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let bytes = fs::read(dir.join(&manifest.payload))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: "payload length is not a multiple of 8".into(),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut store = ParamStore::new();
    for e in manifest.params {
        let n = e.shape[0] * e.shape[1];
        let end = e.offset + n;
        if end > values.len() {
            return Err(Error::Format {
                offset: (e.offset * 8) as u64,
                message: format!("parameter {} runs past the payload end", e.name),
            });
        }
        store.add(e.name, Tensor::new(e.shape[0], e.shape[1], values[e.offset..end].to_vec())?)?;
    }
    Ok((store, manifest.config))
}
