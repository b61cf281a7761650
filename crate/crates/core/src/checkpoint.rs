//! Single-file parameter archives.
//!
//! An archive is a safetensors file: named arrays plus one metadata entry
//! holding a JSON document with a mandatory `version` field. Tensor order
//! is fixed by the format (dtype, then name) and the metadata has a single
//! key, so equal contents always serialize to equal bytes.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, View};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{hex, tensor_le_bytes};

pub const FORMAT_VERSION: u32 = 1;
const META_KEY: &str = "ptgan";

struct Raw {
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl View for &Raw {
    fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }

    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn to_raw(t: &Tensor) -> Result<Raw> {
    let dtype = match t.dtype() {
        DType::F64 => Dtype::F64,
        DType::F32 => Dtype::F32,
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    };
    Ok(Raw {
        dtype,
        shape: t.dims().to_vec(),
        bytes: tensor_le_bytes(t)?,
    })
}

/// Serialize `tensors` with `meta`, which must serialize to a JSON object.
/// A `version` field is inserted.
pub fn encode<M: Serialize>(tensors: &BTreeMap<String, Tensor>, meta: &M) -> Result<Vec<u8>> {
    let mut doc = serde_json::to_value(meta)?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Checkpoint("metadata must be a JSON object".into()))?;
    obj.insert("version".into(), FORMAT_VERSION.into());
    let raws: Vec<(String, Raw)> = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), to_raw(t)?)))
        .collect::<Result<_>>()?;
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&doc)?)]);
    safetensors::serialize(raws.iter().map(|(k, r)| (k.as_str(), r)), Some(info))
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, HashMap<String, Tensor>)> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let text = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("archive has no metadata document".into()))?;
    let doc: serde_json::Value = serde_json::from_str(text)?;
    match doc.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::Checkpoint(format!("unsupported archive version {v}"))),
        None => return Err(Error::Checkpoint("archive metadata lacks a version".into())),
    }
    let meta = serde_json::from_value(doc).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        let dtype = match view.dtype() {
            Dtype::F32 => DType::F32,
            Dtype::F64 => DType::F64,
            other => return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        let t = Tensor::from_raw_buffer(view.data(), dtype, view.shape(), &Device::Cpu)?;
        tensors.insert(name, t);
    }
    Ok((meta, tensors))
}

pub fn save<M: Serialize>(path: &Path, tensors: &BTreeMap<String, Tensor>, meta: &M) -> Result<Vec<u8>> {
    let bytes = encode(tensors, meta)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, &bytes)?;
    Ok(bytes)
}

pub fn load<M: DeserializeOwned>(path: &Path) -> Result<(M, HashMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    decode(&bytes)
}

/// Short content hash identifying an archive.
pub fn archive_id(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))[..16].to_string()
}
