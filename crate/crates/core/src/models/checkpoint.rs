//! Checkpoint files.
//!
//! Layout: a first line `slate-rank-checkpoint <manifest bytes>`, a TOML
//! manifest (format version, spec, vocabulary sizes, tensor names, shapes and
//! byte offsets), then every tensor as raw little-endian `f32` in manifest
//! order.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::spec::ModelSpec;
use crate::data::VocabSizes;
use crate::diffcore::{Precision, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "slate-rank-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    dtype: String,
    slate_size: usize,
    spec: ModelSpec,
    sizes: VocabSizes,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    offset: usize,
}

/// Serializes the model. Values are stored as `f32`; a model trained at
/// [`Precision::F32`] round-trips exactly.
pub fn checkpoint_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data = Vec::with_capacity(model.params.total_numel() * 4);
    for (_, name, t) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: data.len(),
        });
        for &v in t.values() {
            data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        dtype: "f32le".into(),
        slate_size: model.slate_size,
        spec: model.spec.clone(),
        sizes: model.sizes.clone(),
        tensors,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("cannot serialize checkpoint manifest: {e}")))?;
    let mut out = format!("{MAGIC} {}\n", text.len()).into_bytes();
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&data);
    Ok(out)
}

/// Writes via a temporary sibling and a rename, so a failed save never
/// leaves a truncated checkpoint behind.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Model> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Data("not a checkpoint (no header line)".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).unwrap_or("");
    let len: usize = header
        .strip_prefix(MAGIC)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Data("not a checkpoint (bad header line)".into()))?;
    let body = &bytes[nl + 1..];
    if body.len() < len {
        return Err(Error::Data("checkpoint manifest truncated".into()));
    }
    let text = std::str::from_utf8(&body[..len])
        .map_err(|_| Error::Data("checkpoint manifest is not UTF-8".into()))?;
    let manifest: Manifest =
        toml::from_str(text).map_err(|e| Error::Data(format!("bad checkpoint manifest: {e}")))?;
    if manifest.format_version != CHECKPOINT_VERSION || manifest.dtype != "f32le" {
        return Err(Error::Data(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    let data = &body[len..];

    let mut model = Model::new(
        manifest.spec.clone(),
        manifest.sizes.clone(),
        manifest.slate_size,
        0,
        Precision::F32,
    )?;
    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
        .collect();
    let found: Vec<(String, Vec<usize>)> = manifest
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if expected != found {
        return Err(Error::Shape(format!(
            "checkpoint tensors do not match its spec:\n{}",
            shape_diff(&expected, &found)
        )));
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if data.len() != total * 4 {
        return Err(Error::Data(format!(
            "checkpoint data has {} bytes, manifest needs {}",
            data.len(),
            total * 4
        )));
    }
    for entry in &manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let raw = data
            .get(entry.offset..entry.offset + 4 * n)
            .ok_or_else(|| Error::Data(format!("tensor `{}` lies outside the data", entry.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = model
            .params
            .by_name_mut(&entry.name)
            .expect("name checked against spec");
        let grad_flag = t.requires_grad;
        *t = Tensor::new(entry.shape.clone(), values)?;
        t.requires_grad = grad_flag;
    }
    Ok(model)
}

/// Line-per-difference listing of two `(name, shape)` lists.
pub fn shape_diff(expected: &[(String, Vec<usize>)], found: &[(String, Vec<usize>)]) -> String {
    let mut lines = Vec::new();
    for (name, shape) in expected {
        match found.iter().find(|(n, _)| n == name) {
            None => lines.push(format!("  missing {name} {shape:?}")),
            Some((_, s)) if s != shape => lines.push(format!("  {name}: expected {shape:?}, found {s:?}")),
            _ => {}
        }
    }
    for (name, shape) in found {
        if !expected.iter().any(|(n, _)| n == name) {
            lines.push(format!("  unexpected {name} {shape:?}"));
        }
    }
    if lines.is_empty() {
        lines.push("  same tensors in a different order".into());
    }
    lines.join("\n")
}

impl Model {
    /// Fails with a per-field size listing when the model was built for a
    /// different vocabulary or slate length.
    pub fn check_compatible(&self, sizes: &VocabSizes, slate_size: usize) -> Result<()> {
        if &self.sizes == sizes && self.slate_size == slate_size {
            return Ok(());
        }
        let mut diff = Vec::new();
        let mut cmp = |field: &str, a: usize, b: usize| {
            if a != b {
                diff.push(format!("  {field}: model {a}, data {b}"));
            }
        };
        cmp("user", self.sizes.user, sizes.user);
        cmp("item", self.sizes.item, sizes.item);
        cmp("category", self.sizes.category, sizes.category);
        cmp("slate_size", self.slate_size, slate_size);
        cmp("context fields", self.sizes.context.len(), sizes.context.len());
        for (i, (a, b)) in self.sizes.context.iter().zip(&sizes.context).enumerate() {
            cmp(&format!("context{i}"), *a, *b);
        }
        Err(Error::Shape(format!(
            "checkpoint does not fit this dataset:\n{}",
            diff.join("\n")
        )))
    }
}
