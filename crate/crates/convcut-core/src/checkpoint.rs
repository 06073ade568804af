//! CCUT checkpoint format: the one weight-exchange format read or written.
//!
//! Layout (all integers little-endian):
//!   magic "CCUT" | u32 version = 1 | u32 entry count
//!   per entry, sorted by name:
//!     u32 name length | UTF-8 name | u32 rank | rank × u32 dims | f32 data
//!
//! Values are stored as f32 regardless of the in-memory scalar type, so an
//! f32 model round-trips bitwise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ConvCutModel;
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CCUT";
pub const VERSION: u32 = 1;

/// Serialize named tensors (sorted by name) into the CCUT byte layout.
pub fn encode_entries<S: Scalar>(entries: &[(String, Tensor<S>)]) -> Vec<u8> {
    let mut sorted: Vec<&(String, Tensor<S>)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for (name, tensor) in sorted {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

pub fn save_entries<S: Scalar>(path: &Path, entries: &[(String, Tensor<S>)]) -> Result<()> {
    std::fs::write(path, encode_entries(entries))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write every model parameter.
pub fn save_model<S: Scalar>(path: &Path, model: &ConvCutModel<S>) -> Result<()> {
    save_entries(path, &model.named_params())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file while reading {what}"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_entries<S: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<S>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a CCUT file)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32("entry count")? as usize;
    let mut entries: Vec<(String, Tensor<S>)> = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("entry {i}: name is not UTF-8")))?
            .to_string();
        if let Some((prev, _)) = entries.last() {
            // the format stores entries unique and sorted by name
            if *prev >= name {
                return Err(Error::Checkpoint(format!(
                    "entry `{name}` out of order after `{prev}` (entries must be unique and sorted)"
                )));
            }
        }
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let shape = Shape::new(dims)
            .map_err(|e| Error::Checkpoint(format!("entry `{name}`: {e}")))?;
        let raw = r.take(shape.numel() * 4, &format!("data of `{name}`"))?;
        let data: Vec<S> = raw
            .chunks_exact(4)
            .map(|c| S::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        entries.push((name.clone(), Tensor::from_vec(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

pub fn load_entries<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_entries(&bytes)
}

/// What a lenient load skipped (all empty after a strict load).
#[derive(Debug, Default, Clone)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Model parameters with no entry in the file (left at current values).
    pub missing_in_file: Vec<String>,
    /// File entries with no matching model parameter.
    pub unused_in_file: Vec<String>,
    /// Name matches whose shapes disagree (skipped in lenient mode).
    pub shape_mismatch: Vec<String>,
}

/// Copy matching entries into the model. In strict mode any missing, extra,
/// or shape-mismatched entry is an error and the model is left untouched; in
/// lenient mode mismatches are skipped and reported (how a backbone-only
/// checkpoint seeds a larger model).
pub fn load_model<S: Scalar>(
    path: &Path,
    model: &mut ConvCutModel<S>,
    strict: bool,
) -> Result<LoadReport> {
    let entries = load_entries::<S>(path)?;
    let file: std::collections::BTreeMap<String, Tensor<S>> = entries.into_iter().collect();

    let mut report = LoadReport::default();
    let mut model_names = std::collections::BTreeSet::new();
    let mut planned: Vec<(String, Tensor<S>)> = Vec::new();
    model.for_each_param(&mut |name, param| {
        model_names.insert(name.clone());
        match file.get(&name) {
            None => report.missing_in_file.push(name),
            Some(t) if t.shape() != param.shape() => report.shape_mismatch.push(name),
            Some(t) => {
                planned.push((name.clone(), t.clone()));
                report.loaded.push(name);
            }
        }
    });
    for name in file.keys() {
        if !model_names.contains(name) {
            report.unused_in_file.push(name.clone());
        }
    }

    if strict {
        if let Some(name) = report
            .missing_in_file
            .first()
            .or(report.unused_in_file.first())
            .or(report.shape_mismatch.first())
        {
            return Err(Error::Checkpoint(format!(
                "strict load mismatch at entry `{name}` ({} missing, {} unused, {} shape mismatches)",
                report.missing_in_file.len(),
                report.unused_in_file.len(),
                report.shape_mismatch.len()
            )));
        }
    }

    let planned: std::collections::BTreeMap<String, Tensor<S>> = planned.into_iter().collect();
    model.for_each_param_mut(&mut |name, param| {
        if let Some(t) = planned.get(&name) {
            *param = t.clone().with_requires_grad(true);
        }
    });
    Ok(report)
}
