//! Checkpoint serialization: a plain-text manifest naming each tensor and its
//! four extents, plus a binary blob of little-endian 64-bit reals concatenated
//! in manifest order. The same layout carries exported dataset samples.
//!
//! Round-trips are bit-exact: values travel as raw IEEE-754 bits, never
//! through decimal formatting.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{CrnError, Result};
use crate::params::ParamSet;
use crate::tensor::{Shape, Tensor};

/// One `name n c h w` line per tensor, in blob order.
pub fn write_manifest(path: &Path, entries: &[(String, Shape)]) -> Result<()> {
    let mut out = String::new();
    for (name, s) in entries {
        if name.contains(char::is_whitespace) {
            return Err(CrnError::Checkpoint(format!(
                "tensor name {name:?} contains whitespace"
            )));
        }
        out.push_str(&format!("{name} {} {} {} {}\n", s.n, s.c, s.h, s.w));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, Shape)>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(CrnError::Checkpoint(format!(
                "{}:{}: expected `name n c h w`, got {line:?}",
                path.display(),
                lineno + 1
            )));
        }
        let mut dims = [0usize; 4];
        for (d, f) in dims.iter_mut().zip(&fields[1..]) {
            *d = f.parse().map_err(|_| {
                CrnError::Checkpoint(format!(
                    "{}:{}: bad extent {f:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
        }
        entries.push((
            fields[0].to_string(),
            Shape::new(dims[0], dims[1], dims[2], dims[3]),
        ));
    }
    Ok(entries)
}

/// Write named tensors as manifest + blob at `base.manifest` / `base.bin`.
pub fn save_tensors(base: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let manifest: Vec<(String, Shape)> = entries
        .iter()
        .map(|(n, t)| (n.clone(), t.shape()))
        .collect();
    write_manifest(&base.with_extension("manifest"), &manifest)?;
    let file = fs::File::create(base.with_extension("bin"))?;
    let mut w = BufWriter::new(file);
    for (_, t) in entries {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read back tensors written by [`save_tensors`].
pub fn load_tensors(base: &Path) -> Result<Vec<(String, Tensor)>> {
    let manifest = read_manifest(&base.with_extension("manifest"))?;
    let blob = fs::read(base.with_extension("bin"))?;
    let expected: usize = manifest.iter().map(|(_, s)| s.len() * 8).sum();
    if blob.len() != expected {
        return Err(CrnError::Checkpoint(format!(
            "blob {} holds {} bytes, manifest expects {}",
            base.with_extension("bin").display(),
            blob.len(),
            expected
        )));
    }
    let mut entries = Vec::with_capacity(manifest.len());
    let mut offset = 0;
    for (name, shape) in manifest {
        let mut data = Vec::with_capacity(shape.len());
        for _ in 0..shape.len() {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&blob[offset..offset + 8]);
            data.push(f64::from_le_bytes(raw));
            offset += 8;
        }
        entries.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(entries)
}

/// Checkpoint an entire parameter set in enumeration order.
pub fn save_params(base: &Path, params: &ParamSet) -> Result<()> {
    let entries: Vec<(String, Tensor)> = params
        .iter()
        .map(|(_, n, t)| (n.to_string(), t.clone()))
        .collect();
    save_tensors(base, &entries)
}

/// Load a checkpoint into an existing parameter set. Names and shapes must
/// match the set exactly (same model configuration).
pub fn load_params(base: &Path, params: &mut ParamSet) -> Result<()> {
    let entries = load_tensors(base)?;
    if entries.len() != params.len() {
        return Err(CrnError::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            params.len()
        )));
    }
    for (name, tensor) in entries {
        let id = params.lookup(&name).ok_or_else(|| {
            CrnError::Checkpoint(format!("checkpoint tensor {name:?} not in model"))
        })?;
        params.set_value(id, tensor).map_err(|_| {
            CrnError::Checkpoint(format!("checkpoint tensor {name:?} has wrong shape"))
        })?;
    }
    Ok(())
}
