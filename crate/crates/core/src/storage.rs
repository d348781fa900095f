//! On-disk containers: a JSON manifest next to a flat little-endian blob.
//!
//! Writes go to a temporary sibling that is renamed into place while an
//! exclusive lock is held on `<path>.lock`, so concurrent writers to the same
//! target serialize and readers never see a partial file.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

pub const FORMAT_VERSION: u32 = 1;

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `bytes` to `path` atomically under an exclusive lock.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let lock_path = with_suffix(path, ".lock");
    let lock = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| Error::io(lock_path.display().to_string(), e))?;
    lock.lock().map_err(|e| Error::io(lock_path.display().to_string(), e))?;

    let tmp = with_suffix(path, ".tmp");
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })()
    .map_err(|e| Error::io(path.display().to_string(), e));
    let _ = lock.unlock();
    drop(lock);
    let _ = fs::remove_file(&lock_path);
    result
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn f32_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("blob of {} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn bytes_to_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("blob of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// `<stem>.manifest.json` and `<stem>.<ext>` for a container stem.
pub fn container_paths(stem: &Path, blob_ext: &str) -> (PathBuf, PathBuf) {
    (with_suffix(stem, ".manifest.json"), with_suffix(stem, &format!(".{blob_ext}")))
}

pub(crate) fn check_version(version: u32, what: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{what}: unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format_version: u32,
    kind: String,
    dtype: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Writes named parameter tensors (f64, bit-exact) plus a config echo.
pub fn save_checkpoint(stem: &Path, params: &ParamStore, config: &serde_json::Value) -> Result<()> {
    let mut blob = Vec::with_capacity(params.num_scalars());
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        blob.extend(t.iter().copied());
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        kind: "checkpoint".into(),
        dtype: "f64".into(),
        config: config.clone(),
        tensors,
    };
    let (mpath, bpath) = container_paths(stem, "f64");
    write_atomic(&bpath, &f64_to_bytes(&blob))?;
    write_atomic(&mpath, &serde_json::to_vec_pretty(&manifest)?)
}

pub fn load_checkpoint(stem: &Path) -> Result<(ParamStore, serde_json::Value)> {
    let (mpath, bpath) = container_paths(stem, "f64");
    let manifest: CheckpointManifest = serde_json::from_slice(&read_bytes(&mpath)?)?;
    check_version(manifest.format_version, &mpath.display().to_string())?;
    if manifest.kind != "checkpoint" || manifest.dtype != "f64" {
        return Err(Error::Format(format!(
            "{} is a `{}`/`{}` container, not an f64 checkpoint",
            mpath.display(),
            manifest.kind,
            manifest.dtype
        )));
    }
    let blob = bytes_to_f64(&read_bytes(&bpath)?)?;
    let expected: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if expected != blob.len() {
        return Err(Error::Format(format!(
            "checkpoint manifest declares {expected} values, blob holds {}",
            blob.len()
        )));
    }
    let mut store = ParamStore::new();
    for t in manifest.tensors {
        let len: usize = t.shape.iter().product();
        let end = t.offset + len;
        if end > blob.len() {
            return Err(Error::Format(format!("tensor `{}` runs past the blob", t.name)));
        }
        let tensor = Tensor::from_shape_vec(IxDyn(&t.shape), blob[t.offset..end].to_vec())
            .map_err(|e| Error::Format(e.to_string()))?;
        store.insert(t.name, tensor);
    }
    Ok((store, manifest.config))
}

/// Writes `rows` as CSV with the given header.
pub fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
