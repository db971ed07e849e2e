//! On-disk array artifacts: a JSON manifest next to a raw little-endian
//! blob holding the arrays concatenated in manifest order.
//!
//! The manifest records each array's name, dtype and shape plus the
//! SHA-256 of the blob; reads verify the hash before decoding anything.
//! Every write goes to a temporary path first and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use trimodal_autodiff::Tensor;

use crate::error::{Error, Result};

pub const FORMAT: &str = "trimodal-arrays/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I8,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::I8 | DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl ArrayEntry {
    pub fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * self.dtype.size()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub endianness: String,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub blob_bytes: u64,
    pub sha256: String,
    pub arrays: Vec<ArrayEntry>,
    /// Free-form provenance: config echo, seed, counts.
    pub meta: serde_json::Value,
}

/// One decoded array.
#[derive(Clone, Debug, PartialEq)]
pub struct RawArray {
    pub entry: ArrayEntry,
    pub bytes: Vec<u8>,
}

impl RawArray {
    pub fn from_tensor(name: &str, tensor: &Tensor, dtype: DType) -> Result<Self> {
        let bytes = match dtype {
            DType::F32 => tensor.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
            DType::F64 => tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{name}` cannot be stored as {other:?}"
                )))
            }
        };
        Ok(Self {
            entry: ArrayEntry {
                name: name.to_string(),
                dtype,
                shape: tensor.shape().to_vec(),
            },
            bytes,
        })
    }

    pub fn from_i8(name: &str, shape: Vec<usize>, values: &[i8]) -> Self {
        Self {
            entry: ArrayEntry {
                name: name.to_string(),
                dtype: DType::I8,
                shape,
            },
            bytes: values.iter().map(|&v| v as u8).collect(),
        }
    }

    pub fn from_u8(name: &str, shape: Vec<usize>, values: &[u8]) -> Self {
        Self {
            entry: ArrayEntry {
                name: name.to_string(),
                dtype: DType::U8,
                shape,
            },
            bytes: values.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let data: Vec<f64> = match self.entry.dtype {
            DType::F32 => self
                .bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => self
                .bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "array `{}` has dtype {other:?}, not a float",
                    self.entry.name
                )))
            }
        };
        Ok(Tensor::new(self.entry.shape.clone(), data)?)
    }

    pub fn to_i8(&self) -> Vec<i8> {
        self.bytes.iter().map(|&b| b as i8).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `bytes` to a sibling temp file, syncs it, and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Blob path for a manifest path: `foo.json` → `foo.bin`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes the blob, then the manifest. Returns the manifest.
pub fn write_arrays(path: &Path, arrays: &[RawArray], meta: serde_json::Value) -> Result<Manifest> {
    let blob: Vec<u8> = arrays.iter().flat_map(|a| a.bytes.iter().copied()).collect();
    let blob_file = blob_path(path);
    let manifest = Manifest {
        format: FORMAT.to_string(),
        endianness: "little".to_string(),
        blob: blob_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_bytes: blob.len() as u64,
        sha256: sha256_hex(&blob),
        arrays: arrays.iter().map(|a| a.entry.clone()).collect(),
        meta,
    };
    atomic_write(&blob_file, &blob)?;
    write_json(path, &manifest)?;
    Ok(manifest)
}

/// Reads and verifies an artifact. Nothing is decoded unless the blob
/// hash matches and the shapes account for every byte.
pub fn read_arrays(path: &Path) -> Result<(Manifest, Vec<RawArray>)> {
    let manifest: Manifest = read_json(path)?;
    if manifest.format != FORMAT || manifest.endianness != "little" {
        return Err(Error::CorruptArtifact(format!(
            "{}: unsupported format {} ({})",
            path.display(),
            manifest.format,
            manifest.endianness
        )));
    }
    let blob_file = path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if sha256_hex(&blob) != manifest.sha256 {
        return Err(Error::CorruptArtifact(format!(
            "{}: blob hash mismatch",
            blob_file.display()
        )));
    }
    let expected: usize = manifest.arrays.iter().map(ArrayEntry::byte_len).sum();
    if expected != blob.len() {
        return Err(Error::CorruptArtifact(format!(
            "{}: shapes describe {expected} bytes but blob has {}",
            path.display(),
            blob.len()
        )));
    }
    let mut offset = 0;
    let arrays = manifest
        .arrays
        .iter()
        .map(|entry| {
            let len = entry.byte_len();
            let bytes = blob[offset..offset + len].to_vec();
            offset += len;
            RawArray {
                entry: entry.clone(),
                bytes,
            }
        })
        .collect();
    Ok((manifest, arrays))
}

/// Convenience for float-only artifacts.
pub fn write_tensors(
    path: &Path,
    tensors: &[(&str, &Tensor)],
    dtype: DType,
    meta: serde_json::Value,
) -> Result<Manifest> {
    let arrays = tensors
        .iter()
        .map(|(name, t)| RawArray::from_tensor(name, t, dtype))
        .collect::<Result<Vec<_>>>()?;
    write_arrays(path, &arrays, meta)
}

pub fn read_tensors(path: &Path) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let (manifest, arrays) = read_arrays(path)?;
    let tensors = arrays
        .iter()
        .map(|a| Ok((a.entry.name.clone(), a.to_tensor()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f64_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        let t = Tensor::matrix(2, 2, vec![0.1, -1e-300, 3.0, f64::MAX]).unwrap();
        write_tensors(&path, &[("x", &t)], DType::F64, serde_json::json!({"seed": 1})).unwrap();
        let (manifest, back) = read_tensors(&path).unwrap();
        assert_eq!(back[0].1, t);
        assert_eq!(manifest.meta["seed"], 1);
        assert_eq!(manifest.blob_bytes, 32);
    }

    #[test]
    fn truncated_blob_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        let t = Tensor::filled(3, 3, 0.5);
        write_tensors(&path, &[("x", &t)], DType::F32, serde_json::Value::Null).unwrap();
        let blob = blob_path(&path);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_tensors(&path), Err(Error::CorruptArtifact(_))));
    }

    #[test]
    fn manifest_shape_disagreement_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        let t = Tensor::filled(2, 3, 0.5);
        let mut manifest = write_tensors(&path, &[("x", &t)], DType::F32, serde_json::Value::Null).unwrap();
        manifest.arrays[0].shape = vec![3, 3];
        write_json(&path, &manifest).unwrap();
        assert!(matches!(read_tensors(&path), Err(Error::CorruptArtifact(_))));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        atomic_write(&path, b"hello").unwrap();
        let names: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from("out.txt")]);
    }
}
