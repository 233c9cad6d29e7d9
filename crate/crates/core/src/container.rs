//! The on-disk container shared by datasets, decoder states, reconstructions
//! and reports: a `manifest.json` plus flat little-endian arrays, one file
//! per declared path. Floats are 32-bit row-major; pixel data is 8-bit per
//! channel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn bytes_per_elem(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// One declared array: relative file name, element type, row-major shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

impl ArrayMeta {
    pub fn elem_count(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| CoreError::invalid(format!("serialize {}: {e}", path.display())))?;
    body.push('\n');
    fs::write(path, body).map_err(|e| CoreError::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| CoreError::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write `data` as little-endian f32, returning the metadata entry.
pub fn write_f32(dir: &Path, name: &str, shape: &[usize], data: &[f64]) -> Result<ArrayMeta> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(CoreError::shape(
            format!("write_f32 {name}"),
            format!("{expected} elems for shape {shape:?}"),
            data.len().to_string(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let file = format!("{name}.f32");
    let path = dir.join(&file);
    let mut out = fs::File::create(&path).map_err(|e| CoreError::io(&path, e))?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| CoreError::io(&path, e))?;
    Ok(ArrayMeta { file, dtype: Dtype::F32, shape: shape.to_vec() })
}

pub fn write_u8(dir: &Path, name: &str, shape: &[usize], data: &[u8]) -> Result<ArrayMeta> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(CoreError::shape(
            format!("write_u8 {name}"),
            format!("{expected} elems for shape {shape:?}"),
            data.len().to_string(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let file = format!("{name}.u8");
    let path = dir.join(&file);
    fs::write(&path, data).map_err(|e| CoreError::io(&path, e))?;
    Ok(ArrayMeta { file, dtype: Dtype::U8, shape: shape.to_vec() })
}

fn open_checked(dir: &Path, meta: &ArrayMeta) -> Result<Vec<u8>> {
    let path = dir.join(&meta.file);
    let mut raw = Vec::new();
    fs::File::open(&path)
        .map_err(|e| CoreError::io(&path, e))?
        .read_to_end(&mut raw)
        .map_err(|e| CoreError::io(&path, e))?;
    let expected = meta.elem_count() * meta.dtype.bytes_per_elem();
    if raw.len() != expected {
        return Err(CoreError::Manifest {
            path,
            detail: format!(
                "declared shape {:?} needs {} bytes, file has {}",
                meta.shape,
                expected,
                raw.len()
            ),
        });
    }
    Ok(raw)
}

pub fn read_f32(dir: &Path, meta: &ArrayMeta) -> Result<Vec<f64>> {
    if meta.dtype != Dtype::F32 {
        return Err(CoreError::invalid(format!("{} is not f32", meta.file)));
    }
    let raw = open_checked(dir, meta)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_u8(dir: &Path, meta: &ArrayMeta) -> Result<Vec<u8>> {
    if meta.dtype != Dtype::U8 {
        return Err(CoreError::invalid(format!("{} is not u8", meta.file)));
    }
    open_checked(dir, meta)
}

/// Captions: one UTF-8 line per sample.
pub fn write_captions(dir: &Path, name: &str, captions: &[String]) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let file = format!("{name}.txt");
    let path = dir.join(&file);
    let mut body = String::new();
    for c in captions {
        debug_assert!(!c.contains('\n'), "captions must be single lines");
        body.push_str(c);
        body.push('\n');
    }
    fs::write(&path, body).map_err(|e| CoreError::io(&path, e))?;
    Ok(file)
}

pub fn read_captions(dir: &Path, file: &str, expected: usize) -> Result<Vec<String>> {
    let path = dir.join(file);
    let body = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let lines: Vec<String> = body.lines().map(|s| s.to_string()).collect();
    if lines.len() != expected {
        return Err(CoreError::Manifest {
            path,
            detail: format!("expected {} caption lines, found {}", expected, lines.len()),
        });
    }
    Ok(lines)
}

/// Stable 64-bit content hash used for config snapshots and state versions.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn hash_file(path: &Path) -> Result<u64> {
    let raw = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    Ok(fnv1a(&raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("mindkit_container_test_f32");
        let _ = fs::remove_dir_all(&dir);
        let data: Vec<f64> = (0..24).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let meta = write_f32(&dir, "probe", &[2, 3, 4], &data).unwrap();
        let back = read_f32(&dir, &meta).unwrap();
        // Values must survive exactly at f32 precision.
        for (a, b) in data.iter().zip(back.iter()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let meta2 = write_f32(&dir, "probe2", &[24], &back).unwrap();
        let bytes1 = fs::read(dir.join(&meta.file)).unwrap();
        let bytes2 = fs::read(dir.join(&meta2.file)).unwrap();
        assert_eq!(bytes1, bytes2, "second write must be byte-identical");
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn byte_length_mismatch_is_detected() {
        let dir = std::env::temp_dir().join("mindkit_container_test_len");
        let _ = fs::remove_dir_all(&dir);
        let meta = write_u8(&dir, "pix", &[4], &[1, 2, 3, 4]).unwrap();
        let mut bad = meta.clone();
        bad.shape = vec![5];
        let err = read_u8(&dir, &bad).unwrap_err();
        assert!(err.to_string().contains("bytes"));
        let _ = fs::remove_dir_all(&dir);
    }
}
