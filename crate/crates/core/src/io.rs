//! On-disk array format: raw little-endian `float32` plus a JSON sidecar that
//! records shape, axis names and provenance.
//!
//! `shape` lists axes outermost first; the last axis varies fastest in the
//! binary file. The binary lives next to the sidecar under `data_file`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    /// What the array holds, e.g. `rf_image`, `channel_data`.
    pub kind: String,
    pub dtype: String,
    pub byte_order: String,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    /// Binary file name, relative to the sidecar's directory.
    pub data_file: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Sidecar {
    pub fn new(
        kind: &str,
        shape: Vec<usize>,
        axes: &[&str],
        data_file: String,
        meta: serde_json::Value,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_owned(),
            dtype: "float32".to_owned(),
            byte_order: "little".to_owned(),
            shape,
            axes: axes.iter().map(|s| (*s).to_owned()).collect(),
            data_file,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Binary path paired with a sidecar path: `x.json` -> `x.f32`.
pub fn data_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("f32")
}

pub fn encode_f32<T: Real>(data: &[T]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(4 * data.len());
    for v in data {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_f32<T: Real>(bytes: &[u8]) -> Option<Vec<T>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect(),
    )
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        msg: e.to_string(),
    })
}

/// Writes the sidecar at `json_path` and the samples next to it.
pub fn write_array<T: Real>(json_path: &Path, mut sidecar: Sidecar, data: &[T]) -> Result<()> {
    if sidecar.len() != data.len() {
        return Err(Error::invalid(format!(
            "shape {:?} holds {} values, got {}",
            sidecar.shape,
            sidecar.len(),
            data.len()
        )));
    }
    let bin = data_path(json_path);
    sidecar.data_file = bin
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid("sidecar path has no file name"))?
        .to_owned();
    write_atomic(&bin, &encode_f32(data))?;
    write_json(json_path, &sidecar)
}

/// Reads a sidecar and its samples, checking that the sizes agree.
pub fn read_array<T: Real>(json_path: &Path) -> Result<(Sidecar, Vec<T>)> {
    let sidecar: Sidecar = read_json(json_path)?;
    let format_err = |msg: String| Error::Format {
        path: json_path.to_owned(),
        msg,
    };
    if sidecar.dtype != "float32" || sidecar.byte_order != "little" {
        return Err(format_err(format!(
            "unsupported dtype {} / byte order {}",
            sidecar.dtype, sidecar.byte_order
        )));
    }
    if sidecar.format_version > FORMAT_VERSION {
        return Err(format_err(format!(
            "format version {} is newer than {FORMAT_VERSION}",
            sidecar.format_version
        )));
    }
    let bin = json_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&sidecar.data_file);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let data = decode_f32(&bytes)
        .ok_or_else(|| format_err("binary length is not a multiple of 4".into()))?;
    if data.len() != sidecar.len() {
        return Err(format_err(format!(
            "binary holds {} values, shape {:?} needs {}",
            data.len(),
            sidecar.shape,
            sidecar.len()
        )));
    }
    Ok((sidecar, data))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let data: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let sc = Sidecar::new(
            "test",
            vec![2, 3],
            &["col", "row"],
            String::new(),
            serde_json::json!({"k": 1}),
        );
        write_array(&path, sc, &data).unwrap();
        let (back, values) = read_array::<f64>(&path).unwrap();
        assert_eq!(values, data);
        assert_eq!(back.data_file, "a.f32");
        assert_eq!(back.meta["k"], 1);
        assert_eq!(fs::read(dir.path().join("a.f32")).unwrap().len(), 24);
    }

    #[test]
    fn little_endian_bytes() {
        assert_eq!(encode_f32(&[1.0f64]), vec![0x00, 0x00, 0x80, 0x3f]);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        let sc = Sidecar::new(
            "test",
            vec![4],
            &["t"],
            String::new(),
            serde_json::Value::Null,
        );
        assert!(write_array(&path, sc.clone(), &[1.0f32; 3]).is_err());
        write_array(&path, sc, &[1.0f32; 4]).unwrap();
        fs::write(dir.path().join("b.f32"), [0u8; 12]).unwrap();
        assert!(matches!(
            read_array::<f32>(&path),
            Err(Error::Format { .. })
        ));
    }
}
