//! Checkpoint container: magic header, format version, then named tensors as
//! (name, shape, little-endian f64 payload) records.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HGPUCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing tensor {0}")]
    Missing(String),
    #[error("tensor {name}: shape {file:?} in file, {model:?} in model")]
    ShapeMismatch {
        name: String,
        file: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn save(path: &Path, named: &[(String, Tensor)]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(named.len() as u32).to_le_bytes())?;
    for (name, tensor) in named {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Read every named tensor in the file.
pub fn read_all(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>, CheckpointError> {
    let mut r = io::BufReader::new(fs::File::open(path)?);
    let magic = read_exact::<8>(&mut r)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("non-utf8 tensor name".into()))?;
        let ndim = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_exact::<8>(&mut r)?));
        }
        out.push((name, shape, data));
    }
    Ok(out)
}

/// Load values into an existing set of named tensors (e.g. a freshly built
/// model). Every model tensor must be present in the file with a matching
/// shape; extra file entries are rejected as a name mismatch.
pub fn load_into(path: &Path, named: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let entries = read_all(path)?;
    let mut by_name: std::collections::HashMap<&str, &(String, Vec<usize>, Vec<f64>)> =
        entries.iter().map(|e| (e.0.as_str(), e)).collect();
    for (name, tensor) in named {
        let entry = by_name
            .remove(name.as_str())
            .ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        if entry.1 != tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                file: entry.1.clone(),
                model: tensor.shape().to_vec(),
            });
        }
        tensor.set_data(&entry.2);
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(CheckpointError::Malformed(format!(
            "unexpected tensor {extra} in checkpoint"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_restores_values_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::new(vec![1.5, -2.25, 1e-300, 0.0], &[2, 2]).unwrap();
        let b = Tensor::new(vec![3.0; 3], &[3]).unwrap();
        save(
            &path,
            &[("a".to_string(), a.clone()), ("b".to_string(), b.clone())],
        )
        .unwrap();

        let a2 = Tensor::zeros(&[2, 2]);
        let b2 = Tensor::zeros(&[3]);
        load_into(
            &path,
            &[("a".to_string(), a2.clone()), ("b".to_string(), b2.clone())],
        )
        .unwrap();
        assert_eq!(a.to_vec(), a2.to_vec());
        assert_eq!(b.to_vec(), b2.to_vec());
    }

    #[test]
    fn missing_and_mismatched_tensors_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let a = Tensor::zeros(&[2]);
        save(&path, &[("a".to_string(), a.clone())]).unwrap();
        let wrong_shape = Tensor::zeros(&[3]);
        assert!(matches!(
            load_into(&path, &[("a".to_string(), wrong_shape)]),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
        let missing = Tensor::zeros(&[2]);
        assert!(matches!(
            load_into(&path, &[("b".to_string(), missing)]),
            Err(CheckpointError::Missing(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT........").unwrap();
        assert!(matches!(read_all(&path), Err(CheckpointError::BadMagic)));
    }
}
