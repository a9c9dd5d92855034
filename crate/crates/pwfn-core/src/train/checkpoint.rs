//! Checkpoint container: magic `PWFN`, a format version, then length-
//! prefixed named records (little-endian 32-bit floats or raw bytes).
//! Writing the same state twice produces byte-identical files.

use crate::tensor::Tensor;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const MAGIC: [u8; 4] = *b"PWFN";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("missing record '{0}'")]
    Missing(String),
    #[error("unexpected record '{0}'")]
    Unexpected(String),
    #[error("record '{name}' has wrong shape: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("duplicate record '{0}'")]
    Duplicate(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    Bytes(Vec<u8>),
}

impl Record {
    pub fn tensor(t: &Tensor<f32>) -> Self {
        Record::F32 {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }

    pub fn from_slice(shape: Vec<usize>, data: &[f32]) -> Self {
        Record::F32 {
            shape,
            data: data.to_vec(),
        }
    }

    pub fn u64_scalar(v: u64) -> Self {
        Record::Bytes(v.to_le_bytes().to_vec())
    }
}

/// Ordered list of named records; order is part of the on-disk identity.
#[derive(Debug, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Record)>,
    index: HashMap<String, usize>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, record: Record) -> Result<(), CheckpointError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CheckpointError::Duplicate(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, record));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    /// Fetch a required f32 record with an exact shape.
    pub fn take_f32(&self, name: &str, expected: &[usize]) -> Result<Vec<f32>, CheckpointError> {
        match self.get(name) {
            Some(Record::F32 { shape, data }) => {
                if shape != expected {
                    return Err(CheckpointError::ShapeMismatch {
                        name: name.to_string(),
                        expected: expected.to_vec(),
                        got: shape.clone(),
                    });
                }
                Ok(data.clone())
            }
            Some(Record::Bytes(_)) => Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: expected.to_vec(),
                got: vec![],
            }),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn take_bytes(&self, name: &str) -> Result<&[u8], CheckpointError> {
        match self.get(name) {
            Some(Record::Bytes(b)) => Ok(b),
            Some(Record::F32 { .. }) => Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![],
                got: vec![0],
            }),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn take_u64(&self, name: &str) -> Result<u64, CheckpointError> {
        let b = self.take_bytes(name)?;
        let arr: [u8; 8] = b
            .try_into()
            .map_err(|_| CheckpointError::Truncated(name.to_string()))?;
        Ok(u64::from_le_bytes(arr))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for (name, record) in &self.entries {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            match record {
                Record::F32 { shape, data } => {
                    buf.push(0u8);
                    buf.push(shape.len() as u8);
                    for &d in shape {
                        buf.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for &v in data {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Record::Bytes(b) => {
                    buf.push(1u8);
                    buf.push(1u8);
                    buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
                    buf.extend_from_slice(b);
                }
            }
        }
        let mut f = std::fs::File::create(path).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(io_err)?
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8], CheckpointError> {
            if *pos + n > bytes.len() {
                return Err(CheckpointError::Truncated(what.to_string()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4, "magic")?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut out = Self::new();
        while pos < bytes.len() {
            let name_len =
                u32::from_le_bytes(take(&mut pos, 4, "record name length")?.try_into().unwrap())
                    as usize;
            let name = String::from_utf8(take(&mut pos, name_len, "record name")?.to_vec())
                .map_err(|_| CheckpointError::Truncated("record name".into()))?;
            let dtype = take(&mut pos, 1, &name)?[0];
            let rank = take(&mut pos, 1, &name)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(take(&mut pos, 4, &name)?.try_into().unwrap()) as usize);
            }
            let numel: usize = dims.iter().product();
            match dtype {
                0 => {
                    let raw = take(&mut pos, numel * 4, &name)?;
                    let data: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    out.push(name, Record::F32 { shape: dims, data })?;
                }
                1 => {
                    let raw = take(&mut pos, numel, &name)?.to_vec();
                    out.push(name, Record::Bytes(raw))?;
                }
                other => {
                    return Err(CheckpointError::Unexpected(format!(
                        "{name}: dtype code {other}"
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.push(
            "a.weight",
            Record::F32 {
                shape: vec![2, 3],
                data: vec![1.0, -2.0, 0.5, 0.25, 3.0, -0.125],
            },
        )
        .unwrap();
        c.push("meta.step", Record::u64_scalar(1234)).unwrap();
        c.push("meta.blob", Record::Bytes(vec![7, 8, 9])).unwrap();
        c
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pwfn");
        let p2 = dir.path().join("b.pwfn");
        let c = sample();
        c.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.take_u64("meta.step").unwrap(), 1234);
        assert_eq!(
            loaded.take_f32("a.weight", &[2, 3]).unwrap(),
            vec![1.0, -2.0, 0.5, 0.25, 3.0, -0.125]
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pwfn");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [3, 7, 15, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::Truncated(_)),
                "cut {cut}: {err}"
            );
        }
    }

    #[test]
    fn wrong_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.pwfn");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::BadMagic)
        ));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 99;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
    }
}
