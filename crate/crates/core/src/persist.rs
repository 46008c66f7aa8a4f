//! On-disk formats: atomic file writes and the flat binary parameter container.
//!
//! Every trained model is stored in the same container: a 16-byte header
//! (4-byte magic, u32 version, u32 dim count, u32 float count, little-endian),
//! a `u32` dimension vector describing the architecture, then the row-major
//! `f64` parameter data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// Writes `bytes` to `path` via a temp file in the same directory plus rename,
/// so concurrent readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One parameter blob: architecture dims plus flat row-major floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlob {
    pub magic: [u8; 4],
    pub dims: Vec<u32>,
    pub floats: Vec<f64>,
}

impl ModelBlob {
    pub fn new(magic: &[u8; 4], dims: Vec<u32>, floats: Vec<f64>) -> ModelBlob {
        ModelBlob {
            magic: *magic,
            dims,
            floats,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.dims.len() * 4 + self.floats.len() * 8);
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.floats.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for f in &self.floats {
            out.extend_from_slice(&f.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(expected_magic: &[u8; 4], bytes: &[u8]) -> Result<ModelBlob, PersistError> {
        if bytes.len() < 16 {
            return Err(PersistError::Corrupt("file shorter than header".into()));
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[0..4]);
        if &magic != expected_magic {
            return Err(PersistError::BadMagic {
                expected: *expected_magic,
                found: magic,
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(PersistError::BadVersion(version));
        }
        let n_dims = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_floats = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected_len = 16 + n_dims * 4 + n_floats * 8;
        if bytes.len() != expected_len {
            return Err(PersistError::Corrupt(format!(
                "expected {expected_len} bytes, found {}",
                bytes.len()
            )));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for i in 0..n_dims {
            let off = 16 + i * 4;
            dims.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        }
        let mut floats = Vec::with_capacity(n_floats);
        let base = 16 + n_dims * 4;
        for i in 0..n_floats {
            let off = base + i * 8;
            floats.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        }
        Ok(ModelBlob {
            magic,
            dims,
            floats,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), PersistError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn read(expected_magic: &[u8; 4], path: &Path) -> Result<ModelBlob, PersistError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        ModelBlob::from_bytes(expected_magic, &bytes)
    }

    /// Dim at `idx`, as usize.
    pub fn dim(&self, idx: usize) -> Result<usize, PersistError> {
        self.dims
            .get(idx)
            .map(|d| *d as usize)
            .ok_or_else(|| PersistError::Corrupt(format!("missing dim {idx}")))
    }
}
