use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dit, DitConfig, ModelError};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TRCE";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hard cap on header sections so a corrupt length cannot trigger a huge
/// allocation.
const MAX_SECTION: u32 = 1 << 24;

/// A trained model plus its provenance.
///
/// Binary layout (all integers little-endian `u32`):
/// magic `TRCE`, version, JSON header length, UTF-8 JSON header, parameter
/// count, then per parameter name length, name, rank, extents; followed by
/// every parameter's data as contiguous little-endian `f32`, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Dit<f32>,
    pub step: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: DitConfig,
    step: u64,
    seed: u64,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Format("unexpected end of file".into())
    } else {
        ModelError::Io(e)
    }
}

fn section_len(r: &mut impl Read, what: &str) -> Result<usize, ModelError> {
    let n = get_u32(r)?;
    if n > MAX_SECTION {
        return Err(ModelError::Format(format!("{what} length {n} exceeds limit")));
    }
    Ok(n as usize)
}

impl ModelCheckpoint {
    pub fn new(model: Dit<f32>, step: u64, seed: u64) -> Self {
        Self { model, step, seed }
    }

    pub fn config(&self) -> &DitConfig {
        self.model.config()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ModelError> {
        let header = serde_json::to_vec(&Header {
            model: self.model.config().clone(),
            step: self.step,
            seed: self.seed,
        })
        .map_err(|e| ModelError::Format(e.to_string()))?;
        w.write_all(&CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_u32(w, header.len() as u32)?;
        w.write_all(&header)?;
        put_u32(w, self.model.names().len() as u32)?;
        for (name, p) in self.model.names().iter().zip(self.model.params()) {
            put_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            put_u32(w, p.shape().len() as u32)?;
            for &e in p.shape() {
                put_u32(w, e as u32)?;
            }
        }
        for p in self.model.params() {
            let mut buf = Vec::with_capacity(p.numel() * 4);
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Format(format!("bad magic {magic:?}")));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let len = section_len(r, "header")?;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(truncated)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| ModelError::Format(format!("header: {e}")))?;

        let count = section_len(r, "parameter count")?;
        let mut manifest = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = section_len(r, "name")?;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| ModelError::Format("parameter name is not UTF-8".into()))?;
            let rank = section_len(r, "rank")?;
            if rank > 8 {
                return Err(ModelError::Format(format!("rank {rank} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(section_len(r, "extent")?);
            }
            manifest.push((name, shape));
        }
        let mut names = Vec::with_capacity(manifest.len());
        let mut params = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(Tensor::new(shape, data)?);
            names.push(name);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(ModelError::Format("trailing bytes after parameter data".into()));
        }
        let model = Dit::from_parts(header.model, names, params)?;
        Ok(Self {
            model,
            step: header.step,
            seed: header.seed,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, ModelError> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}
