//! Versioned binary checkpoint: header (magic, format version, config echo,
//! creation seed) followed by named tensors, each serialized as name length +
//! name bytes, rank, extents, and 32-bit little-endian values.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numkernel::{Tensor, TensorMap};

use super::{ConfigError, ModelConfig, ParamSet};

const MAGIC: &[u8; 4] = b"RGC1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on checkpoint {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint config echo invalid: {0}")]
    Config(#[from] ConfigError),
    #[error("checkpoint is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParamSet,
    config: &ModelConfig,
    seed: u64,
) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<(), CheckpointError> {
        w.write_all(bytes).map_err(io_err(path))
    };

    write(&mut w, MAGIC)?;
    write(&mut w, &VERSION.to_le_bytes())?;
    write(&mut w, &seed.to_le_bytes())?;
    let echo = config.to_key_value();
    write(&mut w, &(echo.len() as u32).to_le_bytes())?;
    write(&mut w, echo.as_bytes())?;
    write(&mut w, &(params.tensors().len() as u32).to_le_bytes())?;
    for (name, tensor) in params.tensors().iter() {
        write(&mut w, &(name.len() as u32).to_le_bytes())?;
        write(&mut w, name.as_bytes())?;
        write(&mut w, &(tensor.shape().len() as u32).to_le_bytes())?;
        for &extent in tensor.shape() {
            write(&mut w, &(extent as u64).to_le_bytes())?;
        }
        for &v in tensor.data() {
            write(&mut w, &(v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read a checkpoint and validate every tensor shape against the echoed
/// configuration.
pub fn load_checkpoint(path: &Path) -> Result<(ParamSet, CheckpointHeader), CheckpointError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    fn read_exact(
        r: &mut impl Read,
        buf: &mut [u8],
        path: &Path,
    ) -> Result<(), CheckpointError> {
        r.read_exact(buf).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }
    fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        read_exact(r, &mut b, path)?;
        Ok(u32::from_le_bytes(b))
    }
    fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64, CheckpointError> {
        let mut b = [0u8; 8];
        read_exact(r, &mut b, path)?;
        Ok(u64::from_le_bytes(b))
    }

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let seed = read_u64(&mut r, path)?;
    let echo_len = read_u32(&mut r, path)? as usize;
    let mut echo = vec![0u8; echo_len];
    read_exact(&mut r, &mut echo, path)?;
    let echo = String::from_utf8(echo)
        .map_err(|_| CheckpointError::Corrupt("config echo is not utf-8".into()))?;
    let config = ModelConfig::from_key_values(&echo)?;

    let count = read_u32(&mut r, path)? as usize;
    let mut tensors = TensorMap::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, path)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
        let rank = read_u32(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            read_exact(&mut r, &mut b, path)?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        tensors.insert(name, Tensor::from_vec(shape, data).with_grad());
    }

    let params = ParamSet::from_tensors(tensors, &config)?;
    Ok((
        params,
        CheckpointHeader {
            version,
            seed,
            config,
        },
    ))
}
