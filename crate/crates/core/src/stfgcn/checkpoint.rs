//! Checkpoint layout, little-endian throughout:
//!
//! ```text
//! "STFW" | version u32 | config_len u32 | config (UTF-8 key=value lines)
//! n_params u32 | per tensor: rank u32, dims u32 x rank, data f32 x prod(dims)
//! n_buffers u32 | per buffer: same tensor layout (rank 1)
//! ```
//! Tensors appear in parameter declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Model, ModelConfig, ModelError, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STFW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_tensor(out: &mut Vec<u8>, shape: &[usize], data: &[f64]) {
    out.write_u32::<LittleEndian>(shape.len() as u32).unwrap();
    for &d in shape {
        out.write_u32::<LittleEndian>(d as u32).unwrap();
    }
    for &v in data {
        out.write_f32::<LittleEndian>(v as f32).unwrap();
    }
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    let config: String = model.config().to_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.write_u32::<LittleEndian>(config.len() as u32).unwrap();
    out.extend_from_slice(config.as_bytes());
    let store = model.store();
    out.write_u32::<LittleEndian>(store.len() as u32).unwrap();
    for t in store.values() {
        write_tensor(&mut out, t.shape(), t.data());
    }
    out.write_u32::<LittleEndian>(store.buffers().len() as u32).unwrap();
    for b in store.buffers() {
        write_tensor(&mut out, &[b.len()], b);
    }
    out
}

pub fn write_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

fn read_tensor(r: &mut Cursor<&[u8]>) -> std::io::Result<Tensor> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank > 8 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("tensor rank {rank}")));
    }
    let shape =
        (0..rank).map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let remaining = r.get_ref().len() - r.position() as usize;
    if len * 4 > remaining {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    let data = (0..len).map(|_| r.read_f32::<LittleEndian>().map(f64::from)).collect::<std::io::Result<Vec<_>>>()?;
    Ok(Tensor::new(shape, data).expect("length matches shape"))
}

/// Rebuilds a model from checkpoint bytes; `path` is used in diagnostics.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Model> {
    let bad = |msg: String| ModelError::Checkpoint { path: path.to_path_buf(), msg };
    let io = |e: std::io::Error| ModelError::Checkpoint {
        path: path.to_path_buf(),
        msg: format!("truncated or corrupt: {e}"),
    };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut r = Cursor::new(bytes);
    r.set_position(4);
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let clen = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut config = vec![0; clen];
    r.read_exact(&mut config).map_err(io)?;
    let config = String::from_utf8(config).map_err(|_| bad("config block is not UTF-8".into()))?;
    let mut pairs = BTreeMap::new();
    for line in config.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed config line `{line}`")))?;
        pairs.insert(k.to_string(), v.to_string());
    }
    let mut model = Model::new(ModelConfig::from_pairs(&pairs)?, 0)?;
    let n_params = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if n_params != model.store().len() {
        return Err(bad(format!("{n_params} parameter tensors, model declares {}", model.store().len())));
    }
    for k in 0..n_params {
        let t = read_tensor(&mut r).map_err(io)?;
        let slot = &mut model.store_mut().values_mut()[k];
        if t.shape() != slot.shape() {
            return Err(bad(format!("parameter {k} has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t;
    }
    let n_buffers = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if n_buffers != model.store().buffers().len() {
        return Err(bad(format!("{n_buffers} buffers, model declares {}", model.store().buffers().len())));
    }
    for k in 0..n_buffers {
        let t = read_tensor(&mut r).map_err(io)?;
        let slot = &mut model.store_mut().buffers_mut()[k];
        if t.len() != slot.len() || t.rank() != 1 {
            return Err(bad(format!("buffer {k} has shape {:?}, expected [{}]", t.shape(), slot.len())));
        }
        *slot = t.into_data();
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.position() as usize)));
    }
    Ok(model)
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stfgcn::PoolGatVariant;

    #[test]
    fn round_trip_preserves_f32_values() {
        let cfg = ModelConfig { variant: PoolGatVariant::NoGat, ..ModelConfig::miniature() };
        let mut model = Model::new(cfg, 9).unwrap();
        model.store_mut().buffers_mut()[0][1] = 0.625;
        let bytes = encode_checkpoint(&model);
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.config(), model.config());
        for (a, b) in back.store().values().iter().zip(model.store().values()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| *x == (*y as f32) as f64));
        }
        assert_eq!(back.store().buffers()[0][1], 0.625);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let model = Model::new(ModelConfig::miniature(), 1).unwrap();
        let bytes = encode_checkpoint(&model);
        let p = Path::new("mem");
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong, p).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], p).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_checkpoint(&longer, p).is_err());
    }
}
