//! Flat binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `TINYLM\0\x01` |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 | config block length `L` (`u32`) |
//! | L | config block: UTF-8 JSON `{"config": LMConfig, "vocab": Vocab}` |
//! | 4 | tensor count (`u32`) |
//!
//! then per tensor, in parameter order: name length (`u32`), UTF-8 name,
//! rows (`u32`), cols (`u32`), and `rows * cols` row-major `f32` values.
//! Parameters are trained in `f64`, so a round trip is exact only to `f32`
//! precision.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LMConfig, Params, Vocab, LM};

pub const MAGIC: [u8; 8] = *b"TINYLM\0\x01";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    config: LMConfig,
    vocab: Vocab,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_checkpoint<W: Write>(lm: &LM, mut w: W) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let block = serde_json::to_vec(&ConfigBlock { config: lm.cfg.clone(), vocab: lm.vocab })?;
    put_u32(&mut w, block.len())?;
    w.write_all(&block)?;
    put_u32(&mut w, lm.params.tensors.len())?;
    for (name, t) in lm.params.names.iter().zip(&lm.params.tensors) {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, t.nrows())?;
        put_u32(&mut w, t.ncols())?;
        for v in t.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<LM> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = get_u32(&mut r)? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut block = vec![0u8; get_u32(&mut r)?];
    r.read_exact(&mut block)?;
    let ConfigBlock { config, vocab } = serde_json::from_slice(&block)?;
    let count = get_u32(&mut r)?;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut name = vec![0u8; get_u32(&mut r)?];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let (rows, cols) = (get_u32(&mut r)?, get_u32(&mut r)?);
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        tensors.push(Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Checkpoint(e.to_string()))?);
        names.push(name);
    }
    let fresh = crate::model::build_model(&config, vocab)?;
    if fresh.params.names != names || fresh.params.tensors.iter().zip(&tensors).any(|(a, b)| a.dim() != b.dim()) {
        return Err(Error::Checkpoint("parameter layout does not match the configuration".into()));
    }
    Ok(LM { cfg: config, vocab, params: Params { names, tensors } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn round_trip_to_f32_precision() {
        let cfg = LMConfig { d_model: 8, n_heads: 2, d_ff: 16, n_layers: 1, ..Default::default() };
        let lm = build_model(&cfg, Vocab::new(3)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&lm, &mut buf).unwrap();
        assert_eq!(&buf[..8], &MAGIC);
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.cfg, lm.cfg);
        for (a, b) in back.params.tensors.iter().zip(&lm.params.tensors) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= y.abs() * 1e-7));
        }
        buf[0] = b'X';
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
