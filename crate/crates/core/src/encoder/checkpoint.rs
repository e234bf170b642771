//! Binary checkpoint: `MVDR1` magic, config header, little-endian `f32`
//! tensors (query tower, then document tower when untied), CRC-64 footer.

use std::io::{Read, Write};
use std::path::Path;

use super::{EncoderConfig, EncoderParams, Tower};
use crate::bytes::{ByteReader, CRC64};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"MVDR1";

pub fn write_checkpoint<W: Write>(mut w: W, params: &EncoderParams<f32>) -> Result<()> {
    let cfg = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [cfg.embed_dim, cfg.hash_buckets, cfg.ngram_orders.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &o in &cfg.ngram_orders {
        buf.extend_from_slice(&(o as u32).to_le_bytes());
    }
    buf.push(cfg.tie_params as u8);
    for v in [cfg.max_query_tokens, cfg.max_doc_tokens] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for tower in params.towers() {
        for tensor in tower.tensors() {
            for v in tensor {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    w.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EncoderParams<f32>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<checkpoint>", e))?;
    let body = crate::bytes::verify_footer(&buf)?;
    let mut rd = ByteReader::new(body);
    if rd.take(MAGIC.len())? != MAGIC {
        return Err(Error::Corrupt("not an MVDR1 checkpoint".into()));
    }
    let embed_dim = rd.u32()? as usize;
    let hash_buckets = rd.u32()? as usize;
    let n_orders = rd.u32()? as usize;
    let ngram_orders = (0..n_orders)
        .map(|_| rd.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let tie_params = match rd.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Corrupt(format!("bad tie flag {v}"))),
    };
    let config = EncoderConfig {
        embed_dim,
        hash_buckets,
        ngram_orders,
        tie_params,
        max_query_tokens: rd.u32()? as usize,
        max_doc_tokens: rd.u32()? as usize,
    };
    config
        .validate()
        .map_err(|e| Error::Corrupt(format!("checkpoint header: {e}")))?;
    let mut read_tower = || -> Result<Tower<f32>> {
        let mut t = Tower::zeros(hash_buckets, embed_dim);
        for tensor in t.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = rd.f32()?;
            }
        }
        Ok(t)
    };
    let query = read_tower()?;
    let document = if tie_params {
        None
    } else {
        Some(read_tower()?)
    };
    if !rd.is_empty() {
        return Err(Error::Corrupt("trailing bytes after tensors".into()));
    }
    Ok(EncoderParams {
        config,
        query,
        document,
    })
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams<f32>) -> Result<()> {
    let f = crate::bytes::create_file(path)?;
    write_checkpoint(std::io::BufWriter::new(f), params)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams<f32>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f))
}
