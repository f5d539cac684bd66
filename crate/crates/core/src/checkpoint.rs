//! Binary parameter snapshots.
//!
//! Layout (all integers little-endian u64 unless noted):
//!
//! ```text
//! magic           b"ETCKPT1\n"
//! config_len      u64, then that many bytes of UTF-8 config JSON (echo)
//! decoder kind    u8 (0 = distmult, 1 = complex)
//! attention mode  u8 (0 = learned, 1 = fixed-uniform)
//! use_bias        u8 (0/1)
//! n_entities, dim, n_relations, n_encoder_relations, n_edges   u64 each
//! base            n_entities * dim f64 LE
//! bias            n_entities * dim f64 LE
//! rel_scale       n_encoder_relations * dim f64 LE
//! relations       n_relations * dim f64 LE
//! attention       n_edges f64 LE
//! ```
//!
//! Writing is deterministic byte-for-byte given identical parameters, which
//! is what the reproducibility checks compare.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::attention::RawAttention;
use crate::decoder::{DecoderKind, RelationTable};
use crate::encoder::{AttentionMode, ModelParameters};
use crate::error::{Error, Result};
use crate::mat::Mat;

const MAGIC: &[u8; 8] = b"ETCKPT1\n";

pub fn save(params: &ModelParameters, config_json: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write(params, config_json, &mut w).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelParameters, String)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read(&mut BufReader::new(file))
}

pub fn write<W: Write>(
    params: &ModelParameters,
    config_json: &str,
    w: &mut W,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(config_json.len() as u64).to_le_bytes())?;
    w.write_all(config_json.as_bytes())?;
    w.write_all(&[
        match params.relations.kind() {
            DecoderKind::DistMult => 0u8,
            DecoderKind::Complex => 1,
        },
        match params.attention_mode {
            AttentionMode::Learned => 0u8,
            AttentionMode::FixedUniform => 1,
        },
        params.use_bias as u8,
    ])?;
    for v in [
        params.base.rows(),
        params.dim(),
        params.relations.rows().rows(),
        params.rel_scale.rows(),
        params.attention.len(),
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for block in [
        params.base.data(),
        params.bias.data(),
        params.rel_scale.data(),
        params.relations.rows().data(),
        params.attention.values(),
    ] {
        for v in block {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read<R: Read>(r: &mut R) -> Result<(ModelParameters, String)> {
    let bad = |msg: &str| Error::CheckpointFormat(msg.to_string());
    let io_err = |e: std::io::Error| Error::CheckpointFormat(format!("truncated: {e}"));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut u64buf).map_err(io_err)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let config_len = read_u64(r)? as usize;
    if config_len > 1 << 30 {
        return Err(bad("implausible config length"));
    }
    let mut config = vec![0u8; config_len];
    r.read_exact(&mut config).map_err(io_err)?;
    let config = String::from_utf8(config).map_err(|_| bad("config echo is not UTF-8"))?;

    let mut flags = [0u8; 3];
    r.read_exact(&mut flags).map_err(io_err)?;
    let decoder = match flags[0] {
        0 => DecoderKind::DistMult,
        1 => DecoderKind::Complex,
        _ => return Err(bad("bad decoder kind byte")),
    };
    let attention_mode = match flags[1] {
        0 => AttentionMode::Learned,
        1 => AttentionMode::FixedUniform,
        _ => return Err(bad("bad attention mode byte")),
    };
    let use_bias = match flags[2] {
        0 => false,
        1 => true,
        _ => return Err(bad("bad bias byte")),
    };

    let read_u64 = |r: &mut R| -> Result<u64> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf).map_err(io_err)?;
        Ok(u64::from_le_bytes(buf))
    };
    let n_entities = read_u64(r)? as usize;
    let dim = read_u64(r)? as usize;
    let n_relations = read_u64(r)? as usize;
    let n_encoder_relations = read_u64(r)? as usize;
    let n_edges = read_u64(r)? as usize;

    let read_block = |r: &mut R, len: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes).map_err(io_err)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let base = Mat::from_vec(n_entities, dim, read_block(r, n_entities * dim)?);
    let bias = Mat::from_vec(n_entities, dim, read_block(r, n_entities * dim)?);
    let rel_scale = Mat::from_vec(
        n_encoder_relations,
        dim,
        read_block(r, n_encoder_relations * dim)?,
    );
    let relations = RelationTable::from_mat(
        decoder,
        Mat::from_vec(n_relations, dim, read_block(r, n_relations * dim)?),
    )?;
    let attention = RawAttention::from_values(read_block(r, n_edges)?);

    let params = ModelParameters::from_blocks(
        dim,
        base,
        bias,
        rel_scale,
        relations,
        attention,
        attention_mode,
        use_bias,
    )?;
    Ok((params, config))
}

/// FNV-1a content fingerprint of the serialized parameters, as hex.
pub fn fingerprint(params: &ModelParameters) -> String {
    let mut bytes = Vec::new();
    write(params, "", &mut bytes).expect("in-memory write cannot fail");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}
