//! Model checkpoint container.
//!
//! Little-endian layout:
//! - bytes 0-3: magic `MVCK`
//! - bytes 4-7: format version u32 = 1
//! - bytes 8-11: config JSON length u32, followed by that many JSON bytes
//! - u32 model count, then per model: u32 layer count, then per layer:
//!   in_dim u32, out_dim u32, activation code u8 (0 identity, 1 relu,
//!   2 sigmoid), dropout f32, weights f32 row-major (out_dim x in_dim),
//!   bias f32 (out_dim).
//!
//! Parameters are stored as 32-bit floats; in-memory arithmetic stays 64-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::{Activation, DenseLayer, Mlp};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {found:02x?}, expected 'MVCK'")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found}, supported {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint truncated while reading {reading}")]
    Truncated { reading: &'static str },
    #[error("config blob is not valid UTF-8")]
    BadConfig,
    #[error("unknown activation code {0}")]
    UnknownActivation(u8),
    #[error("layer dimension overflow: {in_dim} x {out_dim}")]
    DimOverflow { in_dim: u32, out_dim: u32 },
}

fn read_exact_or(
    r: &mut impl Read,
    buf: &mut [u8],
    reading: &'static str,
) -> Result<(), CheckpointError> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Truncated { reading })
}

fn read_u32(r: &mut impl Read, reading: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, reading)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes `models` plus an opaque config JSON blob. The write goes to a
/// temporary sibling file first and is renamed into place on success.
pub fn write_checkpoint(
    path: &Path,
    config_json: &str,
    models: &[&Mlp],
) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = config_json.as_bytes();
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(cfg)?;
        w.write_all(&(models.len() as u32).to_le_bytes())?;
        for mlp in models {
            w.write_all(&(mlp.layers.len() as u32).to_le_bytes())?;
            for layer in &mlp.layers {
                w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
                w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
                w.write_all(&[layer.activation.code()])?;
                w.write_all(&(layer.dropout_rate as f32).to_le_bytes())?;
                for &v in layer.weights.iter() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
                for &v in layer.bias.iter() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint back as (config JSON, models).
pub fn read_checkpoint(path: &Path) -> Result<(String, Vec<Mlp>), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }

    let cfg_len = read_u32(&mut r, "config length")? as usize;
    let mut cfg = vec![0u8; cfg_len];
    read_exact_or(&mut r, &mut cfg, "config")?;
    let config_json = String::from_utf8(cfg).map_err(|_| CheckpointError::BadConfig)?;

    let n_models = read_u32(&mut r, "model count")?;
    let mut models = Vec::with_capacity(n_models as usize);
    for _ in 0..n_models {
        let n_layers = read_u32(&mut r, "layer count")?;
        let mut layers = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let in_dim = read_u32(&mut r, "in_dim")?;
            let out_dim = read_u32(&mut r, "out_dim")?;
            let n = (in_dim as u64)
                .checked_mul(out_dim as u64)
                .filter(|&n| n <= (u32::MAX as u64) * 64)
                .ok_or(CheckpointError::DimOverflow { in_dim, out_dim })?;
            let mut act = [0u8; 1];
            read_exact_or(&mut r, &mut act, "activation")?;
            let activation = Activation::from_code(act[0])
                .ok_or(CheckpointError::UnknownActivation(act[0]))?;
            let mut drop = [0u8; 4];
            read_exact_or(&mut r, &mut drop, "dropout")?;
            let dropout_rate = f32::from_le_bytes(drop) as f64;

            let mut raw = vec![0u8; n as usize * 4];
            read_exact_or(&mut r, &mut raw, "weights")?;
            let weights: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let weights =
                Array2::from_shape_vec((out_dim as usize, in_dim as usize), weights)
                    .expect("shape matches byte count");

            let mut raw = vec![0u8; out_dim as usize * 4];
            read_exact_or(&mut r, &mut raw, "bias")?;
            let bias: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();

            layers.push(DenseLayer {
                weights,
                bias: Array1::from_vec(bias),
                activation,
                dropout_rate,
            });
        }
        models.push(Mlp { layers });
    }
    Ok((config_json, models))
}
