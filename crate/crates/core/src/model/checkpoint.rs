//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `MISMATCH`, `u32` version, `u32` length and
//! JSON header (config, dimensions, history), normalizer (`u32` dim, means,
//! stds), then per member a `u32` layer count and per layer `u32` rows,
//! `u32` cols, row-major weights and the bias vector as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Dense, DynamicsModel, Mlp, ModelConfig, TrainingHistory};
use crate::data::Normalizer;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MISMATCH";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    state_dim: usize,
    action_dim: usize,
    train_calls: usize,
    history: TrainingHistory,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<'a, W: Write>(w: &mut W, values: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn truncated(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated checkpoint: {e}"))
}

pub fn write_checkpoint<W: Write>(model: &DynamicsModel, mut w: W) -> Result<()> {
    let header = Header {
        config: model.config.clone(),
        state_dim: model.state_dim,
        action_dim: model.action_dim,
        train_calls: model.train_calls,
        history: model.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    put_u32(&mut w, json.len()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    put_u32(&mut w, model.normalizer.dim()).map_err(io)?;
    put_f64s(&mut w, &model.normalizer.mean).map_err(io)?;
    put_f64s(&mut w, &model.normalizer.std).map_err(io)?;
    for net in model.networks() {
        put_u32(&mut w, net.layers.len()).map_err(io)?;
        for layer in &net.layers {
            let (rows, cols) = layer.weight.dim();
            put_u32(&mut w, rows).map_err(io)?;
            put_u32(&mut w, cols).map_err(io)?;
            put_f64s(&mut w, layer.weight.iter()).map_err(io)?;
            put_f64s(&mut w, layer.bias.iter()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<DynamicsModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = get_u32(&mut r)?;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(truncated)?;
    let header: Header = serde_json::from_slice(&json)?;
    let dim = get_u32(&mut r)?;
    let mean = get_f64s(&mut r, dim)?;
    let std = get_f64s(&mut r, dim)?;
    let normalizer = Normalizer { mean, std };
    let mut nets = Vec::with_capacity(header.config.ensemble_size);
    for _ in 0..header.config.ensemble_size {
        let n_layers = get_u32(&mut r)?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = get_u32(&mut r)?;
            let cols = get_u32(&mut r)?;
            let weight = Array2::from_shape_vec((rows, cols), get_f64s(&mut r, rows * cols)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let bias = Array1::from(get_f64s(&mut r, cols)?);
            layers.push(Dense { weight, bias });
        }
        nets.push(Mlp {
            layers,
            activation: header.config.activation,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(truncated)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    DynamicsModel::from_parts(
        header.config,
        header.state_dim,
        header.action_dim,
        nets,
        normalizer,
        header.history,
        header.train_calls,
    )
}

pub fn save_checkpoint(model: &DynamicsModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<DynamicsModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
