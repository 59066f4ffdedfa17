//! Versioned binary parameter checkpoints: shapes followed by row-major f64.
//!
//! Layout (little endian): magic `HDCK`, u32 version, u32 layer count, u8
//! batch-norm flag, then every tensor as `u32 rows, u32 cols, f64 * rows*cols`
//! in the order weight, [gamma, beta, running mean, running var] per layer,
//! head weight, head bias.

use std::io::{self, Read, Write};

use super::model::{BatchNormParams, LayerParams, Parameters};
use super::{LearningError, Tensor};

const MAGIC: &[u8; 4] = b"HDCK";
const VERSION: u32 = 1;

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> io::Result<()> {
    w.write_all(&(t.rows() as u32).to_le_bytes())?;
    w.write_all(&(t.cols() as u32).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, LearningError> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .filter(|&l| l <= 1 << 28)
        .ok_or_else(|| LearningError::Checkpoint(format!("implausible tensor shape {rows}x{cols}")))?;
    let mut data = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(Tensor::from_vec(rows, cols, data))
}

fn row_vec(v: &[f64]) -> Tensor {
    Tensor::from_vec(1, v.len(), v.to_vec())
}

pub fn write_checkpoint<W: Write>(params: &Parameters, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    let bn = params.layers.first().is_some_and(|l| l.bn.is_some());
    w.write_all(&[u8::from(bn)])?;
    for layer in &params.layers {
        write_tensor(&mut w, &layer.weight)?;
        if let Some(b) = &layer.bn {
            write_tensor(&mut w, &b.gamma)?;
            write_tensor(&mut w, &b.beta)?;
            write_tensor(&mut w, &row_vec(&b.running_mean))?;
            write_tensor(&mut w, &row_vec(&b.running_var))?;
        }
    }
    write_tensor(&mut w, &params.head_weight)?;
    write_tensor(&mut w, &params.head_bias)?;
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Parameters, LearningError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LearningError::Checkpoint("not a parameter checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(LearningError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let n_layers = read_u32(&mut r)? as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let mut layers = Vec::with_capacity(n_layers.min(64));
    for _ in 0..n_layers {
        let weight = read_tensor(&mut r)?;
        let bn = if flag[0] == 1 {
            Some(BatchNormParams {
                gamma: read_tensor(&mut r)?,
                beta: read_tensor(&mut r)?,
                running_mean: read_tensor(&mut r)?.into_data(),
                running_var: read_tensor(&mut r)?.into_data(),
            })
        } else {
            None
        };
        layers.push(LayerParams { weight, bn });
    }
    let head_weight = read_tensor(&mut r)?;
    let head_bias = read_tensor(&mut r)?;
    Ok(Parameters {
        layers,
        head_weight,
        head_bias,
    })
}
