//! Portable binary model checkpoints.
//!
//! Layout (little-endian): magic `ETID`, u32 format version, u32 layer-size
//! count, the layer sizes as u32s, then per layer the weight matrix followed
//! by the bias vector as contiguous f64 arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{EtidError, Result};
use crate::matrix::Matrix;
use crate::nn::MlpModel;

const MAGIC: &[u8; 4] = b"ETID";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let sizes = model.layer_sizes();
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in sizes {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for (weights, biases) in model.weights().iter().zip(model.biases()) {
        for v in weights.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in biases {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(EtidError::Format("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(EtidError::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n_sizes = read_u32(&mut r)? as usize;
    if n_sizes < 2 || n_sizes > 1024 {
        return Err(EtidError::Format(format!("implausible layer count {n_sizes}")));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(read_u32(&mut r)? as usize);
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut data = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            data.push(read_f64(&mut r)?);
        }
        weights.push(Matrix::from_vec(fan_in, fan_out, data)?);
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(read_f64(&mut r)?);
        }
        biases.push(b);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(EtidError::Format("trailing bytes after checkpoint".into()));
    }
    MlpModel::from_parts(sizes, weights, biases)
        .map_err(|e| EtidError::Format(format!("inconsistent checkpoint: {e}")))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| EtidError::Format("truncated checkpoint".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
