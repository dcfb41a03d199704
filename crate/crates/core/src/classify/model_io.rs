//! Versioned little-endian model files. Frozen layers are stored as their
//! seed and scale and regenerated on load.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use super::linalg::RandomLayer;
use super::scnn::{ScnnConfig, ScnnModel};
use super::slfn::{Ensemble, FeatNorm, SlfnModel};
use crate::error::ClassifyError;
use crate::features::FilterBank;

const MAGIC: &[u8; 4] = b"CCTM";
const VERSION: u32 = 1;
const KIND_SCNN: u8 = b'S';
const KIND_ENSEMBLE: u8 = b'E';
/// Upper bound on any stored dimension, to reject corrupt headers early.
const MAX_DIM: u64 = 1 << 28;

fn fmt_err(msg: impl Into<String>) -> ClassifyError {
    ClassifyError::ModelFormat(msg.into())
}

fn write_header(w: &mut impl Write, kind: u8) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u8(kind)
}

fn read_header(r: &mut impl Read, kind: u8) -> Result<(), ClassifyError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt_err("not a model file"));
    }
    let v = r.read_u32::<LE>()?;
    if v != VERSION {
        return Err(fmt_err(format!("unsupported model version {v}")));
    }
    let k = r.read_u8()?;
    if k != kind {
        return Err(fmt_err(format!("expected model kind '{}', found '{}'", kind as char, k as char)));
    }
    Ok(())
}

fn read_dim(r: &mut impl Read) -> Result<usize, ClassifyError> {
    let d = r.read_u64::<LE>()?;
    if d > MAX_DIM {
        return Err(fmt_err(format!("dimension {d} out of range")));
    }
    Ok(d as usize)
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    v.iter().try_for_each(|x| w.write_f64::<LE>(*x))
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>, ClassifyError> {
    let n = read_dim(r)?;
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn write_matrix(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_u64::<LE>(m.nrows() as u64)?;
    w.write_u64::<LE>(m.ncols() as u64)?;
    m.iter().try_for_each(|x| w.write_f64::<LE>(*x))
}

fn read_matrix(r: &mut impl Read) -> Result<DMatrix<f64>, ClassifyError> {
    let rows = read_dim(r)?;
    let cols = read_dim(r)?;
    let mut v = vec![0.0; rows * cols];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(DMatrix::from_vec(rows, cols, v))
}

fn write_layer(w: &mut impl Write, l: &RandomLayer) -> std::io::Result<()> {
    w.write_u64::<LE>(l.fan_in() as u64)?;
    w.write_u64::<LE>(l.hidden() as u64)?;
    w.write_u64::<LE>(l.seed)?;
    w.write_f64::<LE>(l.scale)
}

fn read_layer(r: &mut impl Read) -> Result<RandomLayer, ClassifyError> {
    let fan_in = read_dim(r)?;
    let hidden = read_dim(r)?;
    let seed = r.read_u64::<LE>()?;
    let scale = r.read_f64::<LE>()?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(fmt_err(format!("invalid layer scale {scale}")));
    }
    Ok(RandomLayer::new(fan_in, hidden, seed, scale))
}

fn write_norm(w: &mut impl Write, n: &FeatNorm) -> std::io::Result<()> {
    write_f64s(w, &n.mean)?;
    write_f64s(w, &n.rms)
}

fn read_norm(r: &mut impl Read) -> Result<FeatNorm, ClassifyError> {
    let mean = read_f64s(r)?;
    let rms = read_f64s(r)?;
    if mean.len() != rms.len() {
        return Err(fmt_err("normalization mean/rms lengths differ"));
    }
    Ok(FeatNorm { mean, rms })
}

fn write_slfn(w: &mut impl Write, m: &SlfnModel) -> std::io::Result<()> {
    write_layer(w, &m.w_in)?;
    write_matrix(w, &m.w_out)
}

fn read_slfn(r: &mut impl Read, n_classes: usize) -> Result<SlfnModel, ClassifyError> {
    let w_in = read_layer(r)?;
    let w_out = read_matrix(r)?;
    if w_out.shape() != (w_in.hidden(), n_classes) {
        return Err(fmt_err(format!("output weights {:?} do not fit the hidden layer", w_out.shape())));
    }
    Ok(SlfnModel { w_in, w_out })
}

pub fn write_scnn(w: &mut impl Write, m: &ScnnModel) -> Result<(), ClassifyError> {
    write_header(w, KIND_SCNN)?;
    let c = &m.config;
    for v in [c.hidden, c.pool_size, c.pool_stride, c.patch_size, c.n_classes] {
        w.write_u64::<LE>(v as u64)?;
    }
    w.write_f64::<LE>(c.mask_radius)?;
    w.write_f64::<LE>(c.jitter_sigma)?;
    let bank = m.bank().to_bytes();
    w.write_u64::<LE>(bank.len() as u64)?;
    w.write_all(&bank)?;
    write_layer(w, &m.w_in)?;
    write_matrix(w, &m.w_out)?;
    Ok(())
}

pub fn read_scnn(r: &mut impl Read) -> Result<ScnnModel, ClassifyError> {
    read_header(r, KIND_SCNN)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = read_dim(r)?;
    }
    let [hidden, pool_size, pool_stride, patch_size, n_classes] = dims;
    let config = ScnnConfig {
        hidden,
        pool_size,
        pool_stride,
        patch_size,
        n_classes,
        mask_radius: r.read_f64::<LE>()?,
        jitter_sigma: r.read_f64::<LE>()?,
    };
    let mut bank = vec![0u8; read_dim(r)?];
    r.read_exact(&mut bank)?;
    let bank = FilterBank::from_bytes(&bank).map_err(|e| fmt_err(e.to_string()))?;
    let w_in = read_layer(r)?;
    let w_out = read_matrix(r)?;
    if w_in.fan_in() != bank.count() * config.pool_cells().pow(2) || w_in.hidden() != hidden {
        return Err(fmt_err("input layer does not match the pooling geometry"));
    }
    if w_out.shape() != (hidden, n_classes) {
        return Err(fmt_err(format!("output weights {:?} do not fit the hidden layer", w_out.shape())));
    }
    Ok(ScnnModel::from_parts(config, bank, w_in, Some(w_out)))
}

pub fn write_ensemble(w: &mut impl Write, e: &Ensemble) -> Result<(), ClassifyError> {
    write_header(w, KIND_ENSEMBLE)?;
    w.write_u64::<LE>(e.n_classes as u64)?;
    write_norm(w, &e.state_norm)?;
    w.write_u64::<LE>(e.state.len() as u64)?;
    for m in &e.state {
        write_slfn(w, m)?;
    }
    write_norm(w, &e.shape_norm)?;
    write_slfn(w, &e.shape)?;
    Ok(())
}

pub fn read_ensemble(r: &mut impl Read) -> Result<Ensemble, ClassifyError> {
    read_header(r, KIND_ENSEMBLE)?;
    let n_classes = read_dim(r)?;
    let state_norm = read_norm(r)?;
    let n = read_dim(r)?;
    let state = (0..n).map(|_| read_slfn(r, n_classes)).collect::<Result<Vec<_>, _>>()?;
    let shape_norm = read_norm(r)?;
    let shape = read_slfn(r, n_classes)?;
    Ok(Ensemble {
        n_classes,
        state_norm,
        state,
        shape_norm,
        shape,
    })
}
