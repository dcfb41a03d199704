use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex64;

use crate::error::FeatureError;
use crate::pmf::fft::{smooth_size, Fft2};
use crate::pmf::{Field, Grid2D};

const BANK_MAGIC: &[u8; 4] = b"FBNK";

/// A bank of square convolution kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    size: usize,
    kernels: Vec<Field>,
}

impl FilterBank {
    pub fn new(size: usize, kernels: Vec<Field>) -> Result<Self, FeatureError> {
        if kernels.is_empty() {
            return Err(FeatureError::BankFormat("bank has no kernels".into()));
        }
        if let Some(k) = kernels.iter().find(|k| k.dims() != (size, size)) {
            return Err(FeatureError::BankFormat(format!(
                "kernel of size {:?} in a bank of size {size}",
                k.dims()
            )));
        }
        Ok(FilterBank { size, kernels })
    }

    pub fn count(&self) -> usize {
        self.kernels.len()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kernels(&self) -> &[Field] {
        &self.kernels
    }

    /// Stand-in bank of zero-mean, unit-norm Gabor kernels over six
    /// orientations, two wavelengths and two phases (24 kernels).
    pub fn gabor(size: usize) -> FilterBank {
        let mut kernels = Vec::with_capacity(24);
        let c = (size as f64 - 1.0) / 2.0;
        for &wavelength in &[size as f64 / 4.0, size as f64 / 2.0] {
            let sigma = 0.5 * wavelength;
            for o in 0..6 {
                let theta = o as f64 * PI / 6.0;
                let (s, co) = theta.sin_cos();
                for &phase in &[0.0, PI / 2.0] {
                    let mut k = Field::from_fn(size, size, |r, cc| {
                        let (y, x) = (r as f64 - c, cc as f64 - c);
                        let u = x * co + y * s;
                        let env = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                        env * (2.0 * PI * u / wavelength + phase).cos()
                    });
                    let mean = k.mean();
                    k.values_mut().iter_mut().for_each(|v| *v -= mean);
                    let norm = k.values().iter().map(|v| v * v).sum::<f64>().sqrt();
                    k.values_mut().iter_mut().for_each(|v| *v /= norm);
                    kernels.push(k);
                }
            }
        }
        FilterBank { size, kernels }
    }

    /// Little-endian `FBNK`, `u32` count, `u32` size, then `count·size²` f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.count() * self.size * self.size);
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        for k in &self.kernels {
            for v in k.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FilterBank, FeatureError> {
        let bad = |m: &str| FeatureError::BankFormat(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != BANK_MAGIC {
            return Err(bad("missing FBNK header"));
        }
        let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let size = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if count == 0 || size == 0 {
            return Err(bad("zero count or size"));
        }
        let need = 12 + 8 * count * size * size;
        if bytes.len() != need {
            return Err(FeatureError::BankFormat(format!(
                "expected {need} bytes, found {}",
                bytes.len()
            )));
        }
        let mut vals = bytes[12..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mut kernels = Vec::with_capacity(count);
        for _ in 0..count {
            let data: Vec<f64> = vals.by_ref().take(size * size).collect();
            kernels.push(
                Field::from_vec(size, size, data).map_err(|e| bad(&e.to_string()))?,
            );
        }
        FilterBank::new(size, kernels)
    }

    pub fn load_binary(path: &Path) -> Result<FilterBank, FeatureError> {
        let bytes = fs::read(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn save_binary(&self, path: &Path) -> Result<(), FeatureError> {
        fs::write(path, self.to_bytes()).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// CSV with `count·size` rows of `size` comma-separated values; kernels
    /// are stacked vertically.
    pub fn load_csv(path: &Path) -> Result<FilterBank, FeatureError> {
        let text = fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<FilterBank, FeatureError> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| FeatureError::BankFormat(format!("line {}: {e}", i + 1)))?;
            rows.push(row);
        }
        let size = rows.first().map(|r| r.len()).unwrap_or(0);
        if size == 0 || rows.len() % size != 0 || rows.iter().any(|r| r.len() != size) {
            return Err(FeatureError::BankFormat(format!(
                "{} rows of width {size} do not form square kernels",
                rows.len()
            )));
        }
        let kernels = rows
            .chunks(size)
            .map(|chunk| {
                Field::from_vec(size, size, chunk.concat())
                    .map_err(|e| FeatureError::BankFormat(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        FilterBank::new(size, kernels)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        for k in &self.kernels {
            for r in 0..self.size {
                let line: Vec<String> = k.row(r).iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
        }
        Ok(())
    }
}

/// Candidate feature maps for one frame, each within `[0, 1]`.
/// Feature id 1 is the motion history image, ids 2.. are filter responses.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub maps: Vec<Grid2D>,
    pub ids: Vec<usize>,
}

impl FeatureStack {
    pub fn new(maps: Vec<Grid2D>) -> FeatureStack {
        let ids = (1..=maps.len()).collect();
        FeatureStack { maps, ids }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }
}

/// Rescales a field to `[0, 1]`; a constant field maps to all zeros.
pub fn min_max_rescale(f: &Field) -> Grid2D {
    let (lo, hi) = (f.min(), f.max());
    let span = hi - lo;
    if !(span > 0.0) {
        return Grid2D::zeros(f.rows(), f.cols());
    }
    Grid2D::from_field_clamped(f.map(|v| ((v - lo) / span).min(1.0)))
}

/// Filter bank with kernel spectra precomputed for one frame size.
pub struct BankPlan {
    dims: (usize, usize),
    padded: (usize, usize),
    spectra: Vec<Vec<Complex64>>,
}

impl BankPlan {
    pub fn new(bank: &FilterBank, rows: usize, cols: usize) -> BankPlan {
        let c = bank.size() / 2;
        let reach = c.max(bank.size() - 1 - c);
        let padded = (smooth_size(rows + reach), smooth_size(cols + reach));
        let plan = Fft2::plan(padded.0, padded.1);
        let spectra = bank
            .kernels()
            .iter()
            .map(|k| {
                let mut buf = vec![Complex64::default(); padded.0 * padded.1];
                for kr in 0..k.rows() {
                    let ir = (kr as isize - c as isize).rem_euclid(padded.0 as isize) as usize;
                    for kc in 0..k.cols() {
                        let ic =
                            (kc as isize - c as isize).rem_euclid(padded.1 as isize) as usize;
                        buf[ir * padded.1 + ic] = Complex64::new(k.get(kr, kc), 0.0);
                    }
                }
                plan.forward(&mut buf);
                buf
            })
            .collect();
        BankPlan {
            dims: (rows, cols),
            padded,
            spectra,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Raw (unrescaled) zero-padded convolution of the frame with every kernel.
    pub fn responses(&self, frame: &Field) -> Vec<Field> {
        assert_eq!(frame.dims(), self.dims, "bank plan built for another frame size");
        let (h, w) = self.dims;
        let (nr, nc) = self.padded;
        let plan = Fft2::plan(nr, nc);
        let mut fs = vec![Complex64::default(); nr * nc];
        for r in 0..h {
            for c in 0..w {
                fs[r * nc + c] = Complex64::new(frame.get(r, c), 0.0);
            }
        }
        plan.forward(&mut fs);
        let scale = 1.0 / (nr * nc) as f64;
        let mut out = Vec::with_capacity(self.spectra.len());
        // both outputs are real, so two kernels share one inverse transform
        for pair in self.spectra.chunks(2) {
            let i = Complex64::new(0.0, 1.0);
            let mut buf: Vec<Complex64> = match pair {
                [a, b] => (0..nr * nc).map(|k| fs[k] * a[k] + i * fs[k] * b[k]).collect(),
                [a] => (0..nr * nc).map(|k| fs[k] * a[k]).collect(),
                _ => unreachable!(),
            };
            plan.inverse(&mut buf);
            out.push(Field::from_fn(h, w, |r, c| buf[r * nc + c].re * scale));
            if pair.len() == 2 {
                out.push(Field::from_fn(h, w, |r, c| buf[r * nc + c].im * scale));
            }
        }
        out
    }
}

/// Convolves a preprocessed frame with every kernel, rescales each response
/// to `[0, 1]` and prepends the motion history image as feature 1.
pub fn apply_filter_bank(frame: &Field, bank: &FilterBank, mhi: &Grid2D) -> FeatureStack {
    let plan = BankPlan::new(bank, frame.rows(), frame.cols());
    stack_from_responses(&plan.responses(frame), mhi)
}

pub(crate) fn stack_from_responses(responses: &[Field], mhi: &Grid2D) -> FeatureStack {
    let mut maps = Vec::with_capacity(responses.len() + 1);
    maps.push(mhi.clone());
    maps.extend(responses.iter().map(min_max_rescale));
    FeatureStack::new(maps)
}
