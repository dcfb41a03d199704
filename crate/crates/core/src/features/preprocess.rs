use rustfft::num_complex::Complex64;

use crate::error::FeatureError;
use crate::pmf::fft::Fft2;
use crate::pmf::Field;

/// An 8-bit frame with one (grey) or three (RGB) interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Frame {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), 3 * width * height);
        Frame {
            width,
            height,
            channels: 3,
            data,
        }
    }

    /// Luminance with weights 0.299 / 0.587 / 0.114.
    pub fn luminance(&self) -> Result<Field, FeatureError> {
        if self.width == 0 || self.height == 0 || self.data.is_empty() {
            return Err(FeatureError::EmptyFrame);
        }
        let ch = self.channels;
        Ok(Field::from_fn(self.height, self.width, |r, c| {
            let i = (r * self.width + c) * ch;
            if ch >= 3 {
                0.299 * self.data[i] as f64 + 0.587 * self.data[i + 1] as f64
                    + 0.114 * self.data[i + 2] as f64
            } else {
                self.data[i] as f64
            }
        }))
    }
}

/// Whitening and normalization settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessParams {
    pub downsample: usize,
    /// Low-pass cutoff of the whitening filter in cycles per image.
    pub cutoff: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            downsample: 2,
            cutoff: 200.0,
        }
    }
}

/// A greyscale frame after downsampling, whitening, mean subtraction and
/// rms normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedFrame {
    pub gray: Field,
}

impl PreprocessedFrame {
    pub fn rows(&self) -> usize {
        self.gray.rows()
    }

    pub fn cols(&self) -> usize {
        self.gray.cols()
    }
}

pub fn preprocess(frame: &Frame, params: &PreprocessParams) -> Result<PreprocessedFrame, FeatureError> {
    let gray = frame.luminance()?;
    let small = downsample(&gray, params.downsample.max(1));
    Ok(PreprocessedFrame {
        gray: whiten_normalize(&small, params.cutoff),
    })
}

/// Block average over `factor`×`factor` cells; trailing partial blocks are
/// dropped.
pub fn downsample(f: &Field, factor: usize) -> Field {
    if factor <= 1 {
        return f.clone();
    }
    let rows = (f.rows() / factor).max(1);
    let cols = (f.cols() / factor).max(1);
    Field::from_fn(rows, cols, |r, c| {
        let mut s = 0.0;
        let mut n = 0usize;
        for dr in 0..factor {
            for dc in 0..factor {
                let (rr, cc) = (r * factor + dr, c * factor + dc);
                if rr < f.rows() && cc < f.cols() {
                    s += f.get(rr, cc);
                    n += 1;
                }
            }
        }
        s / n as f64
    })
}

/// Radial frequency response `f · exp(-(f/f0)^4)`.
pub fn whitening_response(f: f64, cutoff: f64) -> f64 {
    f * (-(f / cutoff).powi(4)).exp()
}

/// Applies the whitening/low-pass filter, subtracts the mean and divides by
/// the rms. Frequencies are in cycles per image along the longer side.
pub fn whiten_normalize(img: &Field, cutoff: f64) -> Field {
    let (h, w) = img.dims();
    let plan = Fft2::plan(h, w);
    let mut buf: Vec<Complex64> = img.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut buf);
    let scale = h.max(w) as f64;
    for r in 0..h {
        let ky = signed_freq(r, h) / h as f64;
        for c in 0..w {
            let kx = signed_freq(c, w) / w as f64;
            let f = scale * (kx * kx + ky * ky).sqrt();
            buf[r * w + c] *= whitening_response(f, cutoff);
        }
    }
    plan.inverse(&mut buf);
    let n = (h * w) as f64;
    let mut out: Vec<f64> = buf.iter().map(|z| z.re / n).collect();
    let input_rms = (img.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mean = out.iter().sum::<f64>() / n;
    for v in &mut out {
        *v -= mean;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms <= 1e-10 * (1.0 + input_rms) {
        // nothing but round-off survived the filter
        out.iter_mut().for_each(|v| *v = 0.0);
    } else {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Field::from_vec(h, w, out).expect("finite whitened frame")
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_frame_whitens_to_zero() {
        let f = Frame::gray(32, 24, vec![117; 32 * 24]);
        let p = preprocess(&f, &PreprocessParams { downsample: 1, cutoff: 200.0 }).unwrap();
        assert!(p.gray.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_frame_rejected() {
        let f = Frame {
            width: 0,
            height: 0,
            channels: 1,
            data: vec![],
        };
        assert!(matches!(
            preprocess(&f, &PreprocessParams::default()),
            Err(FeatureError::EmptyFrame)
        ));
    }

    #[test]
    fn output_has_zero_mean_unit_rms() {
        let data: Vec<u8> = (0..64 * 48).map(|i| ((i * 7919) % 251) as u8).collect();
        let f = Frame::gray(64, 48, data);
        let p = preprocess(&f, &PreprocessParams::default()).unwrap();
        assert_eq!(p.gray.dims(), (24, 32));
        let n = p.gray.len() as f64;
        let mean = p.gray.sum() / n;
        let rms = (p.gray.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-6 * rms);
        assert!((rms - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn sinusoid_amplitudes_follow_response() {
        // two vertical-stripe sinusoids at f1 < f2 < cutoff, cycles/image
        let n = 256;
        let (f1, f2, cutoff) = (20.0, 90.0, 100.0);
        let img = Field::from_fn(n, n, |_, c| {
            let x = c as f64 / n as f64;
            (2.0 * PI * f1 * x).sin() + (2.0 * PI * f2 * x).sin()
        });
        let out = whiten_normalize(&img, cutoff);
        let amp = |f: f64| {
            let (mut s, mut co) = (0.0, 0.0);
            for c in 0..n {
                let x = c as f64 / n as f64;
                s += out.get(0, c) * (2.0 * PI * f * x).sin();
                co += out.get(0, c) * (2.0 * PI * f * x).cos();
            }
            (s * s + co * co).sqrt()
        };
        let measured = amp(f2) / amp(f1);
        let expected = whitening_response(f2, cutoff) / whitening_response(f1, cutoff);
        assert!((measured / expected - 1.0).abs() < 0.02, "{measured} vs {expected}");
    }

    #[test]
    fn whitening_twice_differs_from_once() {
        let img = Field::from_fn(32, 32, |r, c| ((r * 13 + c * 7) % 17) as f64);
        let once = whiten_normalize(&img, 200.0);
        let twice = whiten_normalize(&once, 200.0);
        let diff: f64 = once
            .values()
            .iter()
            .zip(twice.values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-3);
    }

    #[test]
    fn rgb_luminance_weights() {
        let f = Frame::rgb(1, 1, vec![100, 200, 50]);
        let l = f.luminance().unwrap();
        assert!((l.get(0, 0) - (29.9 + 117.4 + 5.7)).abs() < 1e-9);
    }
}
