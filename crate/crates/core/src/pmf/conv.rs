//! Convolution and cross-correlation on zero-padded planes.
//!
//! Kernels are centered: for a kernel `b` of size `hb`×`wb` the cell
//! `(hb/2, wb/2)` is offset `(0, 0)`. Outputs always live on the domain of
//! the first operand.
//!
//! * `convolve(a, b)[i]       = Σ_o a[i - o] · b[c + o]`
//! * `cross_correlate(a, b)[i] = Σ_o a[i + o] · b[c + o]`
//! * `correlate_lags(a, b)[v]  = Σ_x a[x + v] · b[x]` for `|v| ≤ radius`
//!
//! Two backends compute the same sums: a direct backend that iterates the
//! non-zero cells of the sparser operand, and a spectral backend using a
//! padded FFT just large enough that circular wrap-around never reaches the
//! output window.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{paired_spectra, smooth_size, Fft2};
use super::grid::{Field, Grid2D};

/// Which summation route to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Auto,
    Direct,
    Spectral,
}

/// Backend selection with the direct/spectral crossover.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvPolicy {
    pub backend: Backend,
    /// Kernels whose smaller side is below this run on the direct backend.
    pub crossover: usize,
}

impl Default for ConvPolicy {
    fn default() -> Self {
        ConvPolicy {
            backend: Backend::Auto,
            crossover: 32,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Convolve,
    Correlate,
}

impl ConvPolicy {
    pub fn direct() -> Self {
        ConvPolicy {
            backend: Backend::Direct,
            ..Default::default()
        }
    }

    pub fn spectral() -> Self {
        ConvPolicy {
            backend: Backend::Spectral,
            ..Default::default()
        }
    }

    pub fn convolve_field(&self, a: &Field, b: &Field) -> Field {
        self.kernel_op(a, b, Mode::Convolve)
    }

    pub fn cross_correlate_field(&self, a: &Field, b: &Field) -> Field {
        self.kernel_op(a, b, Mode::Correlate)
    }

    pub fn convolve(&self, a: &Grid2D, b: &Grid2D) -> Grid2D {
        Grid2D::from_field_clamped(self.convolve_field(a, b))
    }

    pub fn cross_correlate(&self, a: &Grid2D, b: &Grid2D) -> Grid2D {
        Grid2D::from_field_clamped(self.cross_correlate_field(a, b))
    }

    /// `Σ_x a[x+v]·b[x]` for every lag with `|v_r| ≤ radius.0`, `|v_c| ≤ radius.1`.
    /// `a` and `b` share a domain; the output is `(2r+1)`×`(2c+1)` with lag
    /// zero at its center.
    pub fn correlate_lags_field(&self, a: &Field, b: &Field, radius: (usize, usize)) -> Field {
        assert_eq!(a.dims(), b.dims(), "correlate_lags operands must share a domain");
        let out_dims = (2 * radius.0 + 1, 2 * radius.1 + 1);
        let nnz = a.count_nonzero().min(b.count_nonzero());
        let direct_cost = nnz * out_dims.0 * out_dims.1;
        let n = (
            smooth_size(a.rows() + radius.0),
            smooth_size(a.cols() + radius.1),
        );
        let use_direct = match self.backend {
            Backend::Direct => true,
            Backend::Spectral => false,
            Backend::Auto => {
                out_dims.0.min(out_dims.1) < self.crossover || direct_cost <= spectral_cost(n)
            }
        };
        if use_direct {
            lags_direct(a, b, radius)
        } else {
            lags_spectral(a, b, radius, n)
        }
    }

    pub fn correlate_lags(&self, a: &Grid2D, b: &Grid2D, radius: (usize, usize)) -> Grid2D {
        Grid2D::from_field_clamped(self.correlate_lags_field(a, b, radius))
    }

    fn kernel_op(&self, a: &Field, b: &Field, mode: Mode) -> Field {
        let (cr, cc) = b.center();
        let reach = (cr.max(b.rows() - 1 - cr), cc.max(b.cols() - 1 - cc));
        let n = (
            smooth_size(a.rows() + reach.0),
            smooth_size(a.cols() + reach.1),
        );
        let use_direct = match self.backend {
            Backend::Direct => true,
            Backend::Spectral => false,
            Backend::Auto => {
                b.rows().min(b.cols()) < self.crossover || direct_cost(a, b) <= spectral_cost(n)
            }
        };
        if use_direct {
            kernel_direct(a, b, mode)
        } else {
            kernel_spectral(a, b, mode, n)
        }
    }
}

/// Convolution with the default policy.
pub fn convolve(a: &Grid2D, b: &Grid2D) -> Grid2D {
    ConvPolicy::default().convolve(a, b)
}

/// Cross-correlation with the default policy.
pub fn cross_correlate(a: &Grid2D, b: &Grid2D) -> Grid2D {
    ConvPolicy::default().cross_correlate(a, b)
}

/// Lag-window correlation with the default policy.
pub fn correlate_lags(a: &Grid2D, b: &Grid2D, radius: (usize, usize)) -> Grid2D {
    ConvPolicy::default().correlate_lags(a, b, radius)
}

fn direct_cost(a: &Field, b: &Field) -> usize {
    let gather = b.count_nonzero() * a.len();
    let scatter = a.count_nonzero() * b.len();
    gather.min(scatter)
}

// Rough multiply count of two transforms plus the pointwise work; only the
// ratio to `direct_cost` matters.
fn spectral_cost(n: (usize, usize)) -> usize {
    let len = n.0 * n.1;
    let log = (usize::BITS - len.leading_zeros()) as usize;
    2 * 6 * len * log + 16 * len
}

fn kernel_direct(a: &Field, b: &Field, mode: Mode) -> Field {
    let (h, w) = a.dims();
    let (cr, cc) = b.center();
    let mut out = vec![0.0; h * w];
    let sign: isize = if mode == Mode::Convolve { 1 } else { -1 };
    let gather = b.count_nonzero() * a.len();
    let scatter = a.count_nonzero() * b.len();
    if gather <= scatter {
        // out[i] += b[k] * a[i - s·o] for each non-zero kernel cell
        for kr in 0..b.rows() {
            for kc in 0..b.cols() {
                let bv = b.get(kr, kc);
                if bv == 0.0 {
                    continue;
                }
                let or = sign * (kr as isize - cr as isize);
                let oc = sign * (kc as isize - cc as isize);
                let c_lo = oc.max(0) as usize;
                let c_hi = (w as isize + oc).min(w as isize).max(0) as usize;
                if c_lo >= c_hi {
                    continue;
                }
                for i in 0..h {
                    let src_r = i as isize - or;
                    if src_r < 0 || src_r >= h as isize {
                        continue;
                    }
                    let src = a.row(src_r as usize);
                    let dst = &mut out[i * w..(i + 1) * w];
                    let src_lo = (c_lo as isize - oc) as usize;
                    for (d, s) in dst[c_lo..c_hi]
                        .iter_mut()
                        .zip(&src[src_lo..src_lo + (c_hi - c_lo)])
                    {
                        *d += bv * s;
                    }
                }
            }
        }
    } else {
        // each non-zero a[p] lands on out[p + s·o]
        for pr in 0..h {
            for pc in 0..w {
                let av = a.get(pr, pc);
                if av == 0.0 {
                    continue;
                }
                for kr in 0..b.rows() {
                    let ir = pr as isize + sign * (kr as isize - cr as isize);
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    let brow = b.row(kr);
                    for (kc, &bv) in brow.iter().enumerate() {
                        let ic = pc as isize + sign * (kc as isize - cc as isize);
                        if ic < 0 || ic >= w as isize {
                            continue;
                        }
                        out[ir as usize * w + ic as usize] += av * bv;
                    }
                }
            }
        }
    }
    Field::from_vec(h, w, out).expect("finite direct sum")
}

fn kernel_spectral(a: &Field, b: &Field, mode: Mode, n: (usize, usize)) -> Field {
    let (h, w) = a.dims();
    let (cr, cc) = b.center();
    let plan = Fft2::plan(n.0, n.1);
    let mut pa = vec![0.0; n.0 * n.1];
    for r in 0..h {
        pa[r * n.1..r * n.1 + w].copy_from_slice(a.row(r));
    }
    // kernel offset o sits at index o mod n
    let mut pb = vec![0.0; n.0 * n.1];
    for kr in 0..b.rows() {
        let ir = (kr as isize - cr as isize).rem_euclid(n.0 as isize) as usize;
        for kc in 0..b.cols() {
            let ic = (kc as isize - cc as isize).rem_euclid(n.1 as isize) as usize;
            pb[ir * n.1 + ic] = b.get(kr, kc);
        }
    }
    let (sa, sb) = paired_spectra(&plan, &pa, &pb);
    let mut prod: Vec<Complex64> = match mode {
        Mode::Convolve => sa.iter().zip(&sb).map(|(x, y)| x * y).collect(),
        Mode::Correlate => sa.iter().zip(&sb).map(|(x, y)| x * y.conj()).collect(),
    };
    plan.inverse(&mut prod);
    let scale = 1.0 / (n.0 * n.1) as f64;
    Field::from_fn(h, w, |r, c| prod[r * n.1 + c].re * scale)
}

fn lags_direct(a: &Field, b: &Field, radius: (usize, usize)) -> Field {
    let (h, w) = a.dims();
    let (rr, rc) = (radius.0 as isize, radius.1 as isize);
    let ow = 2 * radius.1 + 1;
    let oh = 2 * radius.0 + 1;
    let mut out = vec![0.0; oh * ow];
    let b_sparser = b.count_nonzero() <= a.count_nonzero();
    for xr in 0..h {
        for xc in 0..w {
            if b_sparser {
                // b[x] pairs with a[x + v]
                let bv = b.get(xr, xc);
                if bv == 0.0 {
                    continue;
                }
                for vr in -rr..=rr {
                    let ar = xr as isize + vr;
                    if ar < 0 || ar >= h as isize {
                        continue;
                    }
                    let orow = ((vr + rr) as usize) * ow;
                    for vc in -rc..=rc {
                        let ac = xc as isize + vc;
                        if ac < 0 || ac >= w as isize {
                            continue;
                        }
                        out[orow + (vc + rc) as usize] += a.get(ar as usize, ac as usize) * bv;
                    }
                }
            } else {
                // a[p] pairs with b[p - v]
                let av = a.get(xr, xc);
                if av == 0.0 {
                    continue;
                }
                for vr in -rr..=rr {
                    let br = xr as isize - vr;
                    if br < 0 || br >= h as isize {
                        continue;
                    }
                    let orow = ((vr + rr) as usize) * ow;
                    for vc in -rc..=rc {
                        let bc = xc as isize - vc;
                        if bc < 0 || bc >= w as isize {
                            continue;
                        }
                        out[orow + (vc + rc) as usize] += av * b.get(br as usize, bc as usize);
                    }
                }
            }
        }
    }
    Field::from_vec(oh, ow, out).expect("finite direct sum")
}

fn lags_spectral(a: &Field, b: &Field, radius: (usize, usize), n: (usize, usize)) -> Field {
    let (h, w) = a.dims();
    let plan = Fft2::plan(n.0, n.1);
    let mut pa = vec![0.0; n.0 * n.1];
    let mut pb = vec![0.0; n.0 * n.1];
    for r in 0..h {
        pa[r * n.1..r * n.1 + w].copy_from_slice(a.row(r));
        pb[r * n.1..r * n.1 + w].copy_from_slice(b.row(r));
    }
    let (sa, sb) = paired_spectra(&plan, &pa, &pb);
    let mut prod: Vec<Complex64> = sa.iter().zip(&sb).map(|(x, y)| x * y.conj()).collect();
    plan.inverse(&mut prod);
    let scale = 1.0 / (n.0 * n.1) as f64;
    let (rr, rc) = (radius.0 as isize, radius.1 as isize);
    Field::from_fn(2 * radius.0 + 1, 2 * radius.1 + 1, |r, c| {
        let vr = (r as isize - rr).rem_euclid(n.0 as isize) as usize;
        let vc = (c as isize - rc).rem_euclid(n.1 as isize) as usize;
        prod[vr * n.1 + vc].re * scale
    })
}
