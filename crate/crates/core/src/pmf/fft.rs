//! Two-dimensional FFT plumbing for the spectral convolution backend.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static PLANS: RefCell<HashMap<(usize, usize), Rc<Fft2>>> = RefCell::new(HashMap::new());
}

impl Fft2 {
    /// Cached plan for a `rows`×`cols` transform on the current thread.
    pub(crate) fn plan(rows: usize, cols: usize) -> Rc<Fft2> {
        PLANS.with(|plans| {
            plans
                .borrow_mut()
                .entry((rows, cols))
                .or_insert_with(|| Rc::new(Fft2::new(rows, cols)))
                .clone()
        })
    }

    fn new(rows: usize, cols: usize) -> Fft2 {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            let row_fwd = p.plan_fft_forward(cols);
            let row_inv = p.plan_fft_inverse(cols);
            let col_fwd = p.plan_fft_forward(rows);
            let col_inv = p.plan_fft_inverse(rows);
            let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
                .iter()
                .map(|f| f.get_inplace_scratch_len())
                .max()
                .unwrap_or(0);
            Fft2 {
                rows,
                cols,
                row_fwd,
                row_inv,
                col_fwd,
                col_inv,
                scratch_len,
            }
        })
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    /// Unnormalized inverse transform.
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true);
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (rows, cols) = (self.rows, self.cols);
        debug_assert_eq!(buf.len(), rows * cols);
        let mut scratch = vec![Complex64::default(); self.scratch_len];
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row_fft.process_with_scratch(buf, &mut scratch);
        let mut t = vec![Complex64::default(); rows * cols];
        transpose(buf, &mut t, rows, cols);
        col_fft.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, buf, cols, rows);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 16;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Smallest length ≥ `n` with no prime factor above 7.
pub(crate) fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5, 7] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

/// Transforms two real planes stored in the same `rows`×`cols` layout with a
/// single complex FFT and returns their separated spectra.
pub(crate) fn paired_spectra(
    plan: &Fft2,
    first: &[f64],
    second: &[f64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let (rows, cols) = (plan.rows, plan.cols);
    let mut z: Vec<Complex64> = first
        .iter()
        .zip(second)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    plan.forward(&mut z);
    let mut a = vec![Complex64::default(); rows * cols];
    let mut b = vec![Complex64::default(); rows * cols];
    for r in 0..rows {
        let nr = (rows - r) % rows;
        for c in 0..cols {
            let nc = (cols - c) % cols;
            let zk = z[r * cols + c];
            let zn = z[nr * cols + nc].conj();
            a[r * cols + c] = (zk + zn) * 0.5;
            // (zk - zn) / 2i
            let d = zk - zn;
            b[r * cols + c] = Complex64::new(d.im * 0.5, -d.re * 0.5);
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(1), 1);
        assert_eq!(smooth_size(11), 12);
        assert_eq!(smooth_size(163), 168);
        assert_eq!(smooth_size(144), 144);
    }

    #[test]
    fn roundtrip() {
        let plan = Fft2::plan(6, 10);
        let orig: Vec<Complex64> = (0..60)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        plan.forward(&mut buf);
        plan.inverse(&mut buf);
        for (x, y) in buf.iter().zip(&orig) {
            assert!((x / 60.0 - y).norm() < 1e-12);
        }
    }

    #[test]
    fn paired_matches_separate() {
        let plan = Fft2::plan(5, 8);
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).cos() + 2.0).collect();
        let (sa, sb) = paired_spectra(&plan, &a, &b);
        let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        plan.forward(&mut fa);
        plan.forward(&mut fb);
        for i in 0..40 {
            assert!((sa[i] - fa[i]).norm() < 1e-10);
            assert!((sb[i] - fb[i]).norm() < 1e-10);
        }
    }
}
