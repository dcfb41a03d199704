//! A single shape estimating filter: position, velocity and shape posteriors
//! updated by convolution (prediction) and cross-correlation (measurement).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::PmfError;
use crate::pmf::{
    argmax_delta, gaussian_pmf, normalize_owned, ConvPolicy, Field, Grid2D, Pmf2D,
};
use crate::select::{FeatureHist, BINS};

/// Which position estimate the shape is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeMeasure {
    /// Delta at the posterior position maximum.
    #[default]
    Argmax,
    /// The full posterior position mass.
    Posterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SefParams {
    /// Largest representable speed in px/frame; the velocity domain is
    /// `2·v_max + 1` square.
    pub v_max: usize,
    /// Side of the square shape domain in px (odd).
    pub shape_dim: usize,
    pub accel_sigma: f64,
    pub shape_drift_sigma: f64,
    pub shape_prior_sigma: f64,
    /// Vigilance threshold on the shape match.
    pub lambda: f64,
    /// Spread of a freshly seeded position mass; `None` means a quarter of
    /// the smaller grid-cell side.
    pub init_pos_sigma: Option<f64>,
    pub init_vel_sigma: f64,
    pub shape_measure: ShapeMeasure,
}

impl Default for SefParams {
    fn default() -> Self {
        SefParams {
            v_max: 16,
            shape_dim: 71,
            accel_sigma: 0.5,
            shape_drift_sigma: 0.5,
            shape_prior_sigma: 12.0,
            lambda: 0.3,
            init_pos_sigma: None,
            init_vel_sigma: 2.0,
            shape_measure: ShapeMeasure::Argmax,
        }
    }
}

/// Gaussian kernel whose support covers `±ceil(4σ)` cells.
fn small_gaussian(sigma: f64) -> Pmf2D {
    let r = (4.0 * sigma).ceil().max(1.0) as usize;
    let n = 2 * r + 1;
    gaussian_pmf(n, n, (sigma, sigma), (r as f64, r as f64))
}

/// Constant priors shared by every filter built from the same parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SefPriors {
    /// Acceleration kernel over velocity offsets.
    pub a0: Pmf2D,
    /// Shape drift kernel.
    pub r0: Pmf2D,
    /// Prior shape on the shape domain.
    pub s0: Pmf2D,
}

impl SefPriors {
    pub fn new(p: &SefParams) -> Self {
        let c = (p.shape_dim / 2) as f64;
        SefPriors {
            a0: small_gaussian(p.accel_sigma),
            r0: small_gaussian(p.shape_drift_sigma),
            s0: gaussian_pmf(
                p.shape_dim,
                p.shape_dim,
                (p.shape_prior_sigma, p.shape_prior_sigma),
                (c, c),
            ),
        }
    }
}

/// Posterior state of one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct SefState {
    pub x_s: Pmf2D,
    pub v_s: Pmf2D,
    pub s_s: Pmf2D,
    pub i_s: Pmf2D,
    pub f_s: Vec<FeatureHist>,
    /// Seeding cell `(row, col)`.
    pub home: (usize, usize),
    pub lambda: f64,
    pub init_pos_sigma: f64,
    pub init_vel_sigma: f64,
    pub priors: Arc<SefPriors>,
    pub reseeds: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SefPrediction {
    pub v_p: Pmf2D,
    pub x_p: Pmf2D,
    pub s_p: Pmf2D,
    pub i_p: Pmf2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SefMeasurement {
    pub x_m: Pmf2D,
    pub v_m: Pmf2D,
    pub s_m: Pmf2D,
    pub rho: f64,
    pub alpha: f64,
    /// True when the fused map carried no mass and the filter coasted.
    pub coasted: bool,
}

/// Result of one measurement/smoothing pass.
#[derive(Clone, Debug, PartialEq)]
pub enum SefUpdate {
    Updated(SefMeasurement),
    /// A mass vanished and the filter was reseeded at its home cell.
    Reseeded,
}

impl SefState {
    /// Fresh filter at `home` on a `frame`-sized position domain.
    pub fn seeded(
        frame: (usize, usize),
        velocity_dim: usize,
        home: (usize, usize),
        init_pos_sigma: f64,
        init_vel_sigma: f64,
        lambda: f64,
        priors: Arc<SefPriors>,
        n_features: usize,
    ) -> Self {
        let mut s = SefState {
            x_s: Pmf2D::uniform(frame.0, frame.1),
            v_s: Pmf2D::uniform(velocity_dim, velocity_dim),
            s_s: priors.s0.clone(),
            i_s: Pmf2D::uniform(frame.0, frame.1),
            f_s: vec![FeatureHist::uniform(); n_features],
            home,
            lambda,
            init_pos_sigma,
            init_vel_sigma,
            priors,
            reseeds: 0,
        };
        s.reset(n_features);
        s
    }

    pub fn frame_dims(&self) -> (usize, usize) {
        self.x_s.dims()
    }

    pub fn velocity_radius(&self) -> usize {
        self.v_s.rows() / 2
    }

    pub fn shape_radius(&self) -> usize {
        self.s_s.rows() / 2
    }

    fn reset(&mut self, n_features: usize) {
        let (rows, cols) = self.frame_dims();
        let vdim = self.v_s.rows();
        let vc = (vdim / 2) as f64;
        let s = self.init_pos_sigma;
        self.x_s = gaussian_pmf(rows, cols, (s, s), (self.home.0 as f64, self.home.1 as f64));
        self.v_s = gaussian_pmf(vdim, vdim, (self.init_vel_sigma, self.init_vel_sigma), (vc, vc));
        self.s_s = self.priors.s0.clone();
        self.i_s = ConvPolicy::default()
            .convolve(&argmax_delta(&self.x_s), &self.s_s)
            .normalize()
            .unwrap_or_else(|_| argmax_delta(&self.x_s));
        self.f_s = vec![FeatureHist::uniform(); n_features];
    }

    /// Reinitializes position, velocity, shape and feature posteriors at home.
    pub fn reseed(&mut self) {
        let n = self.f_s.len();
        self.reset(n);
        self.reseeds += 1;
    }

    /// Traverses down the hierarchy: velocity, position, shape, image.
    pub fn predict(&self, policy: &ConvPolicy) -> Result<SefPrediction, PmfError> {
        let v_p = normalize_owned(policy.convolve(&self.v_s, &self.priors.a0))?;
        let x_p = normalize_owned(policy.convolve(&self.x_s, &v_p))?;
        let s_p = normalize_owned(policy.convolve(&self.s_s, &self.priors.r0))?;
        let i_p = normalize_owned(policy.convolve(&x_p, &s_p))?;
        Ok(SefPrediction { v_p, x_p, s_p, i_p })
    }

    /// Measures and smooths against this filter's attention-weighted fused
    /// map `i_m` and association mass `c`. The state is reseeded (and
    /// `Reseeded` returned) if a posterior loses all mass.
    pub fn update(
        &mut self,
        pred: &SefPrediction,
        i_m: &Grid2D,
        c: &Grid2D,
        mode: ShapeMeasure,
        policy: &ConvPolicy,
    ) -> SefUpdate {
        let (x_m, coasted) = measure_position(pred, i_m, &self.priors.s0, policy);
        let v_m = measure_velocity(&x_m, &self.x_s, self.velocity_radius(), &pred.v_p, policy);
        let Ok(x_s) = smooth_position(&x_m, &pred.x_p, c) else {
            self.reseed();
            return SefUpdate::Reseeded;
        };
        let x_smax = argmax_delta(&x_s);
        let anchor = match mode {
            ShapeMeasure::Argmax => &x_smax,
            ShapeMeasure::Posterior => &x_s,
        };
        let s_m = measure_shape(i_m, anchor, self.shape_radius(), policy);
        let (s_m, rho) = match s_m {
            Some(s_m) => {
                let (rho, _) = match_and_gate(&s_m, &pred.s_p, self.lambda);
                (s_m, rho)
            }
            None => (pred.s_p.clone(), 0.0),
        };
        let alpha = vigilance(rho, self.lambda);
        let s_s = smooth_shape(&s_m, &pred.s_p, alpha);
        let v_s = normalize_owned(v_m.product(&pred.v_p).expect("velocity domains"))
            .unwrap_or_else(|_| pred.v_p.clone());
        let Ok(i_s) = posterior_image(&s_s, &x_smax, policy) else {
            self.reseed();
            return SefUpdate::Reseeded;
        };
        self.x_s = x_s;
        self.v_s = v_s;
        self.s_s = s_s;
        self.i_s = i_s;
        SefUpdate::Updated(SefMeasurement {
            x_m,
            v_m,
            s_m,
            rho,
            alpha,
            coasted,
        })
    }
}

/// Builds a seeded filter using the velocity domain size implied by
/// `params`.
pub fn new_sef(
    params: &SefParams,
    priors: Arc<SefPriors>,
    frame: (usize, usize),
    home: (usize, usize),
    init_pos_sigma: f64,
    n_features: usize,
) -> SefState {
    SefState::seeded(
        frame,
        2 * params.v_max + 1,
        home,
        init_pos_sigma,
        params.init_vel_sigma,
        params.lambda,
        priors,
        n_features,
    )
}

/// Position measurement: the fused map correlated with the predicted shape
/// windowed by the prior shape. Coasts on the prediction when the map is
/// empty.
pub fn measure_position(
    pred: &SefPrediction,
    i_m: &Grid2D,
    s0: &Pmf2D,
    policy: &ConvPolicy,
) -> (Pmf2D, bool) {
    if i_m.max() <= 0.0 {
        return (pred.x_p.clone(), true);
    }
    let template = pred.s_p.product(s0).expect("shape domains");
    match normalize_owned(policy.cross_correlate(i_m, &template)) {
        Ok(x_m) => (x_m, false),
        Err(_) => (pred.x_p.clone(), true),
    }
}

/// Velocity measurement: lags between the measured and previous position.
/// Falls back to the predicted velocity when the two share no overlap
/// within the velocity domain.
pub fn measure_velocity(
    x_m: &Pmf2D,
    x_prev: &Pmf2D,
    radius: usize,
    v_p: &Pmf2D,
    policy: &ConvPolicy,
) -> Pmf2D {
    normalize_owned(policy.correlate_lags(x_m, x_prev, (radius, radius)))
        .unwrap_or_else(|_| v_p.clone())
}

/// Position posterior `X_m · X_p · C`, normalized.
pub fn smooth_position(x_m: &Pmf2D, x_p: &Pmf2D, c: &Grid2D) -> Result<Pmf2D, PmfError> {
    let prod = x_m.product(x_p)?.product(c)?;
    normalize_owned(prod)
}

/// Shape observed around `anchor`: the fused map windowed by lag
/// correlation. `None` when the window holds no mass.
pub fn measure_shape(
    i_m: &Grid2D,
    anchor: &Pmf2D,
    radius: usize,
    policy: &ConvPolicy,
) -> Option<Pmf2D> {
    normalize_owned(policy.correlate_lags(i_m, anchor, (radius, radius))).ok()
}

/// Vigilance gate: `ρ²` when `ρ ≥ λ`, else 0.
pub fn vigilance(rho: f64, lambda: f64) -> f64 {
    if rho >= lambda {
        rho * rho
    } else {
        0.0
    }
}

/// L²-normalized match between measured and predicted shape and the
/// resulting blend exponent.
pub fn match_and_gate(s_m: &Grid2D, s_p: &Grid2D, lambda: f64) -> (f64, f64) {
    let (mut dot, mut nm, mut np) = (0.0, 0.0, 0.0);
    for (&a, &b) in s_m.values().iter().zip(s_p.values()) {
        dot += a * b;
        nm += a * a;
        np += b * b;
    }
    if !(nm > 0.0 && np > 0.0) {
        return (0.0, 0.0);
    }
    let rho = (dot / (nm.sqrt() * np.sqrt())).clamp(0.0, 1.0);
    (rho, vigilance(rho, lambda))
}

/// Geometric blend `S_m^α · S_p^(1−α)`, normalized. `α = 0` returns `S_p`
/// unchanged; an all-zero blend also keeps `S_p`.
pub fn smooth_shape(s_m: &Pmf2D, s_p: &Pmf2D, alpha: f64) -> Pmf2D {
    if alpha <= 0.0 {
        return s_p.clone();
    }
    if alpha >= 1.0 {
        return s_m.clone();
    }
    let blend = Grid2D::from_fn(s_m.rows(), s_m.cols(), |r, c| {
        s_m.get(r, c).powf(alpha) * s_p.get(r, c).powf(1.0 - alpha)
    });
    normalize_owned(blend).unwrap_or_else(|_| s_p.clone())
}

/// Posterior object image: the shape stamped at the position maximum.
pub fn posterior_image(s_s: &Pmf2D, x_smax: &Pmf2D, policy: &ConvPolicy) -> Result<Pmf2D, PmfError> {
    normalize_owned(policy.convolve(x_smax, s_s))
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"SEFS";
const SNAPSHOT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_grid(out: &mut Vec<u8>, g: &Field) {
    put_u32(out, g.rows() as u32);
    put_u32(out, g.cols() as u32);
    for &v in g.values() {
        put_f64(out, v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("snapshot truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn pmf(&mut self) -> Result<Pmf2D, String> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        let g = Grid2D::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
        Pmf2D::try_from_grid(g).map_err(|e| e.to_string())
    }
}

impl SefState {
    /// Versioned little-endian snapshot of every posterior and prior.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SNAPSHOT_MAGIC);
        put_u32(&mut out, SNAPSHOT_VERSION);
        put_u32(&mut out, self.home.0 as u32);
        put_u32(&mut out, self.home.1 as u32);
        put_f64(&mut out, self.lambda);
        put_f64(&mut out, self.init_pos_sigma);
        put_f64(&mut out, self.init_vel_sigma);
        out.extend_from_slice(&self.reseeds.to_le_bytes());
        for g in [
            &self.x_s, &self.v_s, &self.s_s, &self.i_s, &self.priors.a0, &self.priors.r0,
            &self.priors.s0,
        ] {
            put_grid(&mut out, g);
        }
        put_u32(&mut out, self.f_s.len() as u32);
        for h in &self.f_s {
            for &v in h.bins() {
                put_f64(&mut out, v);
            }
        }
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<SefState, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err("not a filter snapshot".into());
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(format!("unsupported snapshot version {version}"));
        }
        let home = (r.u32()? as usize, r.u32()? as usize);
        let lambda = r.f64()?;
        let init_pos_sigma = r.f64()?;
        let init_vel_sigma = r.f64()?;
        let reseeds = r.u64()?;
        let (x_s, v_s, s_s, i_s) = (r.pmf()?, r.pmf()?, r.pmf()?, r.pmf()?);
        let priors = SefPriors {
            a0: r.pmf()?,
            r0: r.pmf()?,
            s0: r.pmf()?,
        };
        let n = r.u32()? as usize;
        let mut f_s = Vec::with_capacity(n);
        for _ in 0..n {
            let mut counts = [0.0; BINS];
            for v in counts.iter_mut() {
                *v = r.f64()?;
            }
            f_s.push(FeatureHist::from_counts(&counts).ok_or("empty feature histogram")?);
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after snapshot".into());
        }
        Ok(SefState {
            x_s,
            v_s,
            s_s,
            i_s,
            f_s,
            home,
            lambda,
            init_pos_sigma,
            init_vel_sigma,
            priors: Arc::new(priors),
            reseeds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmf::{argmax, moments};
    use approx::assert_relative_eq;

    fn state(frame: (usize, usize), home: (usize, usize)) -> SefState {
        let params = SefParams::default();
        new_sef(&params, Arc::new(SefPriors::new(&params)), frame, home, 3.0, 4)
    }

    #[test]
    fn prediction_translates_by_velocity() {
        let mut s = state((40, 40), (10, 10));
        s.x_s = Pmf2D::delta(40, 40, 10, 10);
        s.v_s = Pmf2D::delta(33, 33, 16 + 2, 16);
        let mut pri = (*s.priors).clone();
        pri.a0 = Pmf2D::delta(1, 1, 0, 0);
        pri.r0 = Pmf2D::delta(1, 1, 0, 0);
        s.priors = Arc::new(pri);
        let p = s.predict(&ConvPolicy::default()).unwrap();
        assert_eq!(p.x_p.get(12, 10), 1.0);
        assert_eq!(p.s_p, s.s_s);
    }

    #[test]
    fn prediction_adds_covariances() {
        let mut s = state((64, 64), (32, 32));
        s.x_s = gaussian_pmf(64, 64, (2.0, 2.0), (32.0, 32.0));
        s.v_s = gaussian_pmf(33, 33, (1.5, 1.5), (16.0, 16.0));
        let p = s.predict(&ConvPolicy::default()).unwrap();
        let vm = moments(&p.v_p);
        let xm = moments(&p.x_p);
        let xs = moments(&s.x_s);
        // each moment carries the 1/12 cell term once
        let want = (xs.var_x - 1.0 / 12.0) + (vm.var_x - 1.0 / 12.0) + 1.0 / 12.0;
        assert!((xm.var_x / want - 1.0).abs() < 0.05);
    }

    #[test]
    fn matched_filter_peaks_on_object() {
        let mut s = state((80, 80), (40, 40));
        let shape = gaussian_pmf(71, 71, (3.0, 3.0), (35.0, 35.0));
        s.s_s = shape.clone();
        let p = s.predict(&ConvPolicy::default()).unwrap();
        let i_m = ConvPolicy::default().convolve(&Grid2D::delta(80, 80, 20, 30), &shape);
        let (x_m, coasted) = measure_position(&p, &i_m, &s.priors.s0, &ConvPolicy::default());
        assert!(!coasted);
        assert_eq!(argmax(&x_m), (20, 30));
    }

    #[test]
    fn empty_map_coasts() {
        let s = state((30, 30), (15, 15));
        let p = s.predict(&ConvPolicy::default()).unwrap();
        let (x_m, coasted) =
            measure_position(&p, &Grid2D::zeros(30, 30), &s.priors.s0, &ConvPolicy::default());
        assert!(coasted);
        assert_eq!(x_m, p.x_p);
    }

    #[test]
    fn shape_measure_is_a_window() {
        let i_m = Grid2D::from_fn(90, 100, |r, c| ((r * 7 + c * 13) % 23) as f64);
        let anchor = Pmf2D::delta(90, 100, 30, 60);
        let s_m = measure_shape(&i_m, &anchor, 35, &ConvPolicy::default()).unwrap();
        let win = i_m.window(30, 60, 71, 71);
        let total = win.sum();
        for r in 0..71 {
            for c in 0..71 {
                assert_relative_eq!(s_m.get(r, c), win.get(r, c) / total, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gate_examples() {
        let a = gaussian_pmf(11, 11, (2.0, 2.0), (5.0, 5.0));
        assert_relative_eq!(match_and_gate(&a, &a, 0.3).0, 1.0, epsilon = 1e-12);
        let (d1, d2) = (Grid2D::delta(5, 5, 0, 0), Grid2D::delta(5, 5, 4, 4));
        assert_eq!(match_and_gate(&d1, &d2, 0.3), (0.0, 0.0));
        assert_relative_eq!(vigilance(0.6, 0.3), 0.36, epsilon = 1e-15);
        assert_eq!(vigilance(0.29, 0.3), 0.0);
    }

    #[test]
    fn shape_blend_extremes() {
        let s_m = gaussian_pmf(9, 9, (1.0, 2.0), (4.0, 4.0));
        let s_p = gaussian_pmf(9, 9, (2.0, 1.0), (4.0, 4.0));
        assert_eq!(smooth_shape(&s_m, &s_p, 0.0), s_p);
        assert_eq!(smooth_shape(&s_m, &s_p, 1.0), s_m);
        let mid = smooth_shape(&s_m, &s_p, 0.5);
        assert_relative_eq!(mid.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn position_smoothing_matches_triple_product() {
        let a = gaussian_pmf(20, 20, (3.0, 3.0), (8.0, 9.0));
        let b = gaussian_pmf(20, 20, (2.0, 4.0), (10.0, 10.0));
        let c = gaussian_pmf(20, 20, (5.0, 5.0), (12.0, 8.0));
        let got = smooth_position(&a, &b, &c).unwrap();
        let raw: Vec<f64> = (0..400)
            .map(|i| a.values()[i] * b.values()[i] * c.values()[i])
            .collect();
        let s: f64 = raw.iter().sum();
        for i in 0..400 {
            assert_relative_eq!(got.values()[i], raw[i] / s, max_relative = 1e-12);
        }
    }

    #[test]
    fn snapshot_roundtrip() {
        let s = state((24, 32), (5, 7));
        let bytes = s.to_snapshot();
        assert_eq!(SefState::from_snapshot(&bytes).unwrap(), s);
        assert!(SefState::from_snapshot(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn reseed_restores_home() {
        let mut s = state((40, 50), (12, 20));
        s.x_s = Pmf2D::delta(40, 50, 0, 0);
        s.reseed();
        assert_eq!(argmax(&s.x_s), (12, 20));
        assert_eq!(s.reseeds, 1);
        assert_eq!(s.s_s, s.priors.s0);
    }
}
