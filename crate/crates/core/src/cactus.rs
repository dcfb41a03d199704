//! Competitive attention across many shape estimating filters.
//!
//! Every frame runs two phases separated by a barrier: all filters predict,
//! then pixel claims (β, from predicted images) and position claims (C,
//! from predicted positions) are formed from the predictions, and each
//! filter selects features, measures and smooths against its own share.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::FeatureStack;
use crate::pmf::{argmax, energy, moments, Backend, ConvPolicy, Grid2D, OrientedBox, Pmf2D, EPS_MASS};
use crate::select::{gather_evidence, select_and_fuse, update_feature_posterior, BinnedStack, Patch};
use crate::sef::{new_sef, SefParams, SefPrediction, SefPriors, SefState, SefUpdate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CactusConfig {
    /// Number of filters.
    pub k: usize,
    /// Seeding grid as `[cols, rows]`; `None` (`"auto"` in TOML) picks a
    /// grid with `k` cells matching the frame aspect.
    #[serde(with = "grid_serde")]
    pub grid: Option<[usize; 2]>,
    /// Features fused per filter and frame.
    pub n_select: usize,
    /// Side of the local background patch as a multiple of the shape domain.
    pub background_scale: usize,
    pub backend: Backend,
    /// Smallest kernel side handled by the spectral backend.
    pub crossover: usize,
    /// Output box half-axes in standard deviations of the shape image.
    pub ellipse_scale: f64,
    pub sef: SefParams,
}

mod grid_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Fixed([usize; 2]),
        Auto(String),
    }

    pub fn serialize<S: Serializer>(grid: &Option<[usize; 2]>, s: S) -> Result<S::Ok, S::Error> {
        match grid {
            Some(g) => Repr::Fixed(*g),
            None => Repr::Auto("auto".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[usize; 2]>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Fixed(g) => Ok(Some(g)),
            Repr::Auto(a) if a == "auto" => Ok(None),
            Repr::Auto(a) => Err(serde::de::Error::custom(format!("grid must be [cols, rows] or \"auto\", got {a:?}"))),
        }
    }
}

impl Default for CactusConfig {
    fn default() -> Self {
        CactusConfig {
            k: 112,
            grid: Some([14, 8]),
            n_select: 6,
            background_scale: 3,
            backend: Backend::Auto,
            crossover: 32,
            ellipse_scale: 2.0,
            sef: SefParams::default(),
        }
    }
}

impl CactusConfig {
    pub fn policy(&self) -> ConvPolicy {
        ConvPolicy {
            backend: self.backend,
            crossover: self.crossover,
        }
    }

    /// `[cols, rows]` of the seeding grid for a frame of `dims = (rows, cols)`.
    pub fn grid_shape(&self, dims: (usize, usize)) -> Result<[usize; 2], String> {
        if self.k == 0 {
            return Err("at least one filter is required".into());
        }
        match self.grid {
            Some([c, r]) if c * r == self.k => Ok([c, r]),
            Some([c, r]) => Err(format!("grid {c}x{r} does not hold k = {} filters", self.k)),
            None => Ok(auto_grid(self.k, dims)),
        }
    }
}

/// Factorization `cols × rows = k` whose cell aspect is closest to square.
fn auto_grid(k: usize, dims: (usize, usize)) -> [usize; 2] {
    let aspect = dims.1 as f64 / dims.0 as f64;
    (1..=k)
        .filter(|c| k % c == 0)
        .map(|c| [c, k / c])
        .min_by(|a, b| {
            let score = |g: &[usize; 2]| ((g[0] as f64 / g[1] as f64) / aspect).ln().abs();
            score(a).total_cmp(&score(b))
        })
        .unwrap()
}

/// Cell centers `(row, col)` of an evenly spaced `[cols, rows]` grid, in
/// row-major order.
pub fn grid_homes(grid: [usize; 2], dims: (usize, usize)) -> Vec<(usize, usize)> {
    let [gc, gr] = grid;
    let (sr, sc) = (dims.0 as f64 / gr as f64, dims.1 as f64 / gc as f64);
    let mut homes = Vec::with_capacity(gc * gr);
    for i in 0..gr {
        for j in 0..gc {
            let r = ((i as f64 + 0.5) * sr).floor() as usize;
            let c = ((j as f64 + 0.5) * sc).floor() as usize;
            homes.push((r.min(dims.0 - 1), c.min(dims.1 - 1)));
        }
    }
    homes
}

/// Seeds `cfg.k` filters on an even grid over a frame of `dims`.
pub fn init_grid(cfg: &CactusConfig, dims: (usize, usize), n_features: usize) -> Result<Vec<SefState>, String> {
    let grid = cfg.grid_shape(dims)?;
    let priors = Arc::new(SefPriors::new(&cfg.sef));
    let cell = (dims.0 as f64 / grid[1] as f64).min(dims.1 as f64 / grid[0] as f64);
    let sigma = cfg.sef.init_pos_sigma.unwrap_or(0.25 * cell).max(1e-3);
    Ok(grid_homes(grid, dims)
        .into_iter()
        .map(|home| new_sef(&cfg.sef, priors.clone(), dims, home, sigma, n_features))
        .collect())
}

/// Per-pixel totals of a family of masses; shares are `own / total`, or
/// `1/K` where the total vanishes.
#[derive(Clone, Debug)]
pub struct ClaimTotals {
    total: Grid2D,
    k: usize,
}

impl ClaimTotals {
    pub fn new<'a>(masses: impl IntoIterator<Item = &'a Pmf2D>) -> Self {
        let mut it = masses.into_iter();
        let first = it.next().expect("at least one mass");
        let mut total: Vec<f64> = first.values().to_vec();
        let mut k = 1;
        for m in it {
            for (t, v) in total.iter_mut().zip(m.values()) {
                *t += v;
            }
            k += 1;
        }
        ClaimTotals {
            total: Grid2D::from_vec(first.rows(), first.cols(), total).expect("sum of masses"),
            k,
        }
    }

    /// The claim share of one member.
    pub fn share(&self, own: &Pmf2D) -> Grid2D {
        let uniform = 1.0 / self.k as f64;
        let data = own
            .values()
            .iter()
            .zip(self.total.values())
            .map(|(&o, &t)| if t > EPS_MASS { o / t } else { uniform })
            .collect();
        Grid2D::from_vec(own.rows(), own.cols(), data).expect("ratios in [0, 1]")
    }
}

/// Pixel-claim attention masks from predicted object images.
pub fn attention_masks(i_p: &[&Pmf2D]) -> Vec<Grid2D> {
    let totals = ClaimTotals::new(i_p.iter().copied());
    i_p.iter().map(|p| totals.share(p)).collect()
}

/// Position-claim association masses from predicted positions.
pub fn association_masses(x_p: &[&Pmf2D]) -> Vec<Grid2D> {
    attention_masks(x_p)
}

/// One filter's output for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFrameOutput {
    pub frame: usize,
    pub sef_id: usize,
    pub bbox: OrientedBox,
    pub energy: f64,
    pub rho: f64,
    pub selected: Vec<usize>,
}

/// The multi-filter tracker.
pub struct Cactus {
    pub cfg: CactusConfig,
    states: Vec<SefState>,
    frame: usize,
    dims: (usize, usize),
}

impl Cactus {
    pub fn new(cfg: CactusConfig, dims: (usize, usize), n_features: usize) -> Result<Self, String> {
        let states = init_grid(&cfg, dims, n_features)?;
        Ok(Cactus {
            cfg,
            states,
            frame: 0,
            dims,
        })
    }

    pub fn from_states(cfg: CactusConfig, states: Vec<SefState>, frame: usize) -> Self {
        let dims = states[0].frame_dims();
        Cactus {
            cfg,
            states,
            frame,
            dims,
        }
    }

    pub fn states(&self) -> &[SefState] {
        &self.states
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn frame_index(&self) -> usize {
        self.frame
    }

    /// Phase one: every filter predicts. Filters whose prediction loses all
    /// mass are reseeded and predict again.
    pub fn predict_all(&mut self) -> Vec<SefPrediction> {
        let policy = self.cfg.policy();
        self.states
            .par_iter_mut()
            .map(|s| match s.predict(&policy) {
                Ok(p) => p,
                Err(_) => {
                    s.reseed();
                    s.predict(&policy).expect("a freshly seeded filter predicts")
                }
            })
            .collect()
    }

    /// Phase two: competition, feature selection, measurement and smoothing.
    pub fn update_all(&mut self, stack: &FeatureStack, preds: &[SefPrediction]) -> Vec<TrackFrameOutput> {
        assert_eq!(stack.dims(), self.dims, "feature maps do not match the tracker domain");
        assert_eq!(preds.len(), self.states.len());
        let binned = BinnedStack::new(stack);
        let beta = ClaimTotals::new(preds.iter().map(|p| &p.i_p));
        let assoc = ClaimTotals::new(preds.iter().map(|p| &p.x_p));
        let policy = self.cfg.policy();
        let n_select = self.cfg.n_select;
        let ellipse_scale = self.cfg.ellipse_scale;
        let patch_side = self.cfg.background_scale * self.cfg.sef.shape_dim;
        let mode = self.cfg.sef.shape_measure;
        let frame = self.frame;
        let dims = self.dims;
        let outputs = self
            .states
            .par_iter_mut()
            .zip(preds.par_iter())
            .enumerate()
            .map(|(id, (s, pred))| {
                if s.f_s.len() != binned.len() {
                    s.f_s = vec![crate::select::FeatureHist::uniform(); binned.len()];
                }
                let (pr, pc) = argmax(&s.x_s);
                let patch = Patch::centered(pr, pc, patch_side, dims.0, dims.1);
                let evidence = gather_evidence(&binned, &s.i_s, &patch, &s.f_s);
                let sel = select_and_fuse(&binned, &evidence, n_select);
                let b = beta.share(&pred.i_p);
                let i_m = sel.fused.product(&b).expect("frame domains");
                let c = assoc.share(&pred.x_p);
                for &k in &sel.chosen {
                    s.f_s[k] = update_feature_posterior(&s.f_s[k], &evidence[k].f_m);
                }
                let rho = match s.update(pred, &i_m, &c, mode, &policy) {
                    SefUpdate::Updated(m) => m.rho,
                    SefUpdate::Reseeded => 0.0,
                };
                TrackFrameOutput {
                    frame,
                    sef_id: id,
                    bbox: moments(&s.i_s).to_box(ellipse_scale),
                    energy: energy(&s.x_s),
                    rho,
                    selected: sel.ids,
                }
            })
            .collect();
        self.frame += 1;
        outputs
    }

    /// Runs both phases on one frame's feature stack.
    pub fn step(&mut self, stack: &FeatureStack) -> Vec<TrackFrameOutput> {
        let preds = self.predict_all();
        self.update_all(stack, &preds)
    }
}
