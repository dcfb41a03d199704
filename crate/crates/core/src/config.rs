//! Run configuration shared by every command, with the seed split into
//! named random substreams.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cactus::CactusConfig;
use crate::classify::{ScnnConfig, SlfnConfig};
use crate::error::FeatureError;
use crate::eval::T_D;
use crate::features::{FilterBank, MhiParams, PreprocessParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Patches drawn per class for the S-CNN, Clutter included.
    pub patches_per_class: usize,
    /// Minimum distance in input pixels between a Clutter patch center and
    /// any ground-truth box.
    pub clutter_clearance: f64,
    /// Leading frames left out of SLFN training while filters acquire.
    pub burn_in: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            patches_per_class: 500,
            clutter_clearance: 30.0,
            burn_in: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub overlap_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { overlap_threshold: T_D }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Side of the generated Gabor kernels when no bank file is given.
    pub filter_size: usize,
    /// Filter bank file (`.csv` or binary); replaces the generated bank.
    pub filter_bank: Option<PathBuf>,
    pub preprocess: PreprocessParams,
    pub mhi: MhiParams,
    pub tracker: CactusConfig,
    pub scnn: ScnnConfig,
    pub slfn: SlfnConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,
            filter_size: 16,
            filter_bank: None,
            preprocess: PreprocessParams::default(),
            mhi: MhiParams::default(),
            tracker: CactusConfig::default(),
            scnn: ScnnConfig::default(),
            slfn: SlfnConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Independent random streams derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substream {
    Tracker = 1,
    Classifier = 2,
    Scenegen = 3,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Checks values serde cannot.
    pub fn validate(&self) -> Result<(), String> {
        if self.seed > i64::MAX as u64 {
            return Err(format!("seed {} exceeds {}", self.seed, i64::MAX));
        }
        if self.tracker.k == 0 {
            return Err("tracker.k must be at least 1".into());
        }
        if let Some([c, r]) = self.tracker.grid {
            if c * r != self.tracker.k {
                return Err(format!("tracker.grid {c}x{r} does not hold k = {}", self.tracker.k));
            }
        }
        if self.tracker.sef.shape_dim % 2 == 0 {
            return Err("tracker.sef.shape_dim must be odd".into());
        }
        if self.filter_size == 0 || self.preprocess.downsample == 0 {
            return Err("filter_size and preprocess.downsample must be positive".into());
        }
        if self.scnn.pool_cells() == 0 || self.scnn.pool_stride == 0 {
            return Err("scnn pooling does not fit the patch".into());
        }
        if self.scnn.n_classes < 2 || self.scnn.hidden == 0 || self.slfn.state_hidden == 0 || self.slfn.shape_hidden == 0 {
            return Err("classifier sizes must be positive with at least two classes".into());
        }
        if !(self.eval.overlap_threshold > 0.0 && self.eval.overlap_threshold <= 1.0) {
            return Err("eval.overlap_threshold must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn substream(&self, s: Substream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(s as u64);
        rng
    }

    /// A seed drawn from a substream, for components that take a plain seed.
    pub fn substream_seed(&self, s: Substream) -> u64 {
        self.substream(s).next_u64() >> 1
    }

    pub fn filter_bank(&self) -> Result<FilterBank, FeatureError> {
        match &self.filter_bank {
            None => Ok(FilterBank::gabor(self.filter_size)),
            Some(p) if is_csv(p) => FilterBank::load_csv(p),
            Some(p) => FilterBank::load_binary(p),
        }
    }
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_readme_values() {
        let c = RunConfig::default();
        assert_eq!(c.filter_size, 16);
        assert_eq!(c.tracker.sef.shape_dim, 71);
        assert_eq!(c.tracker.k, 112);
        assert_eq!(c.tracker.grid, Some([14, 8]));
        assert_eq!(c.tracker.ellipse_scale, 2.0);
        assert_eq!(c.scnn.patch_size, 61);
        assert_eq!(c.scnn.mask_radius, 30.0);
        assert_eq!(c.scnn.hidden, 12000);
        assert_eq!((c.slfn.state_hidden, c.slfn.shape_hidden), (320, 12800));
        assert_eq!(c.eval.overlap_threshold, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip() {
        let mut c = RunConfig::default();
        c.seed = 99;
        c.tracker.k = 6;
        c.tracker.grid = None;
        c.filter_bank = Some("bank.csv".into());
        c.scnn.jitter_sigma = 7.5;
        let text = c.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_files_take_defaults_and_unknown_keys_fail() {
        let c = RunConfig::from_toml("seed = 3\n[tracker]\nk = 4\ngrid = [2, 2]\n").unwrap();
        assert_eq!((c.seed, c.tracker.k, c.filter_size), (3, 4, 16));
        assert!(RunConfig::from_toml("sed = 3\n").is_err());
        let bad = RunConfig::from_toml("[tracker]\nk = 5\ngrid = [2, 2]\n").unwrap();
        assert!(bad.validate().is_err());
        let auto = RunConfig::from_toml("[tracker]\nk = 5\ngrid = \"auto\"\n").unwrap();
        assert_eq!(auto.tracker.grid, None);
        auto.validate().unwrap();
        assert!(RunConfig::from_toml("[tracker]\ngrid = \"wide\"\n").is_err());
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let c = RunConfig::default();
        let a = c.substream_seed(Substream::Tracker);
        assert_eq!(a, c.substream_seed(Substream::Tracker));
        assert_ne!(a, c.substream_seed(Substream::Classifier));
        assert_ne!(c.substream_seed(Substream::Classifier), c.substream_seed(Substream::Scenegen));
    }
}
