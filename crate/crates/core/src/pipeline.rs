//! Frame-by-frame tracking: feature extraction followed by the competitive
//! tracker, with outputs mapped back to input pixel coordinates.

use crate::cactus::{Cactus, CactusConfig, TrackFrameOutput};
use crate::error::FeatureError;
use crate::features::{FeatureExtractor, FeatureStack, FilterBank, Frame, MhiParams, PreprocessParams, PreprocessedFrame};
use crate::pmf::OrientedBox;

/// Maps a box on a grid downsampled by `factor` back to input pixels.
pub fn upscale_box(b: &OrientedBox, factor: usize) -> OrientedBox {
    let f = factor as f64;
    let off = (f - 1.0) / 2.0;
    OrientedBox {
        cx: b.cx * f + off,
        cy: b.cy * f + off,
        half_len: b.half_len * f,
        half_wid: b.half_wid * f,
        angle: b.angle,
    }
}

/// Maps an input pixel position `(x, y)` to the downsampled grid.
pub fn downscale_point(x: f64, y: f64, factor: usize) -> (f64, f64) {
    let f = factor as f64;
    let off = (f - 1.0) / 2.0;
    ((x - off) / f, (y - off) / f)
}

pub struct Tracker {
    extractor: FeatureExtractor,
    cactus: Option<Cactus>,
    config: CactusConfig,
}

/// Everything produced for one frame.
pub struct TrackedFrame {
    pub outputs: Vec<TrackFrameOutput>,
    pub features: FeatureStack,
    pub preprocessed: PreprocessedFrame,
}

impl Tracker {
    pub fn new(config: CactusConfig, bank: FilterBank, preprocess: PreprocessParams, mhi: MhiParams) -> Self {
        Tracker {
            extractor: FeatureExtractor::new(bank, preprocess, mhi),
            cactus: None,
            config,
        }
    }

    pub fn downsample(&self) -> usize {
        self.extractor.preprocess.downsample.max(1)
    }

    pub fn cactus(&self) -> Option<&Cactus> {
        self.cactus.as_ref()
    }

    /// Tracks one frame; boxes are reported in input pixel coordinates.
    pub fn push(&mut self, frame: &Frame) -> Result<TrackedFrame, TrackError> {
        let (features, preprocessed) = self.extractor.push(frame)?;
        if self.cactus.is_none() {
            let c = Cactus::new(self.config.clone(), features.dims(), features.len())
                .map_err(TrackError::Config)?;
            self.cactus = Some(c);
        }
        let factor = self.downsample();
        let mut outputs = self.cactus.as_mut().unwrap().step(&features);
        for o in &mut outputs {
            o.bbox = upscale_box(&o.bbox, factor);
        }
        Ok(TrackedFrame {
            outputs,
            features,
            preprocessed,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("tracker configuration: {0}")]
    Config(String),
}
