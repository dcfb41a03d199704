//! Candidate feature maps: whitened greyscale through a filter bank, plus a
//! forward motion history image.

mod bank;
mod mhi;
mod preprocess;

pub use bank::{apply_filter_bank, min_max_rescale, BankPlan, FeatureStack, FilterBank};
pub use mhi::{motion_history, MhiParams};
pub use preprocess::{
    downsample, preprocess, whiten_normalize, whitening_response, Frame, PreprocessParams,
    PreprocessedFrame,
};

pub(crate) use bank::stack_from_responses;

use crate::error::FeatureError;
use crate::pmf::Grid2D;

/// Stateful per-sequence extractor: preprocesses each frame, advances the
/// motion history and applies the bank with cached kernel spectra.
pub struct FeatureExtractor {
    pub preprocess: PreprocessParams,
    pub mhi: MhiParams,
    bank: FilterBank,
    plan: Option<BankPlan>,
    prev: Option<PreprocessedFrame>,
    history: Option<Grid2D>,
}

impl FeatureExtractor {
    pub fn new(bank: FilterBank, preprocess: PreprocessParams, mhi: MhiParams) -> Self {
        FeatureExtractor {
            preprocess,
            mhi,
            bank,
            plan: None,
            prev: None,
            history: None,
        }
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    /// Features for the next frame plus its preprocessed form.
    pub fn push(&mut self, frame: &Frame) -> Result<(FeatureStack, PreprocessedFrame), FeatureError> {
        let pre = preprocess(frame, &self.preprocess)?;
        let dims = pre.gray.dims();
        if let Some(prev) = &self.prev {
            if prev.gray.dims() != dims {
                return Err(FeatureError::DimensionMismatch {
                    left: prev.gray.dims(),
                    right: dims,
                });
            }
        }
        let history = match (&self.history, &self.prev) {
            (Some(h), Some(p)) => motion_history(h, &pre.gray, &p.gray, &self.mhi)?,
            _ => Grid2D::zeros(dims.0, dims.1),
        };
        if self.plan.as_ref().map(|p| p.dims()) != Some(dims) {
            self.plan = Some(BankPlan::new(&self.bank, dims.0, dims.1));
        }
        let responses = self.plan.as_ref().unwrap().responses(&pre.gray);
        let stack = stack_from_responses(&responses, &history);
        self.history = Some(history);
        self.prev = Some(pre.clone());
        Ok((stack, pre))
    }
}
