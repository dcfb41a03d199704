//! Normalized 2D mass functions and the kernels every filter equation is
//! built from.

mod conv;
pub(crate) mod fft;
mod grid;
mod shape;

pub use conv::{convolve, correlate_lags, cross_correlate, Backend, ConvPolicy};
pub use grid::{normalize, normalize_owned, Field, Grid2D, Pmf2D, EPS_MASS, MASS_TOLERANCE};
pub use shape::{
    argmax, argmax_delta, energy, gaussian_pmf, moment_ellipse, moments, Moments, OrientedBox,
};
