//! Online multi-object detection, tracking and recognition with shape
//! estimating filters under competitive attention.

pub mod cactus;
pub mod classify;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod pipeline;
pub mod pmf;
pub mod recognition;
pub mod sef;
pub mod scenegen;
pub mod select;
