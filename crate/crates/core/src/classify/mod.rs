//! Object classification: a shallow convolutional network on image patches
//! and an ensemble of single hidden layer networks over tracker state.

mod linalg;
mod model_io;
mod patch;
mod scnn;
mod slfn;

pub use linalg::{default_ridge, one_hot, train_output_weights, RandomLayer};
pub use model_io::{read_ensemble, read_scnn, write_ensemble, write_scnn};
pub use patch::{crop_patch, extract_patch};
pub use scnn::{argmax_lowest, scnn_forward, ScnnConfig, ScnnModel};
pub use slfn::{
    assemble_slfn_features, base_features, build_slfn_training_set, ensemble_predict, expand_pairs, slfn_forward,
    softmax, Ensemble, FeatNorm, SefSample, SlfnConfig, SlfnModel, SlfnTrainingSet,
};
