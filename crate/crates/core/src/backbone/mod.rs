//! Desk-scale 3D segmentation backbone with evidential and softmax heads.

pub mod conv;
mod net;
mod train;

pub use net::{he_uniform_bound, layout, Activation, Head, TinyNet, CLASSES, HIDDEN, IN_CHANNELS, MIN_EXTENT, PARAM_COUNT};
pub use train::{predict, predict_net, sample_loss, train, train_with, Checkpoint, EpochSummary, Prediction, TrainConfig};
