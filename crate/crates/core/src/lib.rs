//! Evidential voxel segmentation with subjective-logic uncertainty.
//!
//! A network emits per-class evidence through softplus; evidence
//! parameterizes a Dirichlet per voxel, giving class probabilities and an
//! explicit uncertainty mass. The crate covers the pieces needed to train
//! and evaluate such a model at desk scale:
//!
//! * [`volume`] and [`rng`]: dense multi-channel volumes and seeded noise;
//! * [`subjective_logic`]: evidence, Dirichlet fields and opinions;
//! * [`losses`] and [`special`]: the evidential objective with analytic
//!   gradients, plus digamma, trigamma and log-gamma;
//! * [`backbone`]: a three-layer 3D convolutional network and its trainer;
//! * [`phantom`]: seeded synthetic multi-modal tumour volumes;
//! * [`metrics`]: Dice, normalized entropy, calibration error and
//!   uncertainty-error overlap;
//! * [`volio`]: binary volume and checkpoint formats, CSV and SVG output;
//! * [`harness`]: the generate, train, eval, sweep and selfcheck commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod special;
pub mod subjective_logic;
pub mod volio;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Dims, LabelVolume, Volume};
