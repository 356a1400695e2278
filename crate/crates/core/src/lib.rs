//! Cycle-interactive GAN for unpaired low-light image enhancement and degradation.
//!
//! A degradation generator turns normal-light images into realistic low-light ones, guided
//! by an unpaired low-light reference; an enhancement generator maps them back. Both are
//! trained jointly with two multi-scale discriminators.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod discriminators;
pub mod encoder;
pub mod error;
pub mod generators;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod spectral;
pub mod synthetic;
pub mod training;

pub use cigan_autograd as autograd;
pub use config::{lr_schedule, RunConfig, TrainConfig};
pub use error::{CiganError, Result};
pub use imaging::ImageTensor;
pub use rng::Rng;
