//! Point-based deraining for event cameras.
//!
//! The crate turns a raw event stream into a windowed 4D event cloud,
//! serializes it along space-filling curves and classifies every event as
//! background or rain with a network built from a spatio-temporal
//! decoupling front-end and multi-scale selective state-space blocks.
//!
//! Everything here is pure computation over `alloc` collections. File
//! formats, checkpoints and the command-line driver live in the companion
//! `evderain` crate.
//!
//! Module map:
//!
//! - [`events`]: event records, temporal windows and the normalized cloud
//! - [`curves`]: Morton and Hilbert keys and the four scan modes
//! - [`autodiff`]: dense fp64 tensors with a reverse-mode tape
//! - [`fft`]: radix-2 complex FFT used by the spectral loss and analyzer
//! - [`ssm`]: the selective scan kernel (reference and blocked)
//! - [`model`]: network configuration, parameters and forward passes
//! - [`loss_metrics`]: cross-entropy, the frequency regularizer, SR/NR/DA
//! - [`raingen`]: synthetic rain and KNN auto-labeling
//! - [`baselines`]: two classical filters for comparison
//! - [`train`]: AdamW and the gradient-accumulating training step

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod baselines;
pub mod curves;
pub mod error;
pub mod events;
pub mod fft;
pub mod loss_metrics;
pub mod model;
pub mod raingen;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
