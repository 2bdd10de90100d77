//! The deraining network.
//!
//! A spatio-temporal decoupling front-end ([`stdf_forward`]) embeds every
//! event, a two-level U-Net of multi-scale state-space blocks
//! ([`ms3m_forward`]) mixes features along curve-serialized sequences, and a
//! linear head with softmax yields a (background, rain) probability pair per
//! event.
//!
//! Features are laid out channels-first, `(channels, events)`, so that the
//! 1D convolutions and the scan run along the event axis.
//!
//! Parameters live in [`ModelParams`] keyed by layer path. A forward pass
//! binds them to a [`Tape`] through a [`Session`], which creates the leaf
//! variables lazily and collects batch-norm statistics for the caller.

mod config;
mod ms3m;
mod network;
mod params;
mod stdf;

pub use config::{Ms3mConfig, NetworkConfig, StdfConfig};
pub use ms3m::{ms3m_forward, reversed_aggregation};
pub use network::{forward, network_forward, plan, CloudPlan, Level};
pub use params::{param_specs, Init, ModelParams, ParamSpec, Session, BN_EPS, BN_MOMENTUM, NORM_EPS};
pub use stdf::{point_features, stdf_forward};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

fn linear(tape: &mut Tape, s: &mut Session, path: &str, x: Var) -> Result<Var> {
    let w = s.get(tape, &alloc::format!("{path}.weight"))?;
    let b = s.get(tape, &alloc::format!("{path}.bias"))?;
    tape.linear(x, w, Some(b))
}

fn conv(tape: &mut Tape, s: &mut Session, path: &str, x: Var, bias: bool) -> Result<Var> {
    let w = s.get(tape, &alloc::format!("{path}.weight"))?;
    let b = if bias {
        Some(s.get(tape, &alloc::format!("{path}.bias"))?)
    } else {
        None
    };
    tape.conv1d(x, w, b)
}
