use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("timestamps not sorted: event {index} has t={t} after t={prev}")]
    UnsortedTimestamps { index: usize, prev: u64, t: u64 },

    #[error("event {index} at ({x}, {y}) outside {width}x{height} sensor")]
    OutOfSensor {
        index: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("cloud contains no events")]
    EmptyCloud,

    #[error("{what} = {value} out of range (limit {limit})")]
    Range {
        what: &'static str,
        value: u64,
        limit: u64,
    },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("non-finite value at step {step} (channel {channel})")]
    NonFinite { step: usize, channel: usize },

    #[error("metric undefined (TB={}, TR={})", .0.tb, .0.tr)]
    UndefinedMetric(crate::loss_metrics::PartialReport),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),
}
