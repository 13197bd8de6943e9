//! Frequency-space prediction filtering (FXPF) of aligned array channel data.
//!
//! The input is a stack of delay-aligned channel signals, one fast-time
//! column per array element. The stack is cut into short overlapping axial
//! kernels; inside each kernel every temporal frequency bin is modelled as an
//! autoregressive process across the element axis,
//!
//! ```text
//! X[n + 1](f) = b1 X[n](f) + b2 X[n - 1](f) + ... + bd X[n + 1 - d](f)
//! ```
//!
//! and each element's spectrum is replaced by its prediction from its
//! neighbours. Components that do not follow the spatial model (clutter,
//! incoherent noise, aberration-induced decorrelation) are attenuated.
//!
//! The crate depends only on `rustfft` and `num-traits` so it can be used
//! outside the rest of the workspace.

mod ar;
mod config;
mod filter;

pub use ar::{predict_across_elements, solve_dense, ArOutcome};
pub use config::{FxpfConfig, Window};
pub use filter::{filter_stack, kernel_length, Filtered, Sampling, StackView};

use num_traits::Float;
use rustfft::FftNum;

/// Scalar types the filter runs on (`f32`, `f64`).
pub trait FxScalar: FftNum + Float {}

impl<T: FftNum + Float> FxScalar for T {}

#[derive(Debug, thiserror::Error)]
pub enum FxpfError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stack has {elements} elements but order {order} needs at least {needed}")]
    TooFewElements {
        elements: usize,
        order: usize,
        needed: usize,
    },
    #[error("stack has {rows} rows, shorter than the {kernel}-row kernel")]
    TooFewRows { rows: usize, kernel: usize },
    #[error("stack buffer length {len} does not match {rows} x {elements}")]
    Shape {
        len: usize,
        rows: usize,
        elements: usize,
    },
}
