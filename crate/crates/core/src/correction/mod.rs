//! Aberration correction of plane-wave channel data.

pub mod beamsum;
pub mod fxpf;

pub use beamsum::{
    correct_beamsum, estimate_profile_beamsum, BeamsumConfig, BeamsumEstimate, Subsample,
};
pub use fxpf::{correct_fxpf, fxpf_filter_stack};
