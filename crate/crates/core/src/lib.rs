//! Plane-wave ultrasound phase-aberration toolkit.
//!
//! Synthesises near-field phase-screen aberration profiles, simulates
//! full-synthetic-aperture RF data for point-scatterer phantoms, forms
//! single plane-wave images with delay-and-sum, corrects them with beamsum
//! delay estimation or frequency-space prediction filtering, scores them with
//! contrast, speckle SNR, gCNR and lateral FWHM, and provides the RF/B-mode
//! mixed training loss with analytic gradients plus a small noise2noise
//! trainer.
//!
//! Sample data is generic over [`Real`] (`f32` or `f64`); geometry and
//! profiles are always `f64`.

pub mod aberration;
pub mod beamform;
pub mod bmode;
pub mod correction;
pub mod dataset;
mod error;
mod field;
pub mod io;
pub mod learn;
pub mod metrics;
pub mod phantom;
pub mod probe;
mod scalar;
pub mod seed;
pub mod wavesim;

pub use aberration::{
    generate_profile, measure_correlation_length, measure_strength, AberrationProfile, ProfileSpec,
};
pub use beamform::{das, das_channelwise, AlignedStack, Apodization, DasOptions, RfImage};
pub use bmode::{
    envelope, log_compress, standardized_bmode, yeo_johnson, yeo_johnson_fit, BModeImage,
};
pub use correction::{correct_beamsum, correct_fxpf, estimate_profile_beamsum, BeamsumConfig};
pub use dataset::{build_dataset, run_pipeline, DatasetManifest, ExperimentPlan};
pub use error::{Error, Result};
pub use field::Field;
pub use fxpf::FxpfConfig;
pub use learn::{
    adaptive_mixed_loss, alpha_schedule, mse_loss, train_noise2noise, LossKind, ToyModel, TrainSpec,
};
pub use metrics::{contrast, fwhm_lateral, gcnr, speckle_snr, Geometry, RegionSpec};
pub use phantom::{
    apply_region, contrast_test_phantom, resolution_test_phantom, uniform_speckle, EchoRegionSpec,
    Extent, Feature, Mask, Phantom,
};
pub use probe::{
    aperture_elements, two_way_delay, ImagingGrid, Pulse, PulseKind, TransducerConfig,
};
pub use scalar::Real;
pub use wavesim::{simulate_fsa, synthesize_planewave, ChannelData, FsaData, SimOptions};

pub type FieldF32 = Field<f32>;
pub type FieldF64 = Field<f64>;
pub type RfImageF32 = RfImage<f32>;
pub type RfImageF64 = RfImage<f64>;
pub type ChannelDataF32 = ChannelData<f32>;
pub type ChannelDataF64 = ChannelData<f64>;
pub type FsaDataF32 = FsaData<f32>;
pub type FsaDataF64 = FsaData<f64>;
