use serde::{Deserialize, Serialize};

use crate::FxpfError;

/// Taper applied across the active aperture before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    /// Weight of element `index` in an aperture of `len` elements.
    ///
    /// The Hann taper never reaches zero inside the aperture, so a single
    /// element aperture keeps weight one.
    pub fn weight(self, index: usize, len: usize) -> f64 {
        match self {
            Window::Rect => 1.0,
            Window::Hann => {
                let u = (index as f64 + 1.0) / (len as f64 + 1.0);
                let s = (std::f64::consts::PI * u).sin();
                s * s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FxpfConfig {
    /// Autoregressive order `d` across elements.
    pub ar_order: usize,
    /// Number of estimate-and-predict passes per frequency bin.
    pub iterations: usize,
    /// Diagonal loading as a fraction of the mean diagonal of the normal matrix.
    pub stability_factor: f64,
    /// Axial kernel length in wavelengths of the centre frequency.
    pub kernel_wavelengths: f64,
    /// Fractional overlap between consecutive kernels.
    pub kernel_overlap: f64,
    pub apodization: Window,
    /// Two-way -6 dB fractional bandwidth of the transmit pulse; sets the
    /// band of bins that are modelled.
    pub pulse_fractional_bandwidth: f64,
    /// Bins whose pulse spectrum is more than this many dB below the peak
    /// are zeroed instead of modelled.
    pub band_floor_db: f64,
    /// Extra iterated-Tikhonov refinement solves after the loaded solve.
    pub refinement_steps: usize,
    /// `false` turns the filter into an exact pass-through.
    pub enabled: bool,
}

impl Default for FxpfConfig {
    fn default() -> Self {
        Self {
            ar_order: 2,
            iterations: 3,
            stability_factor: 0.01,
            kernel_wavelengths: 1.0,
            kernel_overlap: 0.5,
            apodization: Window::Hann,
            pulse_fractional_bandwidth: 0.6,
            band_floor_db: 20.0,
            refinement_steps: 2,
            enabled: true,
        }
    }
}

impl FxpfConfig {
    pub fn validate(&self) -> Result<(), FxpfError> {
        let bad = |msg: &str| Err(FxpfError::Config(msg.to_string()));
        if self.ar_order < 1 {
            return bad("ar_order must be >= 1");
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if !(self.stability_factor > 0.0) || !self.stability_factor.is_finite() {
            return bad("stability_factor must be > 0");
        }
        if !(self.kernel_wavelengths > 0.0) {
            return bad("kernel_wavelengths must be > 0");
        }
        if !(0.0..1.0).contains(&self.kernel_overlap) {
            return bad("kernel_overlap must lie in [0, 1)");
        }
        if !(self.pulse_fractional_bandwidth > 0.0 && self.pulse_fractional_bandwidth < 2.0) {
            return bad("pulse_fractional_bandwidth must lie in (0, 2)");
        }
        if !(self.band_floor_db > 0.0) {
            return bad("band_floor_db must be > 0");
        }
        Ok(())
    }

    /// Frequency band (Hz) in which bins are modelled, for a pulse centred at
    /// `center_hz` with a Gaussian spectrum.
    pub fn band_hz(&self, center_hz: f64) -> (f64, f64) {
        let bw = self.pulse_fractional_bandwidth * center_hz;
        let sigma_f = bw / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        let ratio = 10f64.powf(-self.band_floor_db / 20.0);
        let half = sigma_f * (-2.0 * ratio.ln()).sqrt();
        ((center_hz - half).max(0.0), center_hz + half)
    }
}
