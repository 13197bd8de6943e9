//! Transducer geometry, acquisition constants, the excitation pulse and the
//! imaging grid every other module works on.
//!
//! Public quantities use millimetres, microseconds and megahertz; the sound
//! speed is in m/s (numerically equal to mm/ms).

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SPACING_TOL_MM: f64 = 1e-9;

/// Linear-array settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerConfig {
    pub num_elements: usize,
    /// Element width + kerf, mm.
    pub pitch: f64,
    pub element_width: f64,
    pub kerf: f64,
    /// MHz.
    pub center_frequency: f64,
    /// MHz.
    pub sampling_frequency: f64,
    /// m/s.
    pub sound_speed: f64,
    pub f_number: f64,
    /// Elevation focus, mm. Recorded only: the simulator is 2-D.
    #[serde(default)]
    pub elevation_focus: f64,
    /// Element height, mm. Recorded only.
    #[serde(default)]
    pub element_height: f64,
}

impl TransducerConfig {
    /// The 128-element L11-5v linear array at 5.208 MHz, sampled at 20.832 MHz,
    /// beamformed with f-number 1.75.
    pub fn default_l11_5v() -> Self {
        Self {
            num_elements: 128,
            pitch: 0.30,
            element_width: 0.27,
            kerf: 0.03,
            center_frequency: 5.208,
            sampling_frequency: 20.832,
            sound_speed: 1540.0,
            f_number: 1.75,
            elevation_focus: 20.0,
            element_height: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::invalid("num_elements must be >= 2"));
        }
        if !((self.element_width + self.kerf - self.pitch).abs() <= SPACING_TOL_MM) {
            return Err(Error::invalid(format!(
                "pitch {} != element_width {} + kerf {}",
                self.pitch, self.element_width, self.kerf
            )));
        }
        if !(self.pitch > 0.0) {
            return Err(Error::invalid("pitch must be > 0"));
        }
        if !(self.center_frequency > 0.0) {
            return Err(Error::invalid("center_frequency must be > 0"));
        }
        if !(self.sampling_frequency >= 2.0 * self.center_frequency) {
            return Err(Error::invalid(
                "sampling_frequency must be >= 2 * center_frequency",
            ));
        }
        if !(self.f_number > 0.0) {
            return Err(Error::invalid("f_number must be > 0"));
        }
        if !(self.sound_speed > 0.0) {
            return Err(Error::invalid("sound_speed must be > 0"));
        }
        Ok(())
    }

    /// Sound speed in mm/µs.
    #[inline]
    pub fn c_mm_per_us(&self) -> f64 {
        self.sound_speed * 1e-3
    }

    /// Wavelength at the centre frequency, mm.
    pub fn wavelength(&self) -> f64 {
        self.c_mm_per_us() / self.center_frequency
    }

    /// Lateral position of element `n`, mm, with the array centred on x = 0.
    #[inline]
    pub fn element_x(&self, n: usize) -> f64 {
        (n as f64 - (self.num_elements as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn element_positions(&self) -> Vec<f64> {
        (0..self.num_elements).map(|n| self.element_x(n)).collect()
    }

    /// Array length, N * pitch, mm.
    pub fn aperture_length(&self) -> f64 {
        self.num_elements as f64 * self.pitch
    }

    /// Index of the element closest to lateral position `x`.
    pub fn nearest_element(&self, x: f64) -> usize {
        let k = (x / self.pitch + (self.num_elements as f64 - 1.0) / 2.0).round();
        k.clamp(0.0, self.num_elements as f64 - 1.0) as usize
    }
}

/// Transmit-to-point-and-back travel time of a 0° plane wave, µs:
/// `(z + sqrt(z² + (x − element_x)²)) / c`.
#[inline]
pub fn two_way_delay(cfg: &TransducerConfig, element_x: f64, x: f64, z: f64) -> f64 {
    let dx = x - element_x;
    (z + (z * z + dx * dx).sqrt()) / cfg.c_mm_per_us()
}

/// Receive elements contributing to pixel `(x, z)`: the nearest element `k`
/// plus `[a / 2]` elements on either side, where `a = z / F` is the aperture
/// expressed in elements and `[.]` rounds to nearest. Clipped to the array.
pub fn aperture_elements(cfg: &TransducerConfig, x: f64, z: f64) -> RangeInclusive<usize> {
    let k = cfg.nearest_element(x);
    let a_elements = (z.max(0.0) / cfg.f_number) / cfg.pitch;
    let half = (a_elements / 2.0).round() as usize;
    let lo = k.saturating_sub(half);
    let hi = (k + half).min(cfg.num_elements - 1);
    lo..=hi
}

/// Beamforming image grid. Positions in mm, strictly increasing and uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagingGrid {
    pub lateral_positions: Vec<f64>,
    pub axial_positions: Vec<f64>,
    pub column_count: usize,
    pub row_count: usize,
}

fn check_axis(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid(format!("{name} is empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("{name} has non-finite entries")));
    }
    if v.len() > 1 {
        let step = v[1] - v[0];
        if !(step > 0.0) {
            return Err(Error::invalid(format!("{name} is not strictly increasing")));
        }
        for (i, w) in v.windows(2).enumerate() {
            let expected = v[0] + step * (i + 1) as f64;
            if !(w[1] > w[0]) || (w[1] - expected).abs() > SPACING_TOL_MM {
                return Err(Error::invalid(format!("{name} is not uniformly spaced")));
            }
        }
    }
    Ok(())
}

impl ImagingGrid {
    pub fn new(lateral_positions: Vec<f64>, axial_positions: Vec<f64>) -> Result<Self> {
        check_axis("lateral_positions", &lateral_positions)?;
        check_axis("axial_positions", &axial_positions)?;
        Ok(Self {
            column_count: lateral_positions.len(),
            row_count: axial_positions.len(),
            lateral_positions,
            axial_positions,
        })
    }

    /// `cols` columns from `x0` in steps of `dx`, `rows` rows from `z0` in steps of `dz`.
    pub fn uniform(x0: f64, dx: f64, cols: usize, z0: f64, dz: f64, rows: usize) -> Result<Self> {
        Self::new(
            (0..cols).map(|i| x0 + dx * i as f64).collect(),
            (0..rows).map(|i| z0 + dz * i as f64).collect(),
        )
    }

    /// Three columns per element (384 for the L11-5v) centred on the array,
    /// rows every `c / (2 fs)` (one fast-time sample) from `z_start` to `z_end`.
    pub fn for_probe(cfg: &TransducerConfig, z_start: f64, z_end: f64) -> Result<Self> {
        let cols = 3 * cfg.num_elements;
        let dx = cfg.pitch / 3.0;
        let x0 = -dx * (cols as f64 - 1.0) / 2.0;
        let dz = cfg.c_mm_per_us() / (2.0 * cfg.sampling_frequency);
        if !(z_end > z_start) {
            return Err(Error::invalid("z_end must exceed z_start"));
        }
        let rows = ((z_end - z_start) / dz).floor() as usize + 1;
        Self::uniform(x0, dx, cols, z_start, dz, rows)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("lateral_positions", &self.lateral_positions)?;
        check_axis("axial_positions", &self.axial_positions)?;
        if self.column_count != self.lateral_positions.len()
            || self.row_count != self.axial_positions.len()
        {
            return Err(Error::invalid("grid counts do not match positions"));
        }
        Ok(())
    }

    /// Lateral spacing (0 for a single column).
    pub fn dx(&self) -> f64 {
        spacing(&self.lateral_positions)
    }

    /// Axial spacing (0 for a single row).
    pub fn dz(&self) -> f64 {
        spacing(&self.axial_positions)
    }

    pub fn nearest_column(&self, x: f64) -> usize {
        nearest(&self.lateral_positions, x)
    }

    pub fn nearest_row(&self, z: f64) -> usize {
        nearest(&self.axial_positions, z)
    }

    /// Single-column grid at lateral position `x` sharing this grid's rows.
    pub fn column_grid(&self, col: usize) -> ImagingGrid {
        ImagingGrid {
            lateral_positions: vec![self.lateral_positions[col]],
            axial_positions: self.axial_positions.clone(),
            column_count: 1,
            row_count: self.row_count,
        }
    }
}

fn spacing(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
    }
}

fn nearest(v: &[f64], x: f64) -> usize {
    if v.len() < 2 {
        return 0;
    }
    let i = ((x - v[0]) / spacing(v)).round();
    i.clamp(0.0, (v.len() - 1) as f64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    GaussianModulatedSine,
}

/// Two-way impulse response used by the simulator: a cosine-phase carrier
/// under a Gaussian envelope, truncated at ±3σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub kind: PulseKind,
    /// MHz.
    pub center_frequency: f64,
    /// Two-way -6 dB fractional bandwidth.
    pub fractional_bandwidth: f64,
    /// MHz.
    pub sample_rate: f64,
}

impl Pulse {
    pub fn new(center_frequency: f64, fractional_bandwidth: f64, sample_rate: f64) -> Result<Self> {
        let p = Self {
            kind: PulseKind::GaussianModulatedSine,
            center_frequency,
            fractional_bandwidth,
            sample_rate,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default pulse for a probe: fractional bandwidth 0.6 at the probe's
    /// centre frequency, sampled at the probe's sampling frequency.
    pub fn for_probe(cfg: &TransducerConfig) -> Self {
        Self {
            kind: PulseKind::GaussianModulatedSine,
            center_frequency: cfg.center_frequency,
            fractional_bandwidth: 0.6,
            sample_rate: cfg.sampling_frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fractional_bandwidth > 0.0 && self.fractional_bandwidth < 2.0) {
            return Err(Error::invalid("fractional_bandwidth must lie in (0, 2)"));
        }
        if !(self.center_frequency > 0.0 && self.sample_rate > 0.0) {
            return Err(Error::invalid("pulse frequencies must be > 0"));
        }
        Ok(())
    }

    /// -6 dB bandwidth, MHz.
    pub fn bandwidth(&self) -> f64 {
        self.fractional_bandwidth * self.center_frequency
    }

    /// Standard deviation of the spectral Gaussian, MHz.
    pub fn sigma_f(&self) -> f64 {
        self.bandwidth() / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }

    /// Standard deviation of the temporal envelope, µs.
    pub fn sigma_t(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.sigma_f())
    }

    /// Half duration of the truncated pulse, µs.
    pub fn half_duration(&self) -> f64 {
        3.0 * self.sigma_t()
    }

    fn envelope(&self, t: f64) -> f64 {
        if t.abs() > self.half_duration() {
            return 0.0;
        }
        let s = self.sigma_t();
        (-(t * t) / (2.0 * s * s)).exp()
    }

    fn carrier(&self, t: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.center_frequency * t).cos()
    }

    /// Envelope-weighted mean of the carrier over `times`; subtracting it
    /// times the envelope leaves a pulse without DC.
    fn dc_offset(&self, times: impl Iterator<Item = f64>) -> f64 {
        let (num, den) = times.fold((0.0, 0.0), |(n, d), t| {
            let e = self.envelope(t);
            (n + e * self.carrier(t), d + e)
        });
        num / den
    }

    /// Continuous-time value at `t` µs from the pulse centre (zero beyond
    /// ±3σ). A transducer passes no DC, and the truncated Gaussian cosine
    /// has a little, so a scaled envelope is removed.
    pub fn value_at(&self, t: f64) -> f64 {
        let h = self.half_duration();
        let steps = 4000;
        let kappa = self.dc_offset((0..=steps).map(|i| -h + 2.0 * h * i as f64 / steps as f64));
        self.envelope(t) * (self.carrier(t) - kappa)
    }

    /// Samples at `sample_rate`, odd length, peak at the centre sample.
    pub fn waveform(&self) -> Vec<f64> {
        self.waveform_at(self.sample_rate)
    }

    /// Samples at `rate_mhz`; the sampled waveform sums to zero.
    pub fn waveform_at(&self, rate_mhz: f64) -> Vec<f64> {
        let half = (self.half_duration() * rate_mhz).floor() as isize;
        let times = || (-half..=half).map(|i| i as f64 / rate_mhz);
        let kappa = self.dc_offset(times());
        times()
            .map(|t| self.envelope(t) * (self.carrier(t) - kappa))
            .collect()
    }
}
