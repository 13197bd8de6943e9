//! Receive delay estimation against the beamsum.
//!
//! The channel data are aligned toward the central image column, summed into
//! a reference trace, smoothed across neighbouring channels and each channel
//! is cross-correlated with the reference. The lag of the normalized
//! cross-correlation peak, refined with a parabola, is the channel's residual
//! delay.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::AberrationProfile;
use crate::beamform::{das, das_channelwise, ApertureMode, DasOptions, Interpolation, RfImage};
use crate::probe::{ImagingGrid, TransducerConfig};
use crate::wavesim::ChannelData;
use crate::{Error, Real, Result};

/// Correlation peaks below this leave the channel at zero delay.
pub const MIN_PEAK_CORRELATION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    #[default]
    Parabolic,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamsumConfig {
    /// Channels averaged on each side of the correlated channel.
    pub adjacent_average_n: usize,
    /// Lag search bound, ns.
    pub max_lag: f64,
    /// Two-way time window `(start, end)` in µs; `None` takes the middle 60%
    /// of the grid depth.
    pub corr_window: Option<(f64, f64)>,
    pub subsample: Subsample,
    /// Fast-time refinement of the aligned traces relative to the sampling
    /// rate.
    pub upsample: usize,
}

impl Default for BeamsumConfig {
    fn default() -> Self {
        Self {
            adjacent_average_n: 4,
            max_lag: 200.0,
            corr_window: None,
            subsample: Subsample::Parabolic,
            upsample: 4,
        }
    }
}

impl BeamsumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lag > 0.0) || !self.max_lag.is_finite() {
            return Err(Error::invalid("max_lag must be > 0"));
        }
        if self.upsample == 0 {
            return Err(Error::invalid("upsample must be >= 1"));
        }
        if let Some((a, b)) = self.corr_window {
            if !(b > a) || a < 0.0 {
                return Err(Error::invalid(
                    "corr_window must be an increasing non-negative interval",
                ));
            }
        }
        Ok(())
    }
}

/// Estimated residual receive delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamsumEstimate {
    /// Zero-mean receive delay errors, ns: positive where the beamforming
    /// delays of that channel are too long relative to the beamsum.
    pub profile: AberrationProfile,
    /// Normalized cross-correlation at the peak, per channel.
    pub peak_correlation: Vec<f64>,
    /// Channels whose peak fell below [`MIN_PEAK_CORRELATION`].
    pub flagged: Vec<usize>,
}

/// Depth window (mm) of the correlation.
fn depth_window(
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    bs: &BeamsumConfig,
) -> Result<(f64, f64)> {
    let c = cfg.c_mm_per_us();
    let (z_first, z_last) = (
        grid.axial_positions[0],
        grid.axial_positions[grid.row_count - 1],
    );
    let (lo, hi) = match bs.corr_window {
        Some((t0, t1)) => (t0 * c / 2.0, t1 * c / 2.0),
        None => {
            let depth = z_last - z_first;
            (z_first + 0.2 * depth, z_first + 0.8 * depth)
        }
    };
    if lo < z_first || hi > z_last || !(hi > lo) {
        return Err(Error::invalid(format!(
            "correlation window {lo:.2}..{hi:.2} mm outside the grid depth {z_first:.2}..{z_last:.2} mm"
        )));
    }
    Ok((lo, hi))
}

/// Estimates the residual receive delay of each channel. `rx_profile` is the
/// receive aberration already applied in the beamforming delays (for data
/// whose aberration was injected on receive); the estimate approximates it
/// with its mean removed.
pub fn estimate_profile_beamsum<T: Real>(
    channel: &ChannelData<T>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    rx_profile: Option<&AberrationProfile>,
    bs: &BeamsumConfig,
) -> Result<BeamsumEstimate> {
    bs.validate()?;
    grid.validate()?;
    let n_el = cfg.num_elements;
    if n_el < 2 * bs.adjacent_average_n + 1 {
        return Err(Error::invalid(format!(
            "{n_el} elements cannot average {} neighbours on each side",
            bs.adjacent_average_n
        )));
    }
    let (lo, hi) = depth_window(cfg, grid, bs)?;
    // Fine axial sampling so integer lags resolve a fraction of a sample.
    let c = cfg.c_mm_per_us();
    let dt_us = 1.0 / (cfg.sampling_frequency * bs.upsample as f64);
    let dz = c * dt_us / 2.0;
    let max_lag = (bs.max_lag * 1e-3 / dt_us).ceil() as usize;
    let lags = 2 * max_lag + 1;
    let core_rows = ((hi - lo) / dz).floor() as usize + 1;
    let rows = core_rows + 2 * max_lag;
    let z0 = lo - max_lag as f64 * dz;
    let opts = DasOptions {
        aperture: ApertureMode::Full,
        interpolation: Interpolation::Cubic,
        ..DasOptions::default()
    };
    let x = grid.lateral_positions[grid.column_count / 2];
    let column = ImagingGrid::uniform(x, 0.0, 1, z0, dz, rows)?;
    let stack = das_channelwise(channel, cfg, &column, 0, rx_profile, &opts)?;
    let traces: Vec<Vec<f64>> = (0..n_el)
        .map(|e| stack.data.column(e).iter().map(|v| v.as_f64()).collect())
        .collect();
    let reference: Vec<f64> = (max_lag..max_lag + core_rows)
        .map(|r| traces.iter().map(|t| t[r]).sum())
        .collect();
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(ref_energy > 0.0) {
        return Err(Error::numerical(
            "beamsum reference is zero in the correlation window",
        ));
    }

    let nb = bs.adjacent_average_n;
    let per_channel: Vec<(f64, f64)> = (0..n_el)
        .into_par_iter()
        .map(|e| {
            let (a, b) = (e.saturating_sub(nb), (e + nb).min(n_el - 1));
            let w = 1.0 / (b - a + 1) as f64;
            let avg: Vec<f64> = (0..rows)
                .map(|r| w * (a..=b).map(|k| traces[k][r]).sum::<f64>())
                .collect();
            let ncc: Vec<f64> = (0..lags)
                .map(|s| {
                    let seg = &avg[s..s + core_rows];
                    let dot: f64 = seg.iter().zip(&reference).map(|(p, q)| p * q).sum();
                    let en: f64 = seg.iter().map(|p| p * p).sum();
                    if en > 0.0 {
                        dot / (en * ref_energy).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            let best = (0..lags)
                .max_by(|&i, &j| ncc[i].total_cmp(&ncc[j]))
                .unwrap();
            let mut offset = 0.0;
            if bs.subsample == Subsample::Parabolic && best > 0 && best + 1 < lags {
                let (y0, y1, y2) = (ncc[best - 1], ncc[best], ncc[best + 1]);
                let den = y0 - 2.0 * y1 + y2;
                if den < 0.0 {
                    offset = (0.5 * (y0 - y2) / den).clamp(-0.5, 0.5);
                }
            }
            // avg(t + L) matches ref(t) at L = best - max_lag, so the
            // channel's delays exceed the reference's by -L.
            let lag = -(best as f64 + offset - max_lag as f64) * dt_us * 1e3;
            (lag, ncc[best])
        })
        .collect();

    let mut delays = Vec::with_capacity(n_el);
    let mut peak_correlation = Vec::with_capacity(n_el);
    let mut flagged = Vec::new();
    for (e, &(lag, peak)) in per_channel.iter().enumerate() {
        peak_correlation.push(peak);
        if peak < MIN_PEAK_CORRELATION {
            flagged.push(e);
            delays.push(0.0);
        } else {
            delays.push(lag);
        }
    }
    if !flagged.is_empty() {
        warn!(
            "{} channels below the correlation threshold were set to zero delay",
            flagged.len()
        );
    }
    let profile = AberrationProfile {
        delays,
        pitch: cfg.pitch,
    }
    .mean_removed();
    Ok(BeamsumEstimate {
        profile,
        peak_correlation,
        flagged,
    })
}

/// Receive-only correction: estimates the residual delays and beamforms
/// again with them subtracted from the receive delays.
pub fn correct_beamsum<T: Real>(
    channel: &ChannelData<T>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    rx_profile: Option<&AberrationProfile>,
    bs: &BeamsumConfig,
) -> Result<(RfImage<T>, BeamsumEstimate)> {
    let estimate = estimate_profile_beamsum(channel, cfg, grid, rx_profile, bs)?;
    let applied = match rx_profile {
        Some(p) => p.minus(&estimate.profile)?,
        None => estimate.profile.scaled(-1.0),
    };
    let mut img = das(channel, cfg, grid, Some(&applied), &DasOptions::default())?;
    img.provenance.rx_profile = rx_profile.filter(|p| !p.is_zero()).cloned();
    img.provenance.correction = Some("beamsum".into());
    Ok((img, estimate))
}
