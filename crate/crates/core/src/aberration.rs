//! Near-field phase-screen aberration profiles: one delay error per element.
//!
//! A profile is characterised by its strength (RMS delay, ns) and its
//! correlation length (FWHM of the autocorrelation, mm). Random profiles are
//! Gaussian-smoothed white noise, with the smoothing width searched until the
//! measured correlation length hits the target and the amplitude rescaled to
//! the exact target strength.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::probe::TransducerConfig;
use crate::seed::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AberrationProfile {
    /// Delay error per element, ns.
    pub delays: Vec<f64>,
    /// Element spacing, mm.
    pub pitch: f64,
}

impl AberrationProfile {
    pub fn zeros(n: usize, pitch: f64) -> Self {
        Self {
            delays: vec![0.0; n],
            pitch,
        }
    }

    pub fn zeros_for(cfg: &TransducerConfig) -> Self {
        Self::zeros(cfg.num_elements, cfg.pitch)
    }

    pub fn constant(n: usize, pitch: f64, delay_ns: f64) -> Self {
        Self {
            delays: vec![delay_ns; n],
            pitch,
        }
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.delays.iter().all(|&d| d == 0.0)
    }

    /// Delay of element `n` in µs.
    #[inline]
    pub fn delay_us(&self, n: usize) -> f64 {
        self.delays[n] * 1e-3
    }

    pub fn max_abs(&self) -> f64 {
        self.delays.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn scaled(&self, gamma: f64) -> Self {
        Self {
            delays: self.delays.iter().map(|d| d * gamma).collect(),
            pitch: self.pitch,
        }
    }

    /// Element-wise `self - other`.
    pub fn minus(&self, other: &AberrationProfile) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::invalid("profile lengths differ"));
        }
        Ok(Self {
            delays: self
                .delays
                .iter()
                .zip(&other.delays)
                .map(|(a, b)| a - b)
                .collect(),
            pitch: self.pitch,
        })
    }

    pub fn mean(&self) -> f64 {
        self.delays.iter().sum::<f64>() / self.len().max(1) as f64
    }

    pub fn mean_removed(&self) -> Self {
        let m = self.mean();
        Self {
            delays: self.delays.iter().map(|d| d - m).collect(),
            pitch: self.pitch,
        }
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::invalid(format!(
                "profile has {} delays, array has {n} elements",
                self.len()
            )));
        }
        if self.delays.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("profile has non-finite delays"));
        }
        Ok(())
    }
}

/// Target statistics of a random profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    /// Target RMS delay, ns.
    pub strength: f64,
    /// Target FWHM of the autocorrelation, mm.
    pub correlation_length: f64,
    pub seed: u64,
}

/// RMS of the delays, ns.
pub fn measure_strength(profile: &AberrationProfile) -> f64 {
    if profile.is_empty() {
        return 0.0;
    }
    (profile.delays.iter().map(|d| d * d).sum::<f64>() / profile.len() as f64).sqrt()
}

/// FWHM (mm) of the biased sample autocorrelation, normalised to one at lag
/// zero, with the half-maximum crossing interpolated linearly between lags.
/// A profile whose autocorrelation never drops to one half reports the full
/// aperture length.
pub fn measure_correlation_length(profile: &AberrationProfile) -> Result<f64> {
    let lags = autocorrelation_half_width(&profile.delays)
        .ok_or_else(|| Error::invalid("correlation length of an all-zero profile is undefined"))?;
    Ok(2.0 * lags * profile.pitch)
}

/// Half width (in lags) of the normalised biased autocorrelation at 0.5.
fn autocorrelation_half_width(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let r0: f64 = x.iter().map(|v| v * v).sum();
    if !(r0 > 0.0) {
        return None;
    }
    let mut prev = 1.0;
    for k in 1..n {
        let rk = x[..n - k]
            .iter()
            .zip(&x[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / r0;
        if rk <= 0.5 {
            return Some((k - 1) as f64 + (prev - 0.5) / (prev - rk));
        }
        prev = rk;
    }
    Some(n as f64 / 2.0)
}

const MAX_ATTEMPTS: u64 = 64;
const SEARCH_STEPS: usize = 60;
/// Internal tolerance on the correlation length; the contract is 5%.
const CORR_TOLERANCE: f64 = 0.02;

/// Random profile with the requested strength and correlation length.
///
/// Deterministic in `spec.seed`. Fails when the requested correlation length
/// exceeds half the aperture.
pub fn generate_profile(spec: &ProfileSpec, cfg: &TransducerConfig) -> Result<AberrationProfile> {
    let n = cfg.num_elements;
    if n < 8 {
        return Err(Error::invalid(
            "profile generation needs at least 8 elements",
        ));
    }
    if !(spec.strength >= 0.0) || !spec.strength.is_finite() {
        return Err(Error::invalid("strength must be >= 0"));
    }
    if !(spec.correlation_length > 0.0) {
        return Err(Error::invalid("correlation_length must be > 0"));
    }
    if spec.correlation_length > cfg.aperture_length() / 2.0 {
        return Err(Error::invalid(format!(
            "correlation length {} mm exceeds half the {} mm aperture",
            spec.correlation_length,
            cfg.aperture_length()
        )));
    }
    if spec.strength == 0.0 {
        return Ok(AberrationProfile::zeros(n, cfg.pitch));
    }

    let target = spec.correlation_length / cfg.pitch / 2.0; // half width in lags
    let sigma_hi = n as f64 / 2.0;
    let sigma_lo = 0.05;
    let pad = (3.0 * sigma_hi).ceil() as usize;

    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[attempt]));
        let noise: Vec<f64> = (0..n + 2 * pad)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let width = |sigma: f64| {
            let p = smooth(&noise, n, pad, sigma);
            autocorrelation_half_width(&p).unwrap_or(0.0)
        };
        let (mut lo, mut hi) = (sigma_lo, sigma_hi);
        if width(lo) > target || width(hi) < target {
            continue;
        }
        for _ in 0..SEARCH_STEPS {
            let mid = 0.5 * (lo + hi);
            if width(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (best, best_w) = [lo, hi]
            .into_iter()
            .map(|s| (s, width(s)))
            .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
            .unwrap();
        if (best_w - target).abs() > CORR_TOLERANCE * target {
            continue;
        }
        let mut delays = smooth(&noise, n, pad, best);
        let rms = (delays.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
        if !(rms > 0.0) {
            continue;
        }
        let gain = spec.strength / rms;
        for d in &mut delays {
            *d *= gain;
        }
        return Ok(AberrationProfile {
            delays,
            pitch: cfg.pitch,
        });
    }
    Err(Error::numerical(format!(
        "no realisation matched correlation length {} mm within {}%",
        spec.correlation_length,
        CORR_TOLERANCE * 100.0
    )))
}

/// Gaussian smoothing of the padded noise, cropped to the `n` centre samples.
fn smooth(noise: &[f64], n: usize, pad: usize, sigma: f64) -> Vec<f64> {
    let half = ((3.0 * sigma).ceil() as usize).min(pad);
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|j| {
            let x = j as f64 - half as f64;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    (0..n)
        .map(|i| {
            let start = pad + i - half;
            kernel
                .iter()
                .zip(&noise[start..start + kernel.len()])
                .map(|(k, v)| k * v)
                .sum()
        })
        .collect()
}
