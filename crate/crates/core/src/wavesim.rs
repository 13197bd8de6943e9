//! Full-synthetic-aperture simulation of point-scatterer phantoms and
//! plane-wave synthesis from FSA data.
//!
//! Every (transmit, receive) trace is a sum of pulses, one per scatterer,
//! delayed by the two-way path length and weighted by spherical spreading.
//! Delays are stamped as linearly interpolated impulses on a grid
//! `oversample` times finer than the output, convolved with the pulse and an
//! anti-alias low-pass, and decimated. Only `m <= n` is computed; the other
//! half is the mirror image.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::AberrationProfile;
use crate::io::{self, Sidecar};
use crate::phantom::Phantom;
use crate::probe::{Pulse, TransducerConfig};
use crate::{Error, Field, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Oversampling factor of the stamping grid.
    pub oversample: usize,
    /// Time of the first output sample, µs.
    pub t0: f64,
    /// Output length in samples. `None` sizes the window to hold the
    /// deepest echo.
    pub samples: Option<usize>,
    /// Obliquity weighting `cos θ` at both elements.
    pub directivity: bool,
    /// Half length of the windowed-sinc low-pass, in oversampled taps.
    pub lowpass_half_taps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            oversample: 5,
            t0: 0.0,
            samples: None,
            directivity: false,
            lowpass_half_taps: 40,
        }
    }
}

/// FSA traces, `[tx m][rx n][t]` with time fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FsaData<T> {
    samples: Vec<T>,
    elements: usize,
    len: usize,
    /// Time of the first sample, µs.
    pub t0: f64,
    /// MHz.
    pub sample_rate: f64,
}

impl<T: Real> FsaData<T> {
    pub fn from_vec(
        samples: Vec<T>,
        elements: usize,
        len: usize,
        t0: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        if samples.len() != elements * elements * len {
            return Err(Error::invalid("FSA buffer does not match N x N x T"));
        }
        Ok(Self {
            samples,
            elements,
            len,
            t0,
            sample_rate,
        })
    }

    pub fn elements(&self) -> usize {
        self.elements
    }

    /// Samples per trace.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn trace(&self, tx: usize, rx: usize) -> &[T] {
        let start = (tx * self.elements + rx) * self.len;
        &self.samples[start..start + self.len]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        self.len as f64 / self.sample_rate
    }

    pub fn write(&self, json_path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "t0": self.t0, "sample_rate": self.sample_rate });
        let sc = Sidecar::new(
            "fsa_data",
            vec![self.elements, self.elements, self.len],
            &["tx_element", "rx_element", "time"],
            String::new(),
            meta,
        );
        io::write_array(json_path, sc, &self.samples)
    }

    pub fn read(json_path: &Path) -> Result<Self> {
        let (sc, data) = io::read_array::<T>(json_path)?;
        let meta: TimeMeta = parse_meta(json_path, &sc, "fsa_data", 3)?;
        if sc.shape[0] != sc.shape[1] {
            return Err(Error::Format {
                path: json_path.to_owned(),
                msg: "FSA data must be square in elements".into(),
            });
        }
        Self::from_vec(data, sc.shape[0], sc.shape[2], meta.t0, meta.sample_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimeMeta {
    t0: f64,
    sample_rate: f64,
    #[serde(default)]
    tx_aberration: Option<AberrationProfile>,
}

fn parse_meta(path: &Path, sc: &Sidecar, kind: &str, dims: usize) -> Result<TimeMeta> {
    let bad = |msg: String| Error::Format {
        path: path.to_owned(),
        msg,
    };
    if sc.kind != kind || sc.shape.len() != dims {
        return Err(bad(format!(
            "expected a {dims}-D {kind} file, found {} {:?}",
            sc.kind, sc.shape
        )));
    }
    serde_json::from_value(sc.meta.clone()).map_err(|e| bad(e.to_string()))
}

/// Single plane-wave receive data: rows are fast-time samples, columns are
/// receive elements.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData<T> {
    pub samples: Field<T>,
    /// µs.
    pub t0: f64,
    /// MHz.
    pub sample_rate: f64,
    /// Transmit aberration applied at synthesis, for provenance.
    pub tx_aberration: Option<AberrationProfile>,
}

impl<T: Real> ChannelData<T> {
    pub fn elements(&self) -> usize {
        self.samples.cols()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn trace(&self, n: usize) -> &[T] {
        self.samples.column(n)
    }

    pub fn write(&self, json_path: &Path) -> Result<()> {
        let meta = serde_json::to_value(TimeMeta {
            t0: self.t0,
            sample_rate: self.sample_rate,
            tx_aberration: self.tx_aberration.clone(),
        })?;
        let sc = Sidecar::new(
            "channel_data",
            vec![self.elements(), self.len()],
            &["element", "time"],
            String::new(),
            meta,
        );
        io::write_array(json_path, sc, self.samples.as_slice())
    }

    pub fn read(json_path: &Path) -> Result<Self> {
        let (sc, data) = io::read_array::<T>(json_path)?;
        let meta = parse_meta(json_path, &sc, "channel_data", 2)?;
        Ok(Self {
            samples: Field::from_vec(sc.shape[1], sc.shape[0], data),
            t0: meta.t0,
            sample_rate: meta.sample_rate,
            tx_aberration: meta.tx_aberration,
        })
    }

    pub fn validate(&self, cfg: &TransducerConfig) -> Result<()> {
        if self.elements() != cfg.num_elements {
            return Err(Error::invalid(format!(
                "channel data has {} elements, probe has {}",
                self.elements(),
                cfg.num_elements
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::invalid("sample_rate must be > 0"));
        }
        if !self.samples.is_finite() {
            return Err(Error::numerical("channel data has non-finite samples"));
        }
        Ok(())
    }
}

/// Hamming-windowed sinc with cutoff at `cutoff` cycles per sample.
fn lowpass(half: usize, cutoff: f64) -> Vec<f64> {
    let len = 2 * half + 1;
    let taps: Vec<f64> = (0..len)
        .map(|i| {
            let k = i as f64 - half as f64;
            let sinc = if k == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * k).sin() / (PI * k)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (len - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / dc).collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Combined pulse and anti-alias kernel at the oversampled rate, odd length,
/// centred. Scaled so the kernel has the pulse's peak amplitude.
fn stamp_kernel(pulse: &Pulse, cfg: &TransducerConfig, opts: &SimOptions) -> Vec<f64> {
    let rate_hi = cfg.sampling_frequency * opts.oversample as f64;
    let p = pulse.waveform_at(rate_hi);
    if opts.oversample == 1 || opts.lowpass_half_taps == 0 {
        return p;
    }
    let cutoff = 0.5 / opts.oversample as f64;
    convolve(&p, &lowpass(opts.lowpass_half_taps, cutoff))
}

/// Simulates every transmit/receive element pair.
///
/// `samples(m, n, t) = Σ_k A_k / (d_mk d_nk) · pulse(t − (d_mk + d_nk) / c)`.
pub fn simulate_fsa<T: Real>(
    phantom: &Phantom,
    cfg: &TransducerConfig,
    pulse: &Pulse,
    opts: &SimOptions,
) -> Result<FsaData<T>> {
    cfg.validate()?;
    pulse.validate()?;
    phantom.validate()?;
    if phantom.is_empty() {
        return Err(Error::invalid("phantom has no scatterers"));
    }
    if opts.oversample == 0 {
        return Err(Error::invalid("oversample must be >= 1"));
    }
    let n_el = cfg.num_elements;
    let fs = cfg.sampling_frequency;
    let os = opts.oversample;
    let rate_hi = fs * os as f64;
    let c = cfg.c_mm_per_us();
    let xe = cfg.element_positions();

    let kernel = stamp_kernel(pulse, cfg, opts);
    let half = kernel.len() / 2;

    // latest arrival over all pairs: both paths to the farther end element
    let latest = phantom
        .positions
        .iter()
        .map(|&[x, z]| {
            let d = (x - xe[0]).hypot(z).max((x - xe[n_el - 1]).hypot(z));
            2.0 * d / c
        })
        .fold(0.0, f64::max);
    let tail = half as f64 / rate_hi;
    let len = match opts.samples {
        Some(len) => {
            if opts.t0 + len as f64 / fs < latest {
                return Err(Error::invalid(format!(
                    "time window ends at {:.3} µs, deepest echo arrives at {:.3} µs",
                    opts.t0 + len as f64 / fs,
                    latest
                )));
            }
            len
        }
        None => (((latest + tail - opts.t0) * fs).ceil() as usize + 1).max(1),
    };

    // buffer index b holds oversampled time index p = b - half
    let buf_len = (len - 1) * os + 2 * half + 2;
    let amps = &phantom.amplitudes;
    let pos = &phantom.positions;

    let per_tx: Vec<Vec<Vec<T>>> = (0..n_el)
        .into_par_iter()
        .map(|m| {
            let dm: Vec<f64> = pos.iter().map(|&[x, z]| (x - xe[m]).hypot(z)).collect();
            let mut buf = vec![0.0f64; buf_len];
            (m..n_el)
                .map(|n| {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    for (k, &[x, z]) in pos.iter().enumerate() {
                        let a = amps[k];
                        if a == 0.0 {
                            continue;
                        }
                        let dn = (x - xe[n]).hypot(z);
                        let mut w = a / (dm[k] * dn);
                        if opts.directivity {
                            w *= (z / dm[k]) * (z / dn);
                        }
                        let u = ((dm[k] + dn) / c - opts.t0) * rate_hi + half as f64;
                        if !(u >= 0.0) || u >= (buf_len - 1) as f64 {
                            continue;
                        }
                        let i = u.floor();
                        let f = u - i;
                        let i = i as usize;
                        buf[i] += w * (1.0 - f);
                        buf[i + 1] += w * f;
                    }
                    (0..len)
                        .map(|j| {
                            let top = j * os + 2 * half;
                            let s: f64 = kernel
                                .iter()
                                .enumerate()
                                .map(|(q, kq)| kq * buf[top - q])
                                .sum();
                            T::of(s)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut samples = vec![T::zero(); n_el * n_el * len];
    for (m, traces) in per_tx.into_iter().enumerate() {
        for (i, trace) in traces.into_iter().enumerate() {
            let n = m + i;
            samples[(m * n_el + n) * len..(m * n_el + n + 1) * len].copy_from_slice(&trace);
            if n != m {
                samples[(n * n_el + m) * len..(n * n_el + m + 1) * len].copy_from_slice(&trace);
            }
        }
    }
    FsaData::from_vec(samples, n_el, len, opts.t0, fs)
}

/// Plane-wave receive data from FSA traces, each transmit advanced by its
/// delay error: `RF(n, t) = Σ_m fsa(m, n, t + τ_m)`.
///
/// Fractional shifts interpolate linearly; samples shifted in from outside
/// the window are zero. `None` is the aberration-free synthesis.
pub fn synthesize_planewave<T: Real>(
    fsa: &FsaData<T>,
    tx_profile: Option<&AberrationProfile>,
) -> Result<ChannelData<T>> {
    let n_el = fsa.elements();
    let len = fsa.len();
    let shifts: Vec<f64> = match tx_profile {
        Some(p) => {
            p.check_len(n_el)?;
            p.delays
                .iter()
                .map(|d| d * 1e-3 * fsa.sample_rate)
                .collect()
        }
        None => vec![0.0; n_el],
    };
    if let Some(s) = shifts.iter().find(|s| s.abs() >= len as f64) {
        return Err(Error::invalid(format!(
            "transmit shift of {s:.2} samples exceeds the {len}-sample window"
        )));
    }
    let columns: Vec<Vec<T>> = (0..n_el)
        .into_par_iter()
        .map(|n| {
            let mut out = vec![T::zero(); len];
            for (m, &s) in shifts.iter().enumerate() {
                let x = fsa.trace(m, n);
                let i0 = s.floor() as isize;
                let f = s - i0 as f64;
                if f == 0.0 {
                    for (j, o) in out.iter_mut().enumerate() {
                        let src = j as isize + i0;
                        if src >= 0 && (src as usize) < len {
                            *o += x[src as usize];
                        }
                    }
                } else {
                    let (wa, wb) = (T::of(1.0 - f), T::of(f));
                    let at = |i: isize| {
                        if i >= 0 && (i as usize) < len {
                            x[i as usize]
                        } else {
                            T::zero()
                        }
                    };
                    for (j, o) in out.iter_mut().enumerate() {
                        let src = j as isize + i0;
                        *o += wa * at(src) + wb * at(src + 1);
                    }
                }
            }
            out
        })
        .collect();
    Ok(ChannelData {
        samples: Field::from_vec(len, n_el, columns.concat()),
        t0: fsa.t0,
        sample_rate: fsa.sample_rate,
        tx_aberration: tx_profile.filter(|p| !p.is_zero()).cloned(),
    })
}
