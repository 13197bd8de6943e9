use std::ops::Range;

use num_traits::Zero;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::ar::{predict_across_elements, ArOutcome};
use crate::{FxScalar, FxpfConfig, FxpfError};

/// Fast-time sampling of the stack rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    /// Time between consecutive rows, seconds.
    pub row_interval_s: f64,
    /// Centre frequency of the transmit pulse, Hz.
    pub center_frequency_hz: f64,
}

/// Borrowed aligned stack, element-major: element `e` occupies
/// `data[e * rows .. (e + 1) * rows]`.
#[derive(Debug, Clone, Copy)]
pub struct StackView<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub elements: usize,
    /// Optional per-row active aperture. Elements outside the union of a
    /// kernel's row apertures are passed through untouched.
    pub active: Option<&'a [Range<usize>]>,
}

#[derive(Debug, Clone)]
pub struct Filtered<T> {
    /// Filtered stack, same layout as the input.
    pub data: Vec<T>,
    pub kernels: usize,
    /// Kernels left unfiltered because the aperture was too small or the
    /// normal matrix was singular.
    pub passthrough_kernels: usize,
}

/// Kernel length in rows: the configured number of wavelengths of fast time,
/// rounded to an even count of at least four.
pub fn kernel_length(cfg: &FxpfConfig, sampling: Sampling) -> usize {
    let period_rows = 1.0 / (sampling.center_frequency_hz * sampling.row_interval_s);
    let raw = (cfg.kernel_wavelengths * period_rows).round() as usize;
    let even = raw + raw % 2;
    even.max(4)
}

/// Half-sample-shifted Hann (never zero at the kernel ends), or a flat window
/// when kernels do not overlap.
fn synthesis_window(len: usize, hop: usize) -> Result<Vec<f64>, FxpfError> {
    let window: Vec<f64> = if hop == len {
        vec![1.0; len]
    } else {
        (0..len)
            .map(|i| {
                let s = (std::f64::consts::PI * (i as f64 + 0.5) / len as f64).sin();
                s * s
            })
            .collect()
    };
    // overlap-add of the shifted windows must be flat
    let mut sums = vec![0.0; hop];
    for (i, w) in window.iter().enumerate() {
        sums[i % hop] += w;
    }
    let level = sums[0];
    if level <= 0.0 || sums.iter().any(|s| (s - level).abs() > 1e-9 * level) {
        return Err(FxpfError::Config(format!(
            "window of {len} rows with hop {hop} is not constant-overlap-add"
        )));
    }
    Ok(window.into_iter().map(|w| w / level).collect())
}

/// Runs the prediction filter over an aligned stack.
pub fn filter_stack<T: FxScalar>(
    stack: StackView<'_, T>,
    sampling: Sampling,
    cfg: &FxpfConfig,
) -> Result<Filtered<T>, FxpfError> {
    cfg.validate()?;
    let StackView {
        data,
        rows,
        elements,
        active,
    } = stack;
    if data.len() != rows * elements {
        return Err(FxpfError::Shape {
            len: data.len(),
            rows,
            elements,
        });
    }
    if let Some(a) = active {
        if a.len() != rows {
            return Err(FxpfError::Config(format!(
                "{} active ranges for {rows} rows",
                a.len()
            )));
        }
    }
    let needed = 2 * cfg.ar_order + 1;
    if elements < needed {
        return Err(FxpfError::TooFewElements {
            elements,
            order: cfg.ar_order,
            needed,
        });
    }
    let len = kernel_length(cfg, sampling);
    if rows < len {
        return Err(FxpfError::TooFewRows { rows, kernel: len });
    }
    if !cfg.enabled {
        return Ok(Filtered {
            data: data.to_vec(),
            kernels: 0,
            passthrough_kernels: 0,
        });
    }

    let hop = ((len as f64 * (1.0 - cfg.kernel_overlap)).round() as usize).clamp(1, len);
    let window = synthesis_window(len, hop)?;
    let window: Vec<T> = window.iter().map(|&w| T::from_f64(w).unwrap()).collect();

    let bin_hz = 1.0 / (len as f64 * sampling.row_interval_s);
    let (band_lo, band_hi) = cfg.band_hz(sampling.center_frequency_hz);
    let in_band: Vec<bool> = (0..=len / 2)
        .map(|k| {
            let f = k as f64 * bin_hz;
            f >= band_lo && f <= band_hi
        })
        .collect();

    let mut planner = FftPlanner::<T>::new();
    let forward = planner.plan_fft_forward(len);
    let inverse = planner.plan_fft_inverse(len);
    let stability = T::from_f64(cfg.stability_factor).unwrap();
    let norm = T::from_f64(1.0 / len as f64).unwrap();

    let mut out = vec![T::zero(); data.len()];
    let mut spectra = vec![Complex::<T>::zero(); len * elements];
    let mut bin = Vec::with_capacity(elements);
    let mut kernels = 0;
    let mut passthrough = 0;

    let mut starts: Vec<usize> = (0..=rows - len).step_by(hop).collect();
    if starts.last().is_some_and(|&s| s + len < rows) {
        starts.push(rows - len);
    }
    let mut weight_sum = vec![T::zero(); rows];
    for &start in &starts {
        kernels += 1;
        let row_of = |i: usize| -> Option<usize> { Some(start + i) };
        for (i, w) in window.iter().enumerate() {
            weight_sum[start + i] = weight_sum[start + i] + *w;
        }

        let span = match active {
            None => 0..elements,
            Some(ranges) => {
                let mut lo = elements;
                let mut hi = 0;
                for r in (0..len).filter_map(row_of) {
                    lo = lo.min(ranges[r].start);
                    hi = hi.max(ranges[r].end.min(elements));
                }
                lo..hi.max(lo)
            }
        };

        let mut filtered_kernel = span.len() >= needed;
        if filtered_kernel {
            for e in span.clone() {
                let col = &data[e * rows..(e + 1) * rows];
                let spec = &mut spectra[e * len..(e + 1) * len];
                for (i, s) in spec.iter_mut().enumerate() {
                    *s = Complex::new(row_of(i).map_or(T::zero(), |r| col[r]), T::zero());
                }
                forward.process(spec);
            }
            for k in 0..=len / 2 {
                let mirror = (len - k) % len;
                if !in_band[k] {
                    for e in span.clone() {
                        spectra[e * len + k] = Complex::zero();
                        spectra[e * len + mirror] = Complex::zero();
                    }
                    continue;
                }
                bin.clear();
                bin.extend(span.clone().map(|e| spectra[e * len + k]));
                match predict_across_elements(
                    &mut bin,
                    cfg.ar_order,
                    cfg.iterations,
                    stability,
                    cfg.refinement_steps,
                ) {
                    ArOutcome::Filtered | ArOutcome::Silent => {}
                    ArOutcome::Singular => {
                        filtered_kernel = false;
                        break;
                    }
                }
                for (v, e) in bin.iter().zip(span.clone()) {
                    if k == 0 || 2 * k == len {
                        spectra[e * len + k] = Complex::new(v.re, T::zero());
                    } else {
                        spectra[e * len + k] = *v;
                        spectra[e * len + mirror] = v.conj();
                    }
                }
            }
        }
        if !filtered_kernel {
            passthrough += 1;
        }

        for e in 0..elements {
            let col = &data[e * rows..(e + 1) * rows];
            let dst = &mut out[e * rows..(e + 1) * rows];
            if filtered_kernel && span.contains(&e) {
                let spec = &mut spectra[e * len..(e + 1) * len];
                inverse.process(spec);
                for (i, s) in spec.iter().enumerate() {
                    if let Some(r) = row_of(i) {
                        dst[r] = dst[r] + s.re * norm * window[i];
                    }
                }
            } else {
                for (i, w) in window.iter().enumerate() {
                    if let Some(r) = row_of(i) {
                        dst[r] = dst[r] + col[r] * *w;
                    }
                }
            }
        }
    }
    // interior rows sum to one already; this fixes up the edges
    for e in 0..elements {
        for (v, w) in out[e * rows..(e + 1) * rows].iter_mut().zip(&weight_sum) {
            *v = *v / *w;
        }
    }

    Ok(Filtered {
        data: out,
        kernels,
        passthrough_kernels: passthrough,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampling() -> Sampling {
        // four samples per period, as for a 5.208 MHz pulse at 20.832 MHz
        Sampling {
            row_interval_s: 1.0 / 20.832e6,
            center_frequency_hz: 5.208e6,
        }
    }

    #[test]
    fn one_wavelength_kernel_is_four_rows() {
        assert_eq!(kernel_length(&FxpfConfig::default(), sampling()), 4);
        let cfg = FxpfConfig {
            kernel_wavelengths: 2.4,
            ..Default::default()
        };
        assert_eq!(kernel_length(&cfg, sampling()), 10);
    }

    #[test]
    fn hann_half_overlap_is_cola() {
        let w = synthesis_window(8, 4).unwrap();
        for r in 0..4 {
            assert!((w[r] + w[r + 4] - 1.0).abs() < 1e-12);
            assert!(w[r] > 0.0);
        }
        assert!(synthesis_window(8, 8).is_ok());
        assert!(synthesis_window(8, 5).is_err());
    }

    #[test]
    fn disabled_is_exact_passthrough() {
        let data: Vec<f64> = (0..40 * 7).map(|i| (i as f64 * 0.37).sin()).collect();
        let cfg = FxpfConfig {
            enabled: false,
            ..Default::default()
        };
        let out = filter_stack(
            StackView {
                data: &data,
                rows: 40,
                elements: 7,
                active: None,
            },
            sampling(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.data, data);
    }

    #[test]
    fn shape_errors() {
        let data = vec![0.0f64; 10];
        let view = StackView {
            data: &data,
            rows: 5,
            elements: 2,
            active: None,
        };
        assert!(matches!(
            filter_stack(view, sampling(), &FxpfConfig::default()),
            Err(FxpfError::TooFewElements { .. })
        ));
        let view = StackView {
            data: &data,
            rows: 3,
            elements: 2,
            active: None,
        };
        assert!(matches!(
            filter_stack(view, sampling(), &FxpfConfig::default()),
            Err(FxpfError::Shape { .. })
        ));
    }
}
