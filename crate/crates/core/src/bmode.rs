//! Envelope detection, log compression, the standardised B-mode transform
//! used by the training loss (with its vector-Jacobian product), the
//! Yeo-Johnson power transform, lateral decimation and axial section
//! partitioning/blending.

use std::path::Path;
use std::sync::Arc;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::beamform::RfImage;
use crate::probe::ImagingGrid;
use crate::{io, Error, Field, Real, Result};

/// Relative floor inside the log of the standardised B-mode transform.
pub const EPS_REL: f64 = 1e-8;

/// Analytic-signal operator for columns of a fixed length: zero-pad to the
/// next power of two, FFT, keep DC and Nyquist, double positive
/// frequencies, drop negative ones, inverse FFT, crop.
pub struct Hilbert<T: Real> {
    len: usize,
    padded: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> Hilbert<T> {
    pub fn new(len: usize) -> Self {
        let padded = len.next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        Self {
            len,
            padded,
            forward: planner.plan_fft_forward(padded),
            inverse: planner.plan_fft_inverse(padded),
        }
    }

    fn mask(&self, spec: &mut [Complex<T>]) {
        let half = self.padded / 2;
        let two = T::of(2.0);
        for (k, s) in spec.iter_mut().enumerate() {
            if k == 0 || k == half {
                continue;
            }
            if k < half {
                *s = *s * two;
            } else {
                *s = Complex::new(T::zero(), T::zero());
            }
        }
    }

    /// `P IF(M F(C y)) / Nf`. On real input this is the analytic signal; on
    /// a complex cotangent it is the adjoint of that real-linear map, since
    /// `F^H = IF` and the mask is real and diagonal.
    fn apply(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.padded];
        buf[..y.len()].copy_from_slice(y);
        self.forward.process(&mut buf);
        self.mask(&mut buf);
        self.inverse.process(&mut buf);
        let norm = T::of(1.0 / self.padded as f64);
        buf.truncate(self.len);
        buf.iter_mut().for_each(|v| *v = *v * norm);
        buf
    }

    pub fn analytic(&self, x: &[T]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.len);
        let y: Vec<_> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.apply(&y)
    }

    /// Adjoint of [`Hilbert::analytic`] as a real-linear map, applied to
    /// a complex cotangent; the real part is the gradient with respect to
    /// the input.
    pub fn adjoint(&self, w: &[Complex<T>]) -> Vec<T> {
        assert_eq!(w.len(), self.len);
        self.apply(w).iter().map(|v| v.re).collect()
    }
}

fn check_rows<T>(f: &Field<T>) -> Result<()>
where
    T: Copy,
{
    if f.rows() < 8 {
        return Err(Error::invalid(format!(
            "envelope needs columns of >= 8 samples, got {}",
            f.rows()
        )));
    }
    Ok(())
}

/// Per-column magnitude of the analytic signal.
pub fn envelope_field<T: Real>(rf: &Field<T>) -> Result<Field<T>> {
    check_rows(rf)?;
    let h = Hilbert::new(rf.rows());
    let cols: Vec<Vec<T>> = (0..rf.cols())
        .into_par_iter()
        .map(|c| h.analytic(rf.column(c)).iter().map(|a| a.norm()).collect())
        .collect();
    Ok(Field::from_vec(rf.rows(), rf.cols(), cols.concat()))
}

pub fn envelope<T: Real>(rf: &RfImage<T>) -> Result<Field<T>> {
    envelope_field(&rf.samples)
}

/// Max-normalised log-compressed envelope, dB, clamped at `-dynamic_range_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage<T> {
    pub db_values: Field<T>,
    pub dynamic_range_db: f64,
}

pub fn log_compress<T: Real>(env: &Field<T>, dynamic_range_db: f64) -> Result<BModeImage<T>> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::invalid("dynamic range must be > 0 dB"));
    }
    let max = env.max_abs();
    if !(max > T::zero()) {
        return Err(Error::invalid("cannot log-compress an all-zero envelope"));
    }
    let floor = T::of(-dynamic_range_db);
    let twenty = T::of(20.0);
    Ok(BModeImage {
        db_values: env.map(|v| {
            let db = twenty * (v / max).log10();
            if db > floor {
                db
            } else {
                floor
            }
        }),
        dynamic_range_db,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BmodeMeta {
    dynamic_range_db: f64,
    min_db: f64,
    max_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<ImagingGrid>,
}

/// Writes an 8-bit grayscale image (black = `-dynamic_range_db`, white =
/// 0 dB) and a JSON sidecar with the dB window next to it. A `.png`
/// extension selects PNG; anything else writes binary PGM.
pub fn export_bmode<T: Real>(
    bmode: &BModeImage<T>,
    grid: Option<&ImagingGrid>,
    path: &Path,
) -> Result<()> {
    let (rows, cols) = bmode.db_values.shape();
    let dr = bmode.dynamic_range_db;
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let db = bmode.db_values.get(r, c).as_f64();
            pixels.push((255.0 * (db + dr) / dr).round().clamp(0.0, 255.0) as u8);
        }
    }
    let file =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let written = if png {
        PngEncoder::new(file).write_image(&pixels, cols as u32, rows as u32, ExtendedColorType::L8)
    } else {
        PnmEncoder::new(file)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&pixels, cols as u32, rows as u32, ExtendedColorType::L8)
    };
    written.map_err(|e| Error::Format {
        path: path.to_owned(),
        msg: e.to_string(),
    })?;
    io::write_json(
        &path.with_extension("json"),
        &BmodeMeta {
            dynamic_range_db: dr,
            min_db: -dr,
            max_db: 0.0,
            grid: grid.cloned(),
        },
    )
}

/// Intermediates of the standardised B-mode transform, kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct BmodeTape<T> {
    /// `(b - mean(b)) / std(b)`.
    pub output: Field<T>,
    analytic: Vec<Vec<Complex<T>>>,
    env: Field<T>,
    floor: T,
    std: T,
}

/// `b = 20 log10(env + ε max(env))`, standardised to zero mean and unit
/// population standard deviation over all pixels.
pub fn standardized_bmode<T: Real>(rf: &RfImage<T>) -> Result<Field<T>> {
    Ok(standardized_bmode_tape(&rf.samples)?.output)
}

pub fn standardized_bmode_tape<T: Real>(rf: &Field<T>) -> Result<BmodeTape<T>> {
    check_rows(rf)?;
    let h = Hilbert::new(rf.rows());
    let analytic: Vec<Vec<Complex<T>>> = (0..rf.cols()).map(|c| h.analytic(rf.column(c))).collect();
    let env = Field::from_vec(
        rf.rows(),
        rf.cols(),
        analytic
            .iter()
            .flat_map(|col| col.iter().map(|a| a.norm()))
            .collect(),
    );
    let max = env.max_abs();
    if !(max > T::zero()) {
        return Err(Error::numerical("standardised B-mode of an all-zero image"));
    }
    let floor = T::of(EPS_REL) * max;
    let twenty = T::of(20.0);
    let b = env.map(|e| twenty * (e + floor).log10());
    let n = T::of(b.as_slice().len() as f64);
    let mean = b.as_slice().iter().copied().sum::<T>() / n;
    let var = b
        .as_slice()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>()
        / n;
    let std = var.sqrt();
    let resolution = T::of(64.0) * T::epsilon() * mean.abs().max(T::one());
    if !(std > resolution) || !std.is_finite() {
        return Err(Error::numerical("standardised B-mode of a constant image"));
    }
    Ok(BmodeTape {
        output: b.map(|v| (v - mean) / std),
        analytic,
        env,
        floor,
        std,
    })
}

impl<T: Real> BmodeTape<T> {
    /// Gradient with respect to the RF input of `Σ g ⊙ output`. The max
    /// inside the log floor is held constant.
    pub fn backward(&self, g: &Field<T>) -> Result<Field<T>> {
        if g.shape() != self.output.shape() {
            return Err(Error::invalid(
                "cotangent shape differs from the B-mode output",
            ));
        }
        let z = self.output.as_slice();
        let gs = g.as_slice();
        let n = T::of(z.len() as f64);
        let g_mean = gs.iter().copied().sum::<T>() / n;
        let gz_mean = gs.iter().zip(z).map(|(&a, &b)| a * b).sum::<T>() / n;
        let db_scale = T::of(20.0 / std::f64::consts::LN_10);
        let (rows, cols) = self.output.shape();
        let h = Hilbert::new(rows);
        let out: Vec<Vec<T>> = (0..cols)
            .into_par_iter()
            .map(|c| {
                let w: Vec<Complex<T>> = (0..rows)
                    .map(|r| {
                        let i = c * rows + r;
                        let gb = (gs[i] - g_mean - z[i] * gz_mean) / self.std;
                        let e = self.env.get(r, c);
                        let ge = gb * db_scale / (e + self.floor);
                        if e > T::zero() {
                            self.analytic[c][r] * (ge / e)
                        } else {
                            Complex::new(T::zero(), T::zero())
                        }
                    })
                    .collect();
                h.adjoint(&w)
            })
            .collect();
        Ok(Field::from_vec(rows, cols, out.concat()))
    }
}

/// Yeo-Johnson power transform of one value.
pub fn yeo_johnson_value(x: f64, lambda: f64) -> f64 {
    const TOL: f64 = 1e-12;
    if x >= 0.0 {
        if lambda.abs() < TOL {
            x.ln_1p()
        } else {
            ((x + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if (lambda - 2.0).abs() < TOL {
        -(-x).ln_1p()
    } else {
        -((1.0 - x).powf(2.0 - lambda) - 1.0) / (2.0 - lambda)
    }
}

pub fn yeo_johnson<T: Real>(x: &Field<T>, lambda: f64) -> Field<T> {
    x.map(|v| T::of(yeo_johnson_value(v.as_f64(), lambda)))
}

/// Gaussian profile log-likelihood of the transformed data.
fn yj_log_likelihood(x: &[f64], lambda: f64) -> f64 {
    let n = x.len() as f64;
    let y: Vec<f64> = x.iter().map(|&v| yeo_johnson_value(v, lambda)).collect();
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let jacobian: f64 = x.iter().map(|v| v.signum() * v.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jacobian
}

/// Maximum-likelihood λ on the grid -2, -1.99, …, 2.
pub fn yeo_johnson_fit<T: Real>(x: &Field<T>) -> Result<f64> {
    let v: Vec<f64> = x.as_slice().iter().map(|t| t.as_f64()).collect();
    if v.len() < 2 || v.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(
            "Yeo-Johnson fit needs at least two finite values",
        ));
    }
    let mut best = (f64::NEG_INFINITY, 1.0);
    for i in 0..=400 {
        let lambda = -2.0 + 0.01 * i as f64;
        let ll = yj_log_likelihood(&v, lambda);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::numerical(
            "Yeo-Johnson likelihood is undefined for constant data",
        ));
    }
    Ok(best.1)
}

/// Divides by the population standard deviation over all pixels.
pub fn normalize_rf<T: Real>(x: &Field<T>) -> Result<Field<T>> {
    let n = T::of(x.as_slice().len() as f64);
    let mean = x.as_slice().iter().copied().sum::<T>() / n;
    let std = (x
        .as_slice()
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<T>()
        / n)
        .sqrt();
    if !(std > T::zero()) {
        return Err(Error::numerical("cannot normalise a constant image"));
    }
    Ok(x.map(|v| v / std))
}

/// Keeps every `factor`-th column, starting with the first.
pub fn downsample_lateral<T: Real>(rf: &RfImage<T>, factor: usize) -> Result<RfImage<T>> {
    if factor == 0 || rf.cols() % factor != 0 {
        return Err(Error::invalid(format!(
            "factor {factor} does not divide {} columns",
            rf.cols()
        )));
    }
    let keep: Vec<usize> = (0..rf.cols()).step_by(factor).collect();
    let samples = Field::from_fn(rf.rows(), keep.len(), |r, c| rf.samples.get(r, keep[c]));
    let grid = ImagingGrid::new(
        keep.iter().map(|&c| rf.grid.lateral_positions[c]).collect(),
        rf.grid.axial_positions.clone(),
    )?;
    let mut out = RfImage::new(samples, grid)?;
    out.provenance = rf.provenance.clone();
    Ok(out)
}

/// Rows `start_row .. start_row + data.rows()` of a taller image.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialSection<T> {
    pub start_row: usize,
    pub data: Field<T>,
}

impl<T> AxialSection<T>
where
    T: Copy,
{
    pub fn end_row(&self) -> usize {
        self.start_row + self.data.rows()
    }
}

/// Splits `rows` into `count` sections whose neighbours share
/// `ceil(overlap · rows)` rows. Returns `(start, end)` row ranges.
pub fn axial_partition(rows: usize, count: usize, overlap: f64) -> Result<Vec<(usize, usize)>> {
    if count == 0 || rows < count || !(0.0..0.5).contains(&overlap) {
        return Err(Error::invalid(
            "need 1 <= count <= rows and overlap in [0, 0.5)",
        ));
    }
    let o = (overlap * rows as f64).ceil() as usize;
    let bounds: Vec<usize> = (0..=count)
        .map(|i| (i * rows + count / 2) / count)
        .collect();
    Ok((0..count)
        .map(|i| {
            let start = if i == 0 {
                0
            } else {
                bounds[i].saturating_sub(o / 2)
            };
            let end = if i + 1 == count {
                rows
            } else {
                (bounds[i + 1] + o - o / 2).min(rows)
            };
            (start, end)
        })
        .collect())
}

pub fn partition_axial<T: Real>(
    img: &Field<T>,
    count: usize,
    overlap: f64,
) -> Result<Vec<AxialSection<T>>> {
    Ok(axial_partition(img.rows(), count, overlap)?
        .into_iter()
        .map(|(s, e)| AxialSection {
            start_row: s,
            data: img.row_slice(s..e),
        })
        .collect())
}

/// Per-section blend weight for each of its rows: 1 outside overlaps,
/// a linear ramp across each overlap so that weights sum to one.
pub fn blend_weights(ranges: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    if ranges.is_empty() || ranges[0].0 != 0 {
        return Err(Error::invalid("sections must start at row 0"));
    }
    for w in ranges.windows(2) {
        let ((s0, e0), (s1, e1)) = (w[0], w[1]);
        if !(s1 > s0 && s1 <= e0 && e1 > e0) {
            return Err(Error::invalid(
                "sections must be ordered, contiguous and overlap at most pairwise",
            ));
        }
    }
    for w in ranges.windows(3) {
        if w[2].0 < w[0].1 {
            return Err(Error::invalid("an overlap spans more than two sections"));
        }
    }
    let mut weights: Vec<Vec<f64>> = ranges.iter().map(|(s, e)| vec![1.0; e - s]).collect();
    for i in 0..ranges.len() - 1 {
        let (s1, e0) = (ranges[i + 1].0, ranges[i].1);
        let len = e0 - s1;
        for r in s1..e0 {
            let up = (r - s1 + 1) as f64 / (len + 1) as f64;
            weights[i + 1][r - s1] = up;
            weights[i][r - ranges[i].0] = 1.0 - up;
        }
    }
    Ok(weights)
}

/// Reassembles sections, cross-fading linearly across the overlaps.
pub fn blend_axial_sections<T: Real>(sections: &[AxialSection<T>]) -> Result<Field<T>> {
    let Some(first) = sections.first() else {
        return Err(Error::invalid("no sections to blend"));
    };
    let cols = first.data.cols();
    if sections.iter().any(|s| s.data.cols() != cols) {
        return Err(Error::invalid("sections have different widths"));
    }
    let ranges: Vec<_> = sections
        .iter()
        .map(|s| (s.start_row, s.end_row()))
        .collect();
    let weights = blend_weights(&ranges)?;
    let rows = ranges.last().unwrap().1;
    let mut out = Field::zeros(rows, cols);
    for (s, w) in sections.iter().zip(&weights) {
        for c in 0..cols {
            let src = s.data.column(c);
            let dst = &mut out.column_mut(c)[s.start_row..s.end_row()];
            for ((d, v), wt) in dst.iter_mut().zip(src).zip(w) {
                *d += *v * T::of(*wt);
            }
        }
    }
    Ok(out)
}
