//! Image-quality metrics on the linear envelope: contrast, speckle SNR,
//! generalized CNR and lateral FWHM, plus summary statistics.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::probe::ImagingGrid;
use crate::{Error, Field, Real, Result};

/// Contrast reported for a target with zero mean envelope, dB.
pub const CONTRAST_CAP_DB: f64 = 100.0;
pub const GCNR_BINS: usize = 256;
/// Lateral half span of the FWHM profile, mm.
pub const FWHM_SPAN_MM: f64 = 4.0;
/// Axial half window searched for the target row, mm.
pub const FWHM_AXIAL_WINDOW_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Geometry {
    Disk {
        x: f64,
        z: f64,
        radius: f64,
    },
    Annulus {
        x: f64,
        z: f64,
        inner: f64,
        outer: f64,
    },
    Rect {
        x_min: f64,
        x_max: f64,
        z_min: f64,
        z_max: f64,
    },
}

impl Geometry {
    pub fn contains(&self, px: f64, pz: f64) -> bool {
        match *self {
            Geometry::Disk { x, z, radius } => {
                (px - x).powi(2) + (pz - z).powi(2) <= radius * radius
            }
            Geometry::Annulus { x, z, inner, outer } => {
                let d2 = (px - x).powi(2) + (pz - z).powi(2);
                d2 >= inner * inner && d2 <= outer * outer
            }
            Geometry::Rect {
                x_min,
                x_max,
                z_min,
                z_max,
            } => px >= x_min && px <= x_max && pz >= z_min && pz <= z_max,
        }
    }
}

/// Target and background regions of one measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub target: Geometry,
    pub background: Geometry,
}

impl RegionSpec {
    /// Disk of the cyst radius against the annulus between 1.1 and 1.5 radii.
    pub fn cyst(x: f64, z: f64, radius: f64) -> Self {
        Self {
            target: Geometry::Disk { x, z, radius },
            background: Geometry::Annulus {
                x,
                z,
                inner: 1.1 * radius,
                outer: 1.5 * radius,
            },
        }
    }
}

/// Envelope values at pixel centres inside `geom`.
pub fn region_pixels<T: Real>(env: &Field<T>, grid: &ImagingGrid, geom: &Geometry) -> Vec<f64> {
    let mut out = Vec::new();
    for (c, &x) in grid.lateral_positions.iter().enumerate() {
        for (r, &z) in grid.axial_positions.iter().enumerate() {
            if geom.contains(x, z) {
                out.push(env.get(r, c).as_f64());
            }
        }
    }
    out
}

fn check_shape<T: Real>(env: &Field<T>, grid: &ImagingGrid) -> Result<()> {
    if env.shape() != (grid.row_count, grid.column_count) {
        return Err(Error::invalid("envelope does not match the grid"));
    }
    Ok(())
}

fn split<T: Real>(
    env: &Field<T>,
    grid: &ImagingGrid,
    region: &RegionSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shape(env, grid)?;
    let mut overlap = false;
    let mut t = Vec::new();
    let mut b = Vec::new();
    for (c, &x) in grid.lateral_positions.iter().enumerate() {
        for (r, &z) in grid.axial_positions.iter().enumerate() {
            let (in_t, in_b) = (
                region.target.contains(x, z),
                region.background.contains(x, z),
            );
            overlap |= in_t && in_b;
            if in_t {
                t.push(env.get(r, c).as_f64());
            } else if in_b {
                b.push(env.get(r, c).as_f64());
            }
        }
    }
    if overlap {
        return Err(Error::invalid("target and background regions overlap"));
    }
    if t.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "target or background region holds no pixels",
        ));
    }
    Ok((t, b))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    pub db: f64,
    /// The target mean was zero and `db` holds the cap.
    pub capped: bool,
}

/// `-20 log10(μ_t / μ_b)` from target and background samples.
pub fn contrast_of(target: &[f64], background: &[f64]) -> Result<Contrast> {
    if target.is_empty() || background.is_empty() {
        return Err(Error::invalid("empty region"));
    }
    let (mt, mb) = (mean(target), mean(background));
    if !(mb > 0.0) || mt < 0.0 {
        return Err(Error::numerical(
            "background mean must be > 0 and target mean >= 0",
        ));
    }
    if mt == 0.0 {
        return Ok(Contrast {
            db: CONTRAST_CAP_DB,
            capped: true,
        });
    }
    Ok(Contrast {
        db: -20.0 * (mt / mb).log10(),
        capped: false,
    })
}

pub fn contrast<T: Real>(
    env: &Field<T>,
    grid: &ImagingGrid,
    region: &RegionSpec,
) -> Result<Contrast> {
    let (t, b) = split(env, grid, region)?;
    contrast_of(&t, &b)
}

/// Mean over population standard deviation.
pub fn speckle_snr_of(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid("speckle SNR needs at least two pixels"));
    }
    let m = mean(values);
    let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::numerical("constant region has no speckle SNR"));
    }
    Ok(m / sd)
}

pub fn speckle_snr<T: Real>(
    env: &Field<T>,
    grid: &ImagingGrid,
    background: &Geometry,
) -> Result<f64> {
    check_shape(env, grid)?;
    speckle_snr_of(&region_pixels(env, grid, background))
}

/// `1 - Σ min(h_t, h_b)` with both histograms on `bins` shared bins spanning
/// the union's range, each normalised to sum one.
pub fn gcnr_of(target: &[f64], background: &[f64], bins: usize) -> Result<f64> {
    if target.is_empty() || background.is_empty() {
        return Err(Error::invalid("empty region"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins must be > 0"));
    }
    if target.len() < 100 || background.len() < 100 {
        warn!(
            "gCNR on small regions ({} / {} pixels) is noisy",
            target.len(),
            background.len()
        );
    }
    let lo = target
        .iter()
        .chain(background)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = target
        .iter()
        .chain(background)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let hist = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &x in v {
            let k = if hi > lo {
                (((x - lo) / (hi - lo)) * bins as f64).floor() as usize
            } else {
                0
            };
            h[k.min(bins - 1)] += 1.0;
        }
        let n = v.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ht, hb) = (hist(target), hist(background));
    let overlap: f64 = ht.iter().zip(&hb).map(|(a, b)| a.min(*b)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

pub fn gcnr<T: Real>(env: &Field<T>, grid: &ImagingGrid, region: &RegionSpec) -> Result<f64> {
    let (t, b) = split(env, grid, region)?;
    gcnr_of(&t, &b, GCNR_BINS)
}

/// Full width at half maximum of a sampled profile around its global peak,
/// with linear interpolation of the crossings.
pub fn fwhm_of_profile(positions: &[f64], values: &[f64]) -> Result<f64> {
    if positions.len() != values.len() || values.len() < 3 {
        return Err(Error::invalid(
            "profile needs at least three matching samples",
        ));
    }
    let peak = (0..values.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let half = values[peak] / 2.0;
    if !(half > 0.0) {
        return Err(Error::numerical("profile has no positive peak"));
    }
    let cross = |i: usize, j: usize| {
        // values[i] >= half > values[j]
        positions[i] + (positions[j] - positions[i]) * (values[i] - half) / (values[i] - values[j])
    };
    let left = (1..=peak)
        .rev()
        .find(|&i| values[i - 1] < half)
        .map(|i| cross(i, i - 1));
    let right = (peak..values.len() - 1)
        .find(|&i| values[i + 1] < half)
        .map(|i| cross(i, i + 1));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::numerical("half maximum not reached inside the span")),
    }
}

/// Lateral FWHM (mm) of a point target near `(x, z)`: the row with the
/// largest envelope within ±1 mm axially (and ±`span_mm` laterally) gives
/// the lateral profile, restricted to ±`span_mm` around `x`.
pub fn fwhm_lateral<T: Real>(
    env: &Field<T>,
    grid: &ImagingGrid,
    point: (f64, f64),
    span_mm: f64,
) -> Result<f64> {
    check_shape(env, grid)?;
    let (x, z) = point;
    let cols: Vec<usize> = (0..grid.column_count)
        .filter(|&c| (grid.lateral_positions[c] - x).abs() <= span_mm)
        .collect();
    let rows: Vec<usize> = (0..grid.row_count)
        .filter(|&r| (grid.axial_positions[r] - z).abs() <= FWHM_AXIAL_WINDOW_MM)
        .collect();
    if cols.len() < 3 || rows.is_empty() {
        return Err(Error::invalid("point lies outside the grid"));
    }
    let mut best = (f64::NEG_INFINITY, rows[0]);
    for &r in &rows {
        for &c in &cols {
            let v = env.get(r, c).as_f64();
            if v > best.0 {
                best = (v, r);
            }
        }
    }
    let row = best.1;
    let positions: Vec<f64> = cols.iter().map(|&c| grid.lateral_positions[c]).collect();
    let values: Vec<f64> = cols.iter().map(|&c| env.get(row, c).as_f64()).collect();
    fwhm_of_profile(&positions, &values)
}

/// Box-plot statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Summary of the finite values; `None` when there are none.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Summary {
        count: v.len(),
        mean: mean(&v),
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        min: v[0],
        max: v[v.len() - 1],
    })
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let d = (va * vb).sqrt();
    (d > 0.0).then(|| cov / d)
}
