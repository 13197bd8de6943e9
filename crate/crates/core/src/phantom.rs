//! Point-scatterer phantoms: uniform speckle media, echogenic regions drawn
//! from masks or grayscale templates, point targets, and the two fixed test
//! layouts (anechoic cysts, point-target grid).
//!
//! Coordinates are in mm with `x` centred on the array and `z` measured from
//! the transducer face.

use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::io::{self, Sidecar};
use crate::probe::{Pulse, TransducerConfig};
use crate::seed::{derive_seed, stream};
use crate::{Error, Field, Result};

/// Hypoechoic amplitude weights, -12 dB to -3 dB in power.
pub const HYPOECHOIC_WEIGHTS: (f64, f64) = (0.063, 0.501);
/// Hyperechoic amplitude weights, +3 dB to +12 dB in power.
pub const HYPERECHOIC_WEIGHTS: (f64, f64) = (2.0, 15.8);
pub const POINT_TARGET_COUNT: (usize, usize) = (10, 20);
/// Point-target level above the mean scatterer amplitude, dB.
pub const POINT_TARGET_LEVEL_DB: (f64, f64) = (12.0, 16.0);

/// Axis-aligned phantom box. Laterally centred on `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    /// Lateral size, mm.
    pub lateral: f64,
    /// Axial size, mm.
    pub axial: f64,
    /// Depth of the top edge below the transducer face, mm.
    pub start_depth: f64,
}

impl Default for Extent {
    /// 45 mm wide, 40 mm deep, starting 10 mm below the face.
    fn default() -> Self {
        Self {
            lateral: 45.0,
            axial: 40.0,
            start_depth: 10.0,
        }
    }
}

impl Extent {
    pub fn validate(&self) -> Result<()> {
        if !(self.lateral > 0.0 && self.axial > 0.0 && self.start_depth >= 0.0) {
            return Err(Error::invalid(
                "extent must have positive size and non-negative start depth",
            ));
        }
        Ok(())
    }

    pub fn x_min(&self) -> f64 {
        -self.lateral / 2.0
    }

    pub fn x_max(&self) -> f64 {
        self.lateral / 2.0
    }

    pub fn z_min(&self) -> f64 {
        self.start_depth
    }

    pub fn z_max(&self) -> f64 {
        self.start_depth + self.axial
    }

    pub fn area(&self) -> f64 {
        self.lateral * self.axial
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x_min() && x <= self.x_max() && z >= self.z_min() && z <= self.z_max()
    }
}

/// Known structures in a phantom, kept alongside the scatterers so that
/// metric regions can be derived from the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    Cyst { x: f64, z: f64, radius: f64 },
    Point { x: f64, z: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    /// Scatterer `(x, z)` positions, mm.
    pub positions: Vec<[f64; 2]>,
    pub amplitudes: Vec<f64>,
    pub extent: Extent,
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PhantomMeta {
    extent: Extent,
    features: Vec<Feature>,
}

impl Phantom {
    pub fn empty(extent: Extent) -> Self {
        Self {
            positions: Vec::new(),
            amplitudes: Vec::new(),
            extent,
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.extent.validate()?;
        if self.positions.len() != self.amplitudes.len() {
            return Err(Error::invalid("positions and amplitudes differ in length"));
        }
        if self
            .amplitudes
            .iter()
            .any(|a| !(a.is_finite() && *a >= 0.0))
        {
            return Err(Error::invalid("amplitudes must be finite and >= 0"));
        }
        // f32 storage rounds positions on the boundary by up to an ulp
        let slack = 1e-4;
        let e = &self.extent;
        if self.positions.iter().any(|&[x, z]| {
            !(x >= e.x_min() - slack
                && x <= e.x_max() + slack
                && z >= e.z_min() - slack
                && z <= e.z_max() + slack)
        }) {
            return Err(Error::invalid("scatterer outside the phantom extent"));
        }
        Ok(())
    }

    pub fn mean_amplitude(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.amplitudes.iter().sum::<f64>() / self.len() as f64
        }
    }

    /// Sidecar + float32 binary holding `x`, `z` and `amplitude` rows.
    pub fn write(&self, json_path: &Path) -> Result<()> {
        let n = self.len();
        let mut data = Vec::with_capacity(3 * n);
        data.extend(self.positions.iter().map(|p| p[0]));
        data.extend(self.positions.iter().map(|p| p[1]));
        data.extend_from_slice(&self.amplitudes);
        let meta = serde_json::to_value(PhantomMeta {
            extent: self.extent,
            features: self.features.clone(),
        })?;
        let sc = Sidecar::new(
            "phantom",
            vec![3, n],
            &["field:x,z,amplitude", "scatterer"],
            String::new(),
            meta,
        );
        io::write_array(json_path, sc, &data)
    }

    pub fn read(json_path: &Path) -> Result<Self> {
        let (sc, data) = io::read_array::<f64>(json_path)?;
        if sc.kind != "phantom" || sc.shape.len() != 2 || sc.shape[0] != 3 {
            return Err(Error::Format {
                path: json_path.to_owned(),
                msg: "not a phantom file".into(),
            });
        }
        let meta: PhantomMeta = serde_json::from_value(sc.meta).map_err(|e| Error::Format {
            path: json_path.to_owned(),
            msg: e.to_string(),
        })?;
        let n = sc.shape[1];
        let p = Self {
            positions: (0..n).map(|i| [data[i], data[n + i]]).collect(),
            amplitudes: data[2 * n..].to_vec(),
            extent: meta.extent,
            features: meta.features,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Axial (`c / 2B`) and lateral (`λ F`) size of a resolution cell, mm.
pub fn resolution_cell(cfg: &TransducerConfig, pulse: &Pulse) -> (f64, f64) {
    let axial = cfg.c_mm_per_us() / (2.0 * pulse.bandwidth());
    let lateral = cfg.wavelength() * cfg.f_number;
    (axial, lateral)
}

/// Speckle medium description: box plus scatterers per resolution cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleSpec {
    pub extent: Extent,
    pub density_per_cell: f64,
}

impl Default for SpeckleSpec {
    fn default() -> Self {
        Self {
            extent: Extent::default(),
            density_per_cell: 60.0,
        }
    }
}

/// Uniformly placed scatterers with half-normal amplitudes, at
/// `density_per_cell` scatterers per resolution cell.
pub fn uniform_speckle(
    extent: &Extent,
    density_per_cell: f64,
    cfg: &TransducerConfig,
    pulse: &Pulse,
    seed: u64,
) -> Result<Phantom> {
    extent.validate()?;
    cfg.validate()?;
    if !(density_per_cell > 0.0) || !density_per_cell.is_finite() {
        return Err(Error::invalid("density_per_cell must be > 0"));
    }
    let (ax, lat) = resolution_cell(cfg, pulse);
    let count = (density_per_cell * extent.area() / (ax * lat)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::PHANTOM]));
    let mut positions = Vec::with_capacity(count);
    let mut amplitudes = Vec::with_capacity(count);
    for _ in 0..count {
        let x = rng.random_range(extent.x_min()..=extent.x_max());
        let z = rng.random_range(extent.z_min()..=extent.z_max());
        let a: f64 = StandardNormal.sample(&mut rng);
        positions.push([x, z]);
        amplitudes.push(a.abs());
    }
    Ok(Phantom {
        positions,
        amplitudes,
        extent: *extent,
        features: Vec::new(),
    })
}

/// Region geometry. Rasters cover the phantom extent, first row at the top
/// edge; a point is inside when the bilinear sample is at least 0.5.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    Disk {
        x: f64,
        z: f64,
        radius: f64,
    },
    Rect {
        x_min: f64,
        x_max: f64,
        z_min: f64,
        z_max: f64,
    },
    Raster(Field<f64>),
}

impl Mask {
    pub fn contains(&self, extent: &Extent, x: f64, z: f64) -> bool {
        match self {
            Mask::Disk {
                x: cx,
                z: cz,
                radius,
            } => (x - cx).powi(2) + (z - cz).powi(2) <= radius * radius,
            Mask::Rect {
                x_min,
                x_max,
                z_min,
                z_max,
            } => x >= *x_min && x <= *x_max && z >= *z_min && z <= *z_max,
            Mask::Raster(img) => sample_bilinear(img, extent, x, z) >= 0.5,
        }
    }
}

/// Bilinear sample of an image stretched over the extent.
pub fn sample_bilinear(img: &Field<f64>, extent: &Extent, x: f64, z: f64) -> f64 {
    let (rows, cols) = img.shape();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let u =
        ((x - extent.x_min()) / extent.lateral * (cols - 1) as f64).clamp(0.0, (cols - 1) as f64);
    let v = ((z - extent.z_min()) / extent.axial * (rows - 1) as f64).clamp(0.0, (rows - 1) as f64);
    let (c0, r0) = (u.floor() as usize, v.floor() as usize);
    let (c1, r1) = ((c0 + 1).min(cols - 1), (r0 + 1).min(rows - 1));
    let (fu, fv) = (u - c0 as f64, v - r0 as f64);
    let top = img.get(r0, c0) * (1.0 - fu) + img.get(r0, c1) * fu;
    let bottom = img.get(r1, c0) * (1.0 - fu) + img.get(r1, c1) * fu;
    top * (1.0 - fv) + bottom * fv
}

#[derive(Debug, Clone, PartialEq)]
pub enum EchoRegionSpec {
    Anechoic(Mask),
    /// One weight drawn uniformly from `weight_range` scales every
    /// scatterer inside the mask.
    Hypoechoic {
        mask: Mask,
        weight_range: (f64, f64),
    },
    Hyperechoic {
        mask: Mask,
        weight_range: (f64, f64),
    },
    /// Per-scatterer weight = bilinear sample of a preprocessed template.
    TemplateImage(Field<f64>),
    PointTargets {
        count_range: (usize, usize),
        level_range_db: (f64, f64),
    },
}

impl EchoRegionSpec {
    pub fn hypoechoic(mask: Mask) -> Self {
        Self::Hypoechoic {
            mask,
            weight_range: HYPOECHOIC_WEIGHTS,
        }
    }

    pub fn hyperechoic(mask: Mask) -> Self {
        Self::Hyperechoic {
            mask,
            weight_range: HYPERECHOIC_WEIGHTS,
        }
    }

    pub fn point_targets() -> Self {
        Self::PointTargets {
            count_range: POINT_TARGET_COUNT,
            level_range_db: POINT_TARGET_LEVEL_DB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        match self {
            Self::Hypoechoic { weight_range, .. } => {
                if !(ordered(*weight_range) && weight_range.0 >= 0.0 && weight_range.1 <= 1.0) {
                    return Err(Error::invalid("hypoechoic weights must lie in [0, 1]"));
                }
            }
            Self::Hyperechoic { weight_range, .. } => {
                if !(ordered(*weight_range) && weight_range.0 >= 1.0) {
                    return Err(Error::invalid("hyperechoic weights must be >= 1"));
                }
            }
            Self::PointTargets {
                count_range,
                level_range_db,
            } => {
                if count_range.0 > count_range.1 || !ordered(*level_range_db) {
                    return Err(Error::invalid("point-target ranges must be ordered"));
                }
            }
            Self::TemplateImage(img) => {
                if img.rows() == 0 || img.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::invalid("template values must lie in [0, 1]"));
                }
            }
            Self::Anechoic(_) => {}
        }
        Ok(())
    }
}

/// What [`apply_region`] did.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionOutcome {
    /// Scatterers whose amplitude changed or that were added.
    pub affected: usize,
    /// Region weight for hypo/hyperechoic regions.
    pub weight: Option<f64>,
    /// Set when the mask contained no scatterer; the phantom is unchanged.
    pub empty_mask: bool,
}

/// Returns a copy of `phantom` with the region applied. Positions never move;
/// point targets are appended.
pub fn apply_region(
    phantom: &Phantom,
    spec: &EchoRegionSpec,
    seed: u64,
) -> Result<(Phantom, RegionOutcome)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::REGION]));
    let mut out = phantom.clone();
    let extent = phantom.extent;
    let mut scale_inside = |mask: &Mask, w: f64| {
        let mut hit = 0;
        for (p, a) in out.positions.iter().zip(out.amplitudes.iter_mut()) {
            if mask.contains(&extent, p[0], p[1]) {
                *a *= w;
                hit += 1;
            }
        }
        hit
    };
    let (affected, weight) = match spec {
        EchoRegionSpec::Anechoic(mask) => (scale_inside(mask, 0.0), Some(0.0)),
        EchoRegionSpec::Hypoechoic { mask, weight_range }
        | EchoRegionSpec::Hyperechoic { mask, weight_range } => {
            let w = rng.random_range(weight_range.0..=weight_range.1);
            (scale_inside(mask, w), Some(w))
        }
        EchoRegionSpec::TemplateImage(img) => {
            for (p, a) in out.positions.iter().zip(out.amplitudes.iter_mut()) {
                *a *= sample_bilinear(img, &extent, p[0], p[1]);
            }
            (out.len(), None)
        }
        EchoRegionSpec::PointTargets {
            count_range,
            level_range_db,
        } => {
            let mean = phantom.mean_amplitude();
            let base = if mean > 0.0 { mean } else { 1.0 };
            let count = rng.random_range(count_range.0..=count_range.1);
            for _ in 0..count {
                let x = rng.random_range(extent.x_min()..=extent.x_max());
                let z = rng.random_range(extent.z_min()..=extent.z_max());
                let db = rng.random_range(level_range_db.0..=level_range_db.1);
                out.positions.push([x, z]);
                out.amplitudes.push(base * 10f64.powf(db / 20.0));
                out.features.push(Feature::Point { x, z });
            }
            (count, None)
        }
    };
    let masked = matches!(
        spec,
        EchoRegionSpec::Anechoic(_)
            | EchoRegionSpec::Hypoechoic { .. }
            | EchoRegionSpec::Hyperechoic { .. }
    );
    if masked && affected == 0 {
        warn!("region mask contains no scatterers; phantom unchanged");
        return Ok((
            phantom.clone(),
            RegionOutcome {
                affected: 0,
                weight,
                empty_mask: true,
            },
        ));
    }
    Ok((
        out,
        RegionOutcome {
            affected,
            weight,
            empty_mask: false,
        },
    ))
}

/// Cyst centres (depth below the phantom top, mm) and diameters, mm.
pub const CONTRAST_CYSTS: [(f64, f64); 2] = [(10.0, 10.0), (28.0, 15.0)];

/// Speckle with two anechoic cysts on the central axis: 10 mm diameter
/// centred 10 mm below the phantom top and 15 mm diameter 28 mm below it.
pub fn contrast_test_phantom(cfg: &TransducerConfig, seed: u64) -> Result<Phantom> {
    contrast_phantom_with(cfg, &Pulse::for_probe(cfg), &SpeckleSpec::default(), seed)
}

pub fn contrast_phantom_with(
    cfg: &TransducerConfig,
    pulse: &Pulse,
    speckle: &SpeckleSpec,
    seed: u64,
) -> Result<Phantom> {
    let mut p = uniform_speckle(&speckle.extent, speckle.density_per_cell, cfg, pulse, seed)?;
    for (depth, diameter) in CONTRAST_CYSTS {
        let (x, z, radius) = (0.0, speckle.extent.start_depth + depth, diameter / 2.0);
        let (next, _) = apply_region(
            &p,
            &EchoRegionSpec::Anechoic(Mask::Disk { x, z, radius }),
            seed,
        )?;
        p = next;
        p.features.push(Feature::Cyst { x, z, radius });
    }
    Ok(p)
}

/// Depths of the horizontal target lines below the phantom top, mm.
pub const RESOLUTION_LINES: [f64; 2] = [10.0, 30.0];
/// Lateral offsets of the off-axis targets on each horizontal line, mm.
pub const RESOLUTION_OFFSETS: [f64; 6] = [-12.0, -8.0, -4.0, 4.0, 8.0, 12.0];
/// Depths of the on-axis targets below the phantom top, mm.
pub const RESOLUTION_AXIS: [f64; 7] = [5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0];

/// 19 unit point targets without speckle: seven on the central axis every
/// 5 mm, and six more on each of two horizontal lines 10 mm and 30 mm below
/// the phantom top, 4 mm apart.
pub fn resolution_test_phantom(extent: &Extent) -> Result<Phantom> {
    extent.validate()?;
    let z0 = extent.start_depth;
    let mut points: Vec<[f64; 2]> = RESOLUTION_AXIS.iter().map(|d| [0.0, z0 + d]).collect();
    for line in RESOLUTION_LINES {
        points.extend(RESOLUTION_OFFSETS.iter().map(|&x| [x, z0 + line]));
    }
    if points.iter().any(|p| !extent.contains(p[0], p[1])) {
        return Err(Error::invalid("extent too small for the resolution layout"));
    }
    Ok(Phantom {
        amplitudes: vec![1.0; points.len()],
        features: points
            .iter()
            .map(|p| Feature::Point { x: p[0], z: p[1] })
            .collect(),
        positions: points,
        extent: *extent,
    })
}

/// Histogram-equalises a grayscale image in [0, 1] over 256 levels, then
/// sends values below 0.1 to 0 and above 0.9 to 1.
pub fn preprocess_template(gray: &Field<f64>) -> Field<f64> {
    let level = |v: f64| ((v.clamp(0.0, 1.0) * 255.0).round()) as usize;
    let mut hist = [0usize; 256];
    for &v in gray.as_slice() {
        hist[level(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let total = gray.as_slice().len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let span = total.saturating_sub(cdf_min);
    gray.map(|v| {
        let eq = if span == 0 {
            1.0
        } else {
            (cdf[level(v)] - cdf_min) as f64 / span as f64
        };
        if eq < 0.1 {
            0.0
        } else if eq > 0.9 {
            1.0
        } else {
            eq
        }
    })
}

/// Loads a grayscale image (8-bit PGM or PNG) as values in [0, 1], one row
/// per image line.
pub fn load_grayscale(path: &Path) -> Result<Field<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Format {
            path: path.to_owned(),
            msg: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Field::from_fn(h, w, |r, c| {
        img.get_pixel(c as u32, r as u32).0[0] as f64 / 255.0
    }))
}

/// Binary mask from a grayscale image: pixels at or above one half are inside.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let gray = load_grayscale(path)?;
    Ok(Mask::Raster(gray.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })))
}
