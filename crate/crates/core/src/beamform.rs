//! Delay-and-sum reconstruction of 0° plane-wave channel data.
//!
//! Pixel `(x, z)` sums receive element `n` at time
//! `(z + sqrt(z² + (x − x_n)²)) / c + τ_a(n)` over the f-number aperture.
//! Reads outside the recorded window contribute zero and are counted.

use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::AberrationProfile;
use crate::io::{self, Sidecar};
use crate::probe::{aperture_elements, two_way_delay, ImagingGrid, TransducerConfig};
use crate::wavesim::ChannelData;
use crate::{Error, Field, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Apodization {
    #[default]
    Rect,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Catmull-Rom cubic.
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApertureMode {
    /// `z / F` wide, centred on the nearest element.
    #[default]
    FNumber,
    /// Every element.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DasOptions {
    pub apodization: Apodization,
    pub interpolation: Interpolation,
    pub aperture: ApertureMode,
}

impl DasOptions {
    pub fn hann() -> Self {
        Self {
            apodization: Apodization::Hann,
            ..Self::default()
        }
    }
}

/// How an image was produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    pub tx_profile: Option<AberrationProfile>,
    /// Profile added to the receive delays.
    pub rx_profile: Option<AberrationProfile>,
    pub correction: Option<String>,
    pub options: DasOptions,
    /// Pixel contributions that fell outside the recorded window.
    pub out_of_window: usize,
}

/// Beamformed RF image: rows follow the grid's axial positions, columns its
/// lateral positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RfImage<T> {
    pub samples: Field<T>,
    pub grid: ImagingGrid,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ImageMeta {
    grid: ImagingGrid,
    provenance: Provenance,
}

impl<T: Real> RfImage<T> {
    pub fn new(samples: Field<T>, grid: ImagingGrid) -> Result<Self> {
        if samples.shape() != (grid.row_count, grid.column_count) {
            return Err(Error::invalid(format!(
                "image is {:?}, grid is {}x{}",
                samples.shape(),
                grid.row_count,
                grid.column_count
            )));
        }
        Ok(Self {
            samples,
            grid,
            provenance: Provenance::default(),
        })
    }

    pub fn rows(&self) -> usize {
        self.samples.rows()
    }

    pub fn cols(&self) -> usize {
        self.samples.cols()
    }

    pub fn write(&self, json_path: &Path) -> Result<()> {
        let meta = serde_json::to_value(ImageMeta {
            grid: self.grid.clone(),
            provenance: self.provenance.clone(),
        })?;
        let sc = Sidecar::new(
            "rf_image",
            vec![self.cols(), self.rows()],
            &["lateral", "axial"],
            String::new(),
            meta,
        );
        io::write_array(json_path, sc, self.samples.as_slice())
    }

    pub fn read(json_path: &Path) -> Result<Self> {
        let (sc, data) = io::read_array::<T>(json_path)?;
        let bad = |msg: &str| Error::Format {
            path: json_path.to_owned(),
            msg: msg.to_owned(),
        };
        if sc.kind != "rf_image" || sc.shape.len() != 2 {
            return Err(bad("not an rf_image file"));
        }
        let meta: ImageMeta = serde_json::from_value(sc.meta).map_err(|e| bad(&e.to_string()))?;
        meta.grid.validate()?;
        let mut img = Self::new(Field::from_vec(sc.shape[1], sc.shape[0], data), meta.grid)?;
        img.provenance = meta.provenance;
        Ok(img)
    }
}

/// Aligned (delayed, apodized, not yet summed) receive data for one image
/// column. Elements outside a row's aperture are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedStack<T> {
    /// Rows follow the grid's axial positions, columns are elements.
    pub data: Field<T>,
    /// Per-row active elements.
    pub active: Vec<Range<usize>>,
    pub out_of_window: usize,
}

impl<T: Real> AlignedStack<T> {
    /// Sum across elements, ascending.
    pub fn sum(&self) -> Vec<T> {
        (0..self.data.rows())
            .map(|r| {
                let mut s = T::zero();
                for n in 0..self.data.cols() {
                    s += self.data.get(r, n);
                }
                s
            })
            .collect()
    }
}

struct Delays<'a> {
    cfg: &'a TransducerConfig,
    xe: Vec<f64>,
    rx: Vec<f64>,
    t0: f64,
    fs: f64,
    opts: DasOptions,
}

impl<'a> Delays<'a> {
    fn new<T: Real>(
        channel: &ChannelData<T>,
        cfg: &'a TransducerConfig,
        rx_profile: Option<&AberrationProfile>,
        opts: &DasOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        channel.validate(cfg)?;
        let rx = match rx_profile {
            Some(p) => {
                p.check_len(cfg.num_elements)?;
                p.delays.iter().map(|d| d * 1e-3).collect()
            }
            None => vec![0.0; cfg.num_elements],
        };
        Ok(Self {
            cfg,
            xe: cfg.element_positions(),
            rx,
            t0: channel.t0,
            fs: channel.sample_rate,
            opts: *opts,
        })
    }

    fn aperture(&self, x: f64, z: f64) -> (Range<usize>, usize, usize) {
        match self.opts.aperture {
            ApertureMode::Full => (
                0..self.cfg.num_elements,
                self.cfg.nearest_element(x),
                self.cfg.num_elements,
            ),
            ApertureMode::FNumber => {
                let r = aperture_elements(self.cfg, x, z);
                let k = self.cfg.nearest_element(x);
                let half =
                    ((z.max(0.0) / self.cfg.f_number / self.cfg.pitch) / 2.0).round() as usize;
                (*r.start()..*r.end() + 1, k, half)
            }
        }
    }

    fn weight(&self, n: usize, k: usize, half: usize) -> f64 {
        match self.opts.apodization {
            Apodization::Rect => 1.0,
            Apodization::Hann => {
                let u = (n as f64 - k as f64) / (half as f64 + 1.0);
                0.5 * (1.0 + (std::f64::consts::PI * u).cos())
            }
        }
    }

    /// Fractional sample index of element `n` for pixel `(x, z)`.
    #[inline]
    fn index(&self, n: usize, x: f64, z: f64) -> f64 {
        (two_way_delay(self.cfg, self.xe[n], x, z) + self.rx[n] - self.t0) * self.fs
    }
}

/// Interpolated sample, or `None` outside the trace.
#[inline]
fn sample<T: Real>(trace: &[T], u: f64, interp: Interpolation) -> Option<T> {
    let len = trace.len();
    if !(u >= 0.0) || u > (len - 1) as f64 {
        return None;
    }
    let i = (u.floor() as usize).min(len - 1);
    let f = u - i as f64;
    if f == 0.0 {
        return Some(trace[i]);
    }
    match interp {
        Interpolation::Linear => Some(trace[i] + T::of(f) * (trace[i + 1] - trace[i])),
        Interpolation::Cubic => {
            let at = |j: isize| trace[j.clamp(0, len as isize - 1) as usize].as_f64();
            let (p0, p1, p2, p3) = (
                at(i as isize - 1),
                at(i as isize),
                at(i as isize + 1),
                at(i as isize + 2),
            );
            let v = p1
                + 0.5
                    * f
                    * (p2 - p0
                        + f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3
                            + f * (3.0 * (p1 - p2) + p3 - p0)));
            Some(T::of(v))
        }
    }
}

/// Delay-and-sum image on `grid`. `rx_profile` (ns) is added to every
/// receive delay; `None` is aberration-free receive.
pub fn das<T: Real>(
    channel: &ChannelData<T>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    rx_profile: Option<&AberrationProfile>,
    opts: &DasOptions,
) -> Result<RfImage<T>> {
    grid.validate()?;
    let delays = Delays::new(channel, cfg, rx_profile, opts)?;
    let columns: Vec<(Vec<T>, usize)> = grid
        .lateral_positions
        .par_iter()
        .map(|&x| {
            let mut missed = 0;
            let col = grid
                .axial_positions
                .iter()
                .map(|&z| {
                    let (ap, k, half) = delays.aperture(x, z);
                    let mut s = T::zero();
                    for n in ap {
                        match sample(channel.trace(n), delays.index(n, x, z), opts.interpolation) {
                            Some(v) => s += T::of(delays.weight(n, k, half)) * v,
                            None => missed += 1,
                        }
                    }
                    s
                })
                .collect();
            (col, missed)
        })
        .collect();
    let out_of_window = columns.iter().map(|c| c.1).sum();
    let data: Vec<T> = columns.into_iter().flat_map(|c| c.0).collect();
    let mut img = RfImage::new(
        Field::from_vec(grid.row_count, grid.column_count, data),
        grid.clone(),
    )?;
    img.provenance = Provenance {
        tx_profile: channel.tx_aberration.clone(),
        rx_profile: rx_profile.filter(|p| !p.is_zero()).cloned(),
        correction: None,
        options: *opts,
        out_of_window,
    };
    Ok(img)
}

/// Aligned receive stack for image column `col` of `grid`. Summing it across
/// elements reproduces the [`das`] column.
pub fn das_channelwise<T: Real>(
    channel: &ChannelData<T>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    col: usize,
    rx_profile: Option<&AberrationProfile>,
    opts: &DasOptions,
) -> Result<AlignedStack<T>> {
    grid.validate()?;
    if col >= grid.column_count {
        return Err(Error::invalid(format!(
            "column {col} outside a {}-column grid",
            grid.column_count
        )));
    }
    let delays = Delays::new(channel, cfg, rx_profile, opts)?;
    let x = grid.lateral_positions[col];
    let rows = grid.row_count;
    let mut data = Field::zeros(rows, cfg.num_elements);
    let mut active = Vec::with_capacity(rows);
    let mut missed = 0;
    for (r, &z) in grid.axial_positions.iter().enumerate() {
        let (ap, k, half) = delays.aperture(x, z);
        for n in ap.clone() {
            match sample(channel.trace(n), delays.index(n, x, z), opts.interpolation) {
                Some(v) => data.set(r, n, T::of(delays.weight(n, k, half)) * v),
                None => missed += 1,
            }
        }
        active.push(ap);
    }
    Ok(AlignedStack {
        data,
        active,
        out_of_window: missed,
    })
}
