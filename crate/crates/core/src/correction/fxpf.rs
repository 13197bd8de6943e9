//! Frequency-space prediction filtering applied to plane-wave images: each
//! column's aligned, apodized channel stack is filtered before summation.

use fxpf::{filter_stack, Filtered, FxpfConfig, Sampling, StackView, Window};
use rayon::prelude::*;

use crate::aberration::AberrationProfile;
use crate::beamform::{
    das_channelwise, AlignedStack, Apodization, DasOptions, Provenance, RfImage,
};
use crate::probe::{ImagingGrid, TransducerConfig};
use crate::wavesim::ChannelData;
use crate::{Error, Field, Real, Result};

/// Fast-time sampling of the grid rows.
fn row_sampling(cfg: &TransducerConfig, grid: &ImagingGrid) -> Result<Sampling> {
    let dz = grid.dz();
    if !(dz > 0.0) {
        return Err(Error::invalid(
            "FXPF needs at least two uniformly spaced rows",
        ));
    }
    Ok(Sampling {
        row_interval_s: 2.0 * dz / cfg.c_mm_per_us() * 1e-6,
        center_frequency_hz: cfg.center_frequency * 1e6,
    })
}

/// Filters one aligned stack (rows follow the grid, columns are elements).
pub fn fxpf_filter_stack<T: Real>(
    stack: &AlignedStack<T>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    fx: &FxpfConfig,
) -> Result<Filtered<T>> {
    let view = StackView {
        data: stack.data.as_slice(),
        rows: stack.data.rows(),
        elements: stack.data.cols(),
        active: Some(&stack.active),
    };
    Ok(filter_stack(view, row_sampling(cfg, grid)?, fx)?)
}

/// Plane-wave FXPF image: per column, the stack is aligned with the
/// configured apodization across the active aperture, filtered and summed.
pub fn correct_fxpf<T: Real>(
    channel: &ChannelData<T>,
    cfg: &TransducerConfig,
    grid: &ImagingGrid,
    rx_profile: Option<&AberrationProfile>,
    fx: &FxpfConfig,
) -> Result<RfImage<T>> {
    fx.validate()?;
    grid.validate()?;
    row_sampling(cfg, grid)?;
    let opts = DasOptions {
        apodization: match fx.apodization {
            Window::Hann => Apodization::Hann,
            Window::Rect => Apodization::Rect,
        },
        ..DasOptions::default()
    };
    let columns: Vec<(Vec<T>, usize, usize)> = (0..grid.column_count)
        .into_par_iter()
        .map(|col| {
            let stack = das_channelwise(channel, cfg, grid, col, rx_profile, &opts)?;
            let filtered = fxpf_filter_stack(&stack, cfg, grid, fx)?;
            let rows = stack.data.rows();
            let summed = Field::from_vec(rows, stack.data.cols(), filtered.data);
            let sum = AlignedStack {
                data: summed,
                active: stack.active,
                out_of_window: stack.out_of_window,
            }
            .sum();
            Ok((sum, stack.out_of_window, filtered.passthrough_kernels))
        })
        .collect::<Result<_>>()?;
    let out_of_window = columns.iter().map(|c| c.1).sum();
    let passthrough: usize = columns.iter().map(|c| c.2).sum();
    if passthrough > 0 {
        log::warn!("{passthrough} FXPF kernels were passed through unfiltered");
    }
    let data: Vec<T> = columns.into_iter().flat_map(|c| c.0).collect();
    let mut img = RfImage::new(
        Field::from_vec(grid.row_count, grid.column_count, data),
        grid.clone(),
    )?;
    img.provenance = Provenance {
        tx_profile: channel.tx_aberration.clone(),
        rx_profile: rx_profile.filter(|p| !p.is_zero()).cloned(),
        correction: Some("fxpf".into()),
        options: opts,
        out_of_window,
    };
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::das;
    use crate::correction::testing::{cfg, grid, speckle};

    #[test]
    fn disabled_filter_equals_apodized_das() {
        let fx = FxpfConfig {
            enabled: false,
            ..FxpfConfig::default()
        };
        let img = correct_fxpf(speckle(), &cfg(), &grid(), None, &fx).unwrap();
        let reference = das(speckle(), &cfg(), &grid(), None, &DasOptions::hann()).unwrap();
        let scale = reference.samples.max_abs();
        for (a, b) in img
            .samples
            .as_slice()
            .iter()
            .zip(reference.samples.as_slice())
        {
            assert!((a - b).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn output_scales_with_input() {
        let fx = FxpfConfig::default();
        let mut scaled = speckle().clone();
        scaled.samples.scale(8.0);
        let small = ImagingGrid::uniform(-1.0, 0.1, 5, 12.0, grid().dz(), 200).unwrap();
        let a = correct_fxpf(speckle(), &cfg(), &small, None, &fx).unwrap();
        let b = correct_fxpf(&scaled, &cfg(), &small, None, &fx).unwrap();
        let scale = a.samples.max_abs();
        for (x, y) in a.samples.as_slice().iter().zip(b.samples.as_slice()) {
            assert!((8.0 * x - y).abs() <= 1e-9 * 8.0 * scale);
        }
    }

    #[test]
    fn filtered_stack_does_not_gain_energy() {
        let g = grid();
        let opts = DasOptions::hann();
        for col in [10, 30, 50] {
            let stack = das_channelwise(speckle(), &cfg(), &g, col, None, &opts).unwrap();
            let out = fxpf_filter_stack(&stack, &cfg(), &g, &FxpfConfig::default()).unwrap();
            let e_in: f64 = stack.data.as_slice().iter().map(|v| v * v).sum();
            let e_out: f64 = out.data.iter().map(|v| v * v).sum();
            assert!(e_out <= 1.05 * e_in, "column {col}: {e_out} > {e_in}");
        }
    }

    #[test]
    fn needs_an_axial_spacing() {
        let single = ImagingGrid::uniform(0.0, 0.1, 3, 20.0, 0.0, 1).unwrap();
        assert!(correct_fxpf(speckle(), &cfg(), &single, None, &FxpfConfig::default()).is_err());
    }
}
