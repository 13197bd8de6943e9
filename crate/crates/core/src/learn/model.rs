//! Small image-to-image models with hand-written backpropagation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Field, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Stack of same-padded `kernel × kernel` convolutions. `channels` lists
    /// the channel count at every layer boundary, starting and ending at 1.
    /// Every layer but the last is followed by a rectifier.
    Conv { kernel: usize, channels: Vec<usize> },
    /// One free parameter per output pixel; the input is ignored.
    BiasOnly { rows: usize, cols: usize },
}

impl Architecture {
    fn validate(&self) -> Result<()> {
        match self {
            Architecture::Conv { kernel, channels } => {
                if *kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::invalid(format!("kernel size {kernel} must be odd")));
                }
                if channels.len() < 2 || channels[0] != 1 || *channels.last().unwrap() != 1 {
                    return Err(Error::invalid(
                        "channels must start and end at 1 with at least one layer",
                    ));
                }
                if channels.contains(&0) {
                    return Err(Error::invalid("zero-width layer"));
                }
            }
            Architecture::BiasOnly { rows, cols } => {
                if *rows == 0 || *cols == 0 {
                    return Err(Error::invalid("bias-only model needs a non-empty shape"));
                }
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Conv { kernel, channels } => channels
                .windows(2)
                .map(|w| w[1] * w[0] * kernel * kernel + w[1])
                .sum(),
            Architecture::BiasOnly { rows, cols } => rows * cols,
        }
    }
}

/// Image-to-image model `R^{p×q} → R^{p×q}` with a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ToyModel<T> {
    pub architecture: Architecture,
    params: Vec<T>,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    /// Input of every conv layer (after the previous rectifier).
    inputs: Vec<Vec<Field<T>>>,
    /// Output of every conv layer before its rectifier.
    pre: Vec<Vec<Field<T>>>,
    pub output: Field<T>,
}

impl<T: Real> ToyModel<T> {
    /// Convolutional model with He-normal weights and zero biases.
    pub fn conv(kernel: usize, channels: &[usize], seed: u64) -> Result<Self> {
        let architecture = Architecture::Conv {
            kernel,
            channels: channels.to_vec(),
        };
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(architecture.param_count());
        for w in channels.windows(2) {
            let fan_in = (w[0] * kernel * kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            params
                .extend((0..w[1] * w[0] * kernel * kernel).map(|_| T::of(normal.sample(&mut rng))));
            params.extend(std::iter::repeat_n(T::zero(), w[1]));
        }
        Ok(Self {
            architecture,
            params,
        })
    }

    /// Three 5×5 layers, 1 → 8 → 8 → 1 channels.
    pub fn default_conv(seed: u64) -> Self {
        Self::conv(5, &[1, 8, 8, 1], seed).expect("default architecture is valid")
    }

    /// Bias-only model initialised with `N(0, init_std²)` per pixel.
    pub fn bias_only(rows: usize, cols: usize, init_std: f64, seed: u64) -> Result<Self> {
        let architecture = Architecture::BiasOnly { rows, cols };
        architecture.validate()?;
        if !(init_std >= 0.0) || !init_std.is_finite() {
            return Err(Error::invalid(format!(
                "init std {init_std} must be finite and ≥ 0"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_std).expect("checked std");
        let params = (0..rows * cols)
            .map(|_| T::of(normal.sample(&mut rng)))
            .collect();
        Ok(Self {
            architecture,
            params,
        })
    }

    pub fn from_params(architecture: Architecture, params: Vec<T>) -> Result<Self> {
        architecture.validate()?;
        if params.len() != architecture.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                architecture.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            architecture,
            params,
        })
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, input: &Field<T>) -> Result<Field<T>> {
        Ok(self.forward_tape(input)?.output)
    }

    pub fn forward_tape(&self, input: &Field<T>) -> Result<ForwardTape<T>> {
        match &self.architecture {
            Architecture::BiasOnly { rows, cols } => {
                if input.shape() != (*rows, *cols) {
                    return Err(Error::invalid(format!(
                        "input {:?} does not match model shape {:?}",
                        input.shape(),
                        (rows, cols)
                    )));
                }
                Ok(ForwardTape {
                    inputs: Vec::new(),
                    pre: Vec::new(),
                    output: Field::from_vec(*rows, *cols, self.params.clone()),
                })
            }
            Architecture::Conv { kernel, channels } => {
                if input.as_slice().is_empty() {
                    return Err(Error::invalid("empty input"));
                }
                let layers = channels.len() - 1;
                let mut inputs = Vec::with_capacity(layers);
                let mut pre = Vec::with_capacity(layers);
                let mut x = vec![input.clone()];
                let mut offset = 0;
                for l in 0..layers {
                    let (cin, cout) = (channels[l], channels[l + 1]);
                    let nw = cout * cin * kernel * kernel;
                    let w = &self.params[offset..offset + nw];
                    let b = &self.params[offset + nw..offset + nw + cout];
                    offset += nw + cout;
                    let z = conv_forward(&x, w, b, cout, *kernel);
                    let next = if l + 1 < layers {
                        z.iter().map(|f| f.map(|v| v.max(T::zero()))).collect()
                    } else {
                        Vec::new()
                    };
                    inputs.push(std::mem::replace(&mut x, next));
                    pre.push(z);
                }
                let output = pre[layers - 1][0].clone();
                Ok(ForwardTape {
                    inputs,
                    pre,
                    output,
                })
            }
        }
    }

    /// Gradient of `Σ grad_output ⊙ output` with respect to every parameter.
    pub fn backward(&self, tape: &ForwardTape<T>, grad_output: &Field<T>) -> Result<Vec<T>> {
        if grad_output.shape() != tape.output.shape() {
            return Err(Error::invalid(
                "output gradient shape differs from the model output",
            ));
        }
        match &self.architecture {
            Architecture::BiasOnly { .. } => Ok(grad_output.as_slice().to_vec()),
            Architecture::Conv { kernel, channels } => {
                let layers = channels.len() - 1;
                let mut grads = vec![T::zero(); self.params.len()];
                let mut offsets = Vec::with_capacity(layers);
                let mut offset = 0;
                for w in channels.windows(2) {
                    offsets.push(offset);
                    offset += w[1] * w[0] * kernel * kernel + w[1];
                }
                let mut g = vec![grad_output.clone()];
                for l in (0..layers).rev() {
                    let (cin, cout) = (channels[l], channels[l + 1]);
                    if l + 1 < layers {
                        for (go, z) in g.iter_mut().zip(&tape.pre[l]) {
                            for (v, &zv) in go.as_mut_slice().iter_mut().zip(z.as_slice()) {
                                if zv <= T::zero() {
                                    *v = T::zero();
                                }
                            }
                        }
                    }
                    let nw = cout * cin * kernel * kernel;
                    let o = offsets[l];
                    let w = &self.params[o..o + nw];
                    let (gw, gb) = grads[o..o + nw + cout].split_at_mut(nw);
                    g = conv_backward(&tape.inputs[l], &g, w, gw, gb, *kernel, l > 0);
                }
                Ok(grads)
            }
        }
    }
}

/// Calls `f(dst_col, src_col, dst_row_range, src_row_start)` for every
/// overlapping column pair of a shift by `(dy, dx)` under zero padding.
#[inline]
fn for_each_shift(
    rows: usize,
    cols: usize,
    dy: isize,
    dx: isize,
    mut f: impl FnMut(usize, usize, usize, usize, usize),
) {
    let r0 = (-dy).max(0) as usize;
    let r1 = (rows as isize - dy.max(0)).max(0) as usize;
    if r0 >= r1 {
        return;
    }
    let c0 = (-dx).max(0) as usize;
    let c1 = (cols as isize - dx.max(0)).max(0) as usize;
    for c in c0..c1 {
        let sc = (c as isize + dx) as usize;
        f(c, sc, r0, r1, (r0 as isize + dy) as usize);
    }
}

fn conv_forward<T: Real>(x: &[Field<T>], w: &[T], b: &[T], cout: usize, k: usize) -> Vec<Field<T>> {
    let (rows, cols) = x[0].shape();
    let cin = x.len();
    let h = (k / 2) as isize;
    (0..cout)
        .map(|o| {
            let mut out = Field::filled(rows, cols, b[o]);
            let dst = out.as_mut_slice();
            for (i, xi) in x.iter().enumerate() {
                let src = xi.as_slice();
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * cin + i) * k + ky) * k + kx];
                        for_each_shift(
                            rows,
                            cols,
                            ky as isize - h,
                            kx as isize - h,
                            |c, sc, r0, r1, sr| {
                                let d = &mut dst[c * rows + r0..c * rows + r1];
                                let s = &src[sc * rows + sr..sc * rows + sr + (r1 - r0)];
                                for (dv, &sv) in d.iter_mut().zip(s) {
                                    *dv += wv * sv;
                                }
                            },
                        );
                    }
                }
            }
            out
        })
        .collect()
}

/// Accumulates weight and bias gradients and returns the input gradient
/// (empty when `need_input` is false).
fn conv_backward<T: Real>(
    x: &[Field<T>],
    g: &[Field<T>],
    w: &[T],
    gw: &mut [T],
    gb: &mut [T],
    k: usize,
    need_input: bool,
) -> Vec<Field<T>> {
    let (rows, cols) = x[0].shape();
    let cin = x.len();
    let h = (k / 2) as isize;
    let mut gx: Vec<Field<T>> = if need_input {
        (0..cin).map(|_| Field::zeros(rows, cols)).collect()
    } else {
        Vec::new()
    };
    for (o, go) in g.iter().enumerate() {
        let gs = go.as_slice();
        gb[o] += gs.iter().copied().sum::<T>();
        for (i, xi) in x.iter().enumerate() {
            let src = xi.as_slice();
            for ky in 0..k {
                for kx in 0..k {
                    let idx = ((o * cin + i) * k + ky) * k + kx;
                    let wv = w[idx];
                    let mut acc = T::zero();
                    for_each_shift(
                        rows,
                        cols,
                        ky as isize - h,
                        kx as isize - h,
                        |c, sc, r0, r1, sr| {
                            let gseg = &gs[c * rows + r0..c * rows + r1];
                            let sseg = &src[sc * rows + sr..sc * rows + sr + (r1 - r0)];
                            acc += gseg.iter().zip(sseg).map(|(&a, &b)| a * b).sum::<T>();
                            if need_input {
                                let d = &mut gx[i].as_mut_slice()
                                    [sc * rows + sr..sc * rows + sr + (r1 - r0)];
                                for (dv, &gv) in d.iter_mut().zip(gseg) {
                                    *dv += wv * gv;
                                }
                            }
                        },
                    );
                    gw[idx] += acc;
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Field<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Checks every parameter gradient of `Σ c ⊙ f(x)` against central
    /// differences.
    pub(crate) fn check_param_gradients(model: &ToyModel<f64>, x: &Field<f64>, tol: f64) {
        let c = random(x.rows(), x.cols(), 99);
        let objective = |m: &ToyModel<f64>| -> f64 {
            let y = m.forward(x).unwrap();
            y.as_slice()
                .iter()
                .zip(c.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let tape = model.forward_tape(x).unwrap();
        let grads = model.backward(&tape, &c).unwrap();
        let h = 1e-6;
        let scale = grads.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for p in 0..model.param_count() {
            let mut plus = model.clone();
            plus.params_mut()[p] += h;
            let mut minus = model.clone();
            minus.params_mut()[p] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = grads[p];
            assert!(
                (fd - an).abs() <= tol * an.abs().max(1e-3 * scale),
                "param {p}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn shapes_and_counts() {
        let m = ToyModel::<f64>::default_conv(1);
        assert_eq!(m.param_count(), 8 * 25 + 8 + 8 * 8 * 25 + 8 + 8 * 25 + 1);
        let x = random(12, 9, 2);
        assert_eq!(m.forward(&x).unwrap().shape(), (12, 9));
        assert!(ToyModel::<f64>::conv(4, &[1, 1], 0).is_err());
        assert!(ToyModel::<f64>::conv(3, &[2, 1], 0).is_err());
        let b = ToyModel::<f64>::bias_only(3, 4, 0.0, 0).unwrap();
        assert!(b.forward(&random(4, 3, 0)).is_err());
        assert!(b
            .forward(&random(3, 4, 0))
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_tap_kernel_is_a_shift_with_zero_padding() {
        let mut params = vec![0.0; 10];
        // output(r, c) = x(r - 1, c): weight at ky = 0, kx = 1
        params[1] = 1.0;
        params[9] = 0.5;
        let m = ToyModel::from_params(
            Architecture::Conv {
                kernel: 3,
                channels: vec![1, 1],
            },
            params,
        )
        .unwrap();
        let x = random(5, 4, 3);
        let y = m.forward(&x).unwrap();
        for c in 0..4 {
            assert_eq!(y.get(0, c), 0.5);
            for r in 1..5 {
                assert!((y.get(r, c) - (x.get(r - 1, c) + 0.5)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let m = ToyModel::<f64>::conv(5, &[1, 3, 2, 1], 4).unwrap();
        check_param_gradients(&m, &random(8, 8, 5), 1e-4);
    }

    #[test]
    fn default_model_gradients_match_finite_differences() {
        let m = ToyModel::<f64>::default_conv(6);
        check_param_gradients(&m, &random(8, 8, 7), 1e-4);
    }

    #[test]
    fn bias_only_gradient_is_the_cotangent() {
        let m = ToyModel::<f64>::bias_only(8, 8, 0.1, 8).unwrap();
        check_param_gradients(&m, &random(8, 8, 9), 1e-6);
    }

    #[test]
    fn serde_round_trip() {
        let m = ToyModel::<f64>::conv(3, &[1, 2, 1], 10).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: ToyModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
    }
}
