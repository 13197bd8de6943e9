//! Training losses on RF images with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::bmode::standardized_bmode_tape;
use crate::{Error, Field, Real, Result};

/// Loss value and its gradient with respect to the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval<T> {
    pub value: f64,
    pub gradient: Field<T>,
    /// Weight of the RF branch (1 for plain RF MSE, 0 for B-mode MSE).
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error on RF samples.
    MseRf,
    /// Mean squared error on standardized B-mode.
    MseBmode,
    /// B-mode MSE fading into RF MSE as training proceeds.
    #[default]
    AdaptiveMixed,
}

impl LossKind {
    /// RF weight at `epoch` of `total`.
    pub fn alpha(self, epoch: usize, total: usize) -> Result<f64> {
        match self {
            LossKind::MseRf => Ok(1.0),
            LossKind::MseBmode => Ok(0.0),
            LossKind::AdaptiveMixed => alpha_schedule(epoch, total),
        }
    }
}

fn check_shapes<T: Real>(target: &Field<T>, output: &Field<T>) -> Result<()> {
    if target.shape() != output.shape() {
        return Err(Error::invalid(format!(
            "target {:?} and output {:?} differ in shape",
            target.shape(),
            output.shape()
        )));
    }
    if target.as_slice().is_empty() {
        return Err(Error::invalid("empty image"));
    }
    Ok(())
}

/// `mean((output - target)²)` and its gradient `2 (output - target) / n`.
pub fn mse_loss<T: Real>(target: &Field<T>, output: &Field<T>) -> Result<LossEval<T>> {
    check_shapes(target, output)?;
    let n = target.as_slice().len() as f64;
    let mut value = 0.0;
    let diff: Vec<T> = output
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&o, &t)| {
            let d = o - t;
            value += d.as_f64() * d.as_f64();
            d
        })
        .collect();
    let scale = T::of(2.0 / n);
    Ok(LossEval {
        value: value / n,
        gradient: Field::from_vec(
            output.rows(),
            output.cols(),
            diff.into_iter().map(|d| d * scale).collect(),
        ),
        alpha: 1.0,
    })
}

/// MSE between the standardized B-modes of target and output; the gradient
/// flows through the output's B-mode only.
pub fn bmode_mse_loss<T: Real>(target: &Field<T>, output: &Field<T>) -> Result<LossEval<T>> {
    check_shapes(target, output)?;
    let target_b = standardized_bmode_tape(target)?.output;
    let tape = standardized_bmode_tape(output)?;
    let inner = mse_loss(&target_b, &tape.output)?;
    Ok(LossEval {
        value: inner.value,
        gradient: tape.backward(&inner.gradient)?,
        alpha: 0.0,
    })
}

/// `(1 - α) · MSE(B(target), B(output)) + α · MSE(target, output)`.
///
/// At `α = 1` the B-mode branch is skipped, so constant outputs are allowed.
pub fn adaptive_mixed_loss<T: Real>(
    target: &Field<T>,
    output: &Field<T>,
    alpha: f64,
) -> Result<LossEval<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let rf = mse_loss(target, output)?;
    if alpha == 1.0 {
        return Ok(rf);
    }
    let b = bmode_mse_loss(target, output)?;
    if alpha == 0.0 {
        return Ok(b);
    }
    let (wa, wb) = (T::of(alpha), T::of(1.0 - alpha));
    let gradient = Field::from_vec(
        rf.gradient.rows(),
        rf.gradient.cols(),
        rf.gradient
            .as_slice()
            .iter()
            .zip(b.gradient.as_slice())
            .map(|(&g_rf, &g_b)| wa * g_rf + wb * g_b)
            .collect(),
    );
    Ok(LossEval {
        value: (1.0 - alpha) * b.value + alpha * rf.value,
        gradient,
        alpha,
    })
}

/// `epoch / total`.
pub fn alpha_schedule(epoch: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("total epochs must be > 0"));
    }
    if epoch > total {
        return Err(Error::invalid(format!(
            "epoch {epoch} beyond total {total}"
        )));
    }
    Ok(epoch as f64 / total as f64)
}

pub fn evaluate<T: Real>(
    kind: LossKind,
    target: &Field<T>,
    output: &Field<T>,
    alpha: f64,
) -> Result<LossEval<T>> {
    match kind {
        LossKind::MseRf => mse_loss(target, output),
        LossKind::MseBmode => bmode_mse_loss(target, output),
        LossKind::AdaptiveMixed => adaptive_mixed_loss(target, output, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Field<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check_gradient(target: &Field<f64>, output: &Field<f64>, alpha: f64) {
        let eval = adaptive_mixed_loss(target, output, alpha).unwrap();
        let h = 1e-6;
        let scale = eval.gradient.max_abs();
        for idx in (0..output.as_slice().len()).step_by(7) {
            let mut plus = output.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = output.clone();
            minus.as_mut_slice()[idx] -= h;
            let fd = (adaptive_mixed_loss(target, &plus, alpha).unwrap().value
                - adaptive_mixed_loss(target, &minus, alpha).unwrap().value)
                / (2.0 * h);
            let an = eval.gradient.as_slice()[idx];
            assert!(
                (fd - an).abs() <= 1e-4 * an.abs().max(1e-2 * scale),
                "alpha {alpha} idx {idx}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn mse_examples() {
        let a = random(4, 4, 1);
        let same = mse_loss(&a, &a).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.gradient.as_slice().iter().all(|&g| g == 0.0));
        let zero = Field::zeros(2, 2);
        let ones = Field::filled(2, 2, 1.0);
        let e = mse_loss(&zero, &ones).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(e.gradient.as_slice().iter().all(|&g| g == 0.5));
        assert!(mse_loss(&zero, &Field::zeros(2, 3)).is_err());
    }

    #[test]
    fn mse_gradient_matches_central_differences() {
        let t = random(6, 5, 2);
        let o = random(6, 5, 3);
        let e = mse_loss(&t, &o).unwrap();
        let h = 1e-4;
        for idx in 0..30 {
            let mut p = o.clone();
            p.as_mut_slice()[idx] += h;
            let mut m = o.clone();
            m.as_mut_slice()[idx] -= h;
            let fd =
                (mse_loss(&t, &p).unwrap().value - mse_loss(&t, &m).unwrap().value) / (2.0 * h);
            let an = e.gradient.as_slice()[idx];
            assert!(
                (fd - an).abs() <= 1e-6 * an.abs().max(1e-12),
                "{fd} vs {an}"
            );
        }
    }

    #[test]
    fn endpoints_equal_pure_losses() {
        let t = random(16, 16, 4);
        let o = random(16, 16, 5);
        assert_eq!(
            adaptive_mixed_loss(&t, &o, 1.0).unwrap(),
            mse_loss(&t, &o).unwrap()
        );
        assert_eq!(
            adaptive_mixed_loss(&t, &o, 0.0).unwrap(),
            bmode_mse_loss(&t, &o).unwrap()
        );
        let constant = Field::filled(16, 16, 0.3);
        assert!(adaptive_mixed_loss(&t, &constant, 1.0).is_ok());
        assert!(adaptive_mixed_loss(&t, &constant, 0.5).is_err());
        assert!(adaptive_mixed_loss(&t, &o, 1.5).is_err());
    }

    #[test]
    fn value_is_linear_in_alpha() {
        let t = random(16, 16, 6);
        let o = random(16, 16, 7);
        let l_rf = mse_loss(&t, &o).unwrap().value;
        let l_b = bmode_mse_loss(&t, &o).unwrap().value;
        for i in 0..=20 {
            let a = i as f64 / 20.0;
            let v = adaptive_mixed_loss(&t, &o, a).unwrap().value;
            assert!((v - ((1.0 - a) * l_b + a * l_rf)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let t = random(16, 16, 8);
        let o = random(16, 16, 9);
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            check_gradient(&t, &o, alpha);
        }
    }

    #[test]
    fn bmode_branch_is_scale_invariant() {
        let t = random(16, 16, 10);
        let o = random(16, 16, 11);
        let base = bmode_mse_loss(&t, &o).unwrap().value;
        let mut ts = t.clone();
        ts.scale(37.0);
        let mut os = o.clone();
        os.scale(37.0);
        assert!((bmode_mse_loss(&ts, &os).unwrap().value - base).abs() < 1e-9);
        // global gain difference alone costs nothing
        let mut gained = t.clone();
        gained.scale(4.0);
        assert!(bmode_mse_loss(&t, &gained).unwrap().value < 1e-20);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(alpha_schedule(0, 100).unwrap(), 0.0);
        assert_eq!(alpha_schedule(100, 100).unwrap(), 1.0);
        assert_eq!(alpha_schedule(50, 100).unwrap(), 0.5);
        assert!(alpha_schedule(0, 0).is_err());
        assert!(alpha_schedule(5, 4).is_err());
        assert_eq!(LossKind::MseRf.alpha(3, 10).unwrap(), 1.0);
        assert_eq!(LossKind::MseBmode.alpha(3, 10).unwrap(), 0.0);
    }
}
