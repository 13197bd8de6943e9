//! Noise2noise-style training on aberrated realisations of one scene.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{lr_factor, Adam, AdamConfig};
use super::loss::{evaluate, LossKind};
use super::model::ToyModel;
use crate::{Error, Field, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub epochs: usize,
    /// Pairs per optimizer step.
    pub batch: usize,
    pub optimizer: AdamConfig,
    /// `(epoch, factor)` milestones multiplying the learning rate.
    pub lr_schedule: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Default for TrainSpec {
    /// Full-scale settings: 5000 epochs, batch 32, lr 1e-3 halved four times.
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch: 32,
            optimizer: AdamConfig::default(),
            lr_schedule: vec![(500, 0.5), (1000, 0.5), (1500, 0.5), (4000, 0.5)],
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be ≥ 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be ≥ 1"));
        }
        if self
            .lr_schedule
            .iter()
            .any(|(_, f)| !(*f > 0.0) || !f.is_finite())
        {
            return Err(Error::invalid("learning-rate factors must be positive"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    /// Mean loss over the epoch's pairs.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ToyModel<T>,
    pub history: Vec<EpochRecord>,
    /// Set when a non-finite loss stopped training early.
    pub diverged: bool,
}

/// Uniformly random permutation with no fixed points.
pub fn random_derangement(n: usize, rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::invalid("a derangement needs at least two items"));
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

/// Trains `model` to map each version onto a different random version of the
/// same scene. Every epoch uses each version once as input, paired with a
/// target drawn by a fresh derangement.
pub fn train_noise2noise<T: Real>(
    mut model: ToyModel<T>,
    versions: &[Field<T>],
    spec: &TrainSpec,
    loss: LossKind,
) -> Result<TrainOutcome<T>> {
    spec.validate()?;
    if versions.len() < 2 {
        return Err(Error::invalid(
            "noise2noise training needs at least two versions",
        ));
    }
    let shape = versions[0].shape();
    if versions.iter().any(|v| v.shape() != shape) {
        return Err(Error::invalid("versions differ in shape"));
    }
    if model.forward(&versions[0])?.shape() != shape {
        return Err(Error::invalid("model output shape differs from the images"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = Adam::new(spec.optimizer, model.param_count())?;
    let mut history = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let alpha = loss.alpha(epoch, spec.epochs)?;
        let mut order: Vec<usize> = (0..versions.len()).collect();
        order.shuffle(&mut rng);
        let targets = random_derangement(versions.len(), &mut rng)?;
        let lr_scale = lr_factor(&spec.lr_schedule, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch) {
            let mut grads = vec![T::zero(); model.param_count()];
            for &i in chunk {
                let tape = model.forward_tape(&versions[i])?;
                let eval = evaluate(loss, &versions[targets[i]], &tape.output, alpha)?;
                total += eval.value;
                for (acc, g) in grads.iter_mut().zip(model.backward(&tape, &eval.gradient)?) {
                    *acc += g;
                }
            }
            let inv = T::of(1.0 / chunk.len() as f64);
            grads.iter_mut().for_each(|g| *g *= inv);
            adam.step(model.params_mut(), &grads, lr_scale)?;
        }
        let mean = total / versions.len() as f64;
        history.push(EpochRecord {
            epoch,
            alpha,
            loss: mean,
        });
        if !mean.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            log::warn!("training diverged at epoch {epoch}");
            return Ok(TrainOutcome {
                model,
                history,
                diverged: true,
            });
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        diverged: false,
    })
}

/// Writes `epoch,alpha,loss` rows.
pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "epoch,alpha,loss")?;
        for r in history {
            writeln!(out, "{},{},{}", r.epoch, r.alpha, r.loss)?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
