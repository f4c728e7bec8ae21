use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::buffer::{ReplayBuffer, Sequence};
use super::losses::{objective_and_gradients, LossTerms, LossWeights};
use crate::diffcore::{adam_step, AdamState, Gradients};
use crate::error::{Error, Result};
use crate::koopman::{GainMode, LatentModel};
use crate::scalar::Real;

/// Sequences per gradient-evaluation task. Fixed so the reduction order never
/// depends on the thread count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub alpha1: T,
    pub alpha2: T,
    /// Adam learning rate, shared by network weights and eigenvalues.
    pub lr: T,
    pub batch_size: usize,
    pub epochs: usize,
    /// Sequence length `T` (number of steps).
    pub horizon: usize,
    pub mode: GainMode,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            alpha1: T::lit(10.0),
            alpha2: T::lit(1e-14),
            lr: T::lit(1e-3),
            batch_size: 32,
            epochs: 100,
            horizon: 15,
            mode: GainMode::Fixed,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > T::zero() && self.alpha2 > T::zero() && self.lr > T::zero()) {
            return Err(Error::Config("alpha1, alpha2 and lr must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.horizon == 0 {
            return Err(Error::Config("batch size, epochs and horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights<T> {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            mode: self.mode,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics<T> {
    pub epoch: usize,
    /// Batch-size-weighted mean of the per-batch loss terms.
    pub losses: LossTerms<T>,
}

/// Loss terms and gradient of the batch objective, evaluated in fixed-size chunks
/// that are reduced in order.
pub fn batch_gradients<T: Real>(
    model: &LatentModel<T>,
    batch: &[&Sequence<T>],
    weights: &LossWeights<T>,
) -> Result<(LossTerms<T>, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::Contract("objective over an empty batch".into()));
    }
    let parts: Vec<(LossTerms<T>, Gradients<T>, usize)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| objective_and_gradients(model, chunk, weights).map(|(l, g)| (l, g, chunk.len())))
        .collect::<Result<_>>()?;
    let total = T::from_usize_lossy(batch.len());
    let mut grads = Gradients::default();
    let mut terms = LossTerms::default();
    for (l, g, n) in &parts {
        let w = T::from_usize_lossy(*n) / total;
        grads.accumulate(g, w);
        terms.lin += w * l.lin;
        terms.recon += w * l.recon;
        terms.pred += w * l.pred;
        terms.reg += w * l.reg;
        terms.total += w * l.total;
    }
    Ok((terms, grads))
}

/// `cfg.epochs` passes over the buffer in shuffled batches, one Adam update per batch.
pub fn train_epochs<T: Real>(
    buffer: &ReplayBuffer<T>,
    model: &mut LatentModel<T>,
    cfg: &TrainConfig<T>,
    adam: &mut AdamState<T>,
    shuffle_seed: u64,
) -> Result<Vec<EpochMetrics<T>>> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::Contract("training on an empty buffer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let weights = cfg.weights();
    let mut out = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut acc = LossTerms::<T>::default();
        let mut seen = 0usize;
        for idx in buffer.shuffled_batches(cfg.batch_size, &mut rng) {
            let batch: Vec<&Sequence<T>> = idx.iter().map(|&i| buffer.get(i)).collect();
            let (terms, grads) = batch_gradients(model, &batch, &weights)?;
            adam_step(&mut model.params, &grads, adam, cfg.lr)?;
            let w = T::from_usize_lossy(batch.len());
            acc.lin += w * terms.lin;
            acc.recon += w * terms.recon;
            acc.pred += w * terms.pred;
            acc.reg += w * terms.reg;
            acc.total += w * terms.total;
            seen += batch.len();
        }
        let n = T::from_usize_lossy(seen);
        out.push(EpochMetrics {
            epoch,
            losses: LossTerms {
                lin: acc.lin / n,
                recon: acc.recon / n,
                pred: acc.pred / n,
                reg: acc.reg / n,
                total: acc.total / n,
            },
        });
    }
    Ok(out)
}
