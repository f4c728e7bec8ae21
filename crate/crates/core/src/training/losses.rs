use super::buffer::Sequence;
use crate::diffcore::{Gradients, Graph, NodeId, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::koopman::{record_rollout, BoundModel, GainMode, LatentModel};
use crate::scalar::Real;

/// Weights of the composite objective `L_lin + α1 (L_recon + L_pred) + α2 L_reg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<T> {
    pub alpha1: T,
    pub alpha2: T,
    pub mode: GainMode,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            alpha1: T::lit(10.0),
            alpha2: T::lit(1e-14),
            mode: GainMode::Fixed,
        }
    }
}

/// Scalar loss nodes of one recorded batch.
#[derive(Clone, Copy, Debug)]
pub struct RecordedLosses {
    pub lin: NodeId,
    pub recon: NodeId,
    pub pred: NodeId,
    pub reg: NodeId,
    pub total: NodeId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<T> {
    pub lin: T,
    pub recon: T,
    pub pred: T,
    pub reg: T,
    pub total: T,
}

impl<T: Real> LossTerms<T> {
    pub fn read(graph: &Graph<T>, rec: &RecordedLosses) -> Self {
        Self {
            lin: graph.value(rec.lin).item(),
            recon: graph.value(rec.recon).item(),
            pred: graph.value(rec.pred).item(),
            reg: graph.value(rec.reg).item(),
            total: graph.value(rec.total).item(),
        }
    }
}

fn stack_rows<T: Real>(rows: impl Iterator<Item = Vec<T>>, cols: usize) -> Result<Tensor<T>> {
    let data: Vec<T> = rows.flatten().collect();
    let r = if cols == 0 { 0 } else { data.len() / cols };
    Tensor::matrix(r, cols, data)
}

/// Records all four losses for a batch of equal-length sequences. Each batch
/// term equals the mean over sequences of the per-sequence loss.
pub fn record_losses<T: Real>(
    graph: &mut Graph<T>,
    model: &LatentModel<T>,
    bound: &BoundModel,
    batch: &[&Sequence<T>],
    weights: &LossWeights<T>,
) -> Result<RecordedLosses> {
    let Some(first) = batch.first() else {
        return Err(Error::Contract("objective over an empty batch".into()));
    };
    let horizon = first.horizon();
    let (n, m) = (model.obs_dim(), model.act_dim());
    for s in batch {
        if s.horizon() != horizon || s.obs_dim() != n || s.act_dim() != m {
            return Err(dim_err(
                "record_losses",
                format!("sequence (N, m, T) = ({}, {}, {}), expected ({n}, {m}, {horizon})", s.obs_dim(), s.act_dim(), s.horizon()),
            ));
        }
    }
    let at = |k: usize| batch.iter().map(move |s| &s.transitions[k]);

    let o0 = graph.constant(stack_rows(at(0).map(|t| t.o.clone()), n)?);
    let a0 = stack_rows(at(0).map(|t| t.a.clone()), m)?;
    let increments = (0..horizon)
        .map(|k| stack_rows(at(k).map(|t| t.da.clone()), m))
        .collect::<Result<Vec<_>>>()?;
    let roll = record_rollout(graph, model, bound, o0, &a0, &increments, weights.mode)?;

    // φ(o_{k+1}, a_{k+1}) for k = 0..T-1, step-major
    let targets_in = stack_rows(
        (1..=horizon).flat_map(|k| at(k).map(|t| [t.o.as_slice(), t.a.as_slice()].concat())),
        n + m,
    )?;
    let targets_in = graph.constant(targets_in);
    let targets = bound.encoder.forward(graph, targets_in)?;
    let predicted = graph.concat_rows(&roll.states[1..])?;
    let lin = graph.mse(targets, predicted)?;

    let c0 = graph.constant(Tensor::vector(at(0).map(|t| t.c).collect()));
    let recon = graph.mse(roll.costs[0], c0)?;

    let c_rest = Tensor::matrix(horizon, batch.len(), (1..=horizon).flat_map(|k| at(k).map(|t| t.c)).collect())?;
    let c_rest = graph.constant(c_rest);
    let c_hat = graph.concat_rows(&roll.costs[1..])?;
    let pred = graph.mse(c_hat, c_rest)?;

    let reg = record_l2(graph, bound)?;

    let cost_terms = graph.add(recon, pred)?;
    let weighted = graph.scale(cost_terms, weights.alpha1);
    let reg_w = graph.scale(reg, weights.alpha2);
    let total = graph.add(lin, weighted)?;
    let total = graph.add(total, reg_w)?;
    Ok(RecordedLosses {
        lin,
        recon,
        pred,
        reg,
        total,
    })
}

/// Sum of squared weight-matrix entries of all three networks.
pub fn record_l2<T: Real>(graph: &mut Graph<T>, bound: &BoundModel) -> Result<NodeId> {
    let weights: Vec<NodeId> = bound
        .encoder
        .weights()
        .chain(bound.decoder.weights())
        .chain(bound.cost_net.weights())
        .collect();
    let mut acc = graph.constant(Tensor::scalar(T::zero()));
    for w in weights {
        let s = graph.sum_squares(w);
        acc = graph.add(acc, s)?;
    }
    Ok(acc)
}

fn single<T: Real>(model: &LatentModel<T>, seq: &Sequence<T>, mode: GainMode) -> Result<LossTerms<T>> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let w = LossWeights {
        mode,
        ..LossWeights::default()
    };
    let rec = record_losses(&mut g, model, &bound, &[seq], &w)?;
    Ok(LossTerms::read(&g, &rec))
}

/// `(1/T) Σ_{k<T} MSE(φ(o_{k+1}, a_{k+1}), s_{k+1})`.
pub fn linear_loss<T: Real>(model: &LatentModel<T>, seq: &Sequence<T>, mode: GainMode) -> Result<T> {
    Ok(single(model, seq, mode)?.lin)
}

/// `(c_0 − ĉ_0)²`.
pub fn cost_recon_loss<T: Real>(model: &LatentModel<T>, seq: &Sequence<T>) -> Result<T> {
    Ok(single(model, seq, GainMode::Fixed)?.recon)
}

/// `(1/T) Σ_{k=1..T} (c_k − ĉ_k)²`.
pub fn cost_pred_loss<T: Real>(model: &LatentModel<T>, seq: &Sequence<T>, mode: GainMode) -> Result<T> {
    Ok(single(model, seq, mode)?.pred)
}

pub fn l2_reg<T: Real>(model: &LatentModel<T>) -> T {
    model.weight_ids().into_iter().map(|id| model.params.get(id).sum_squares()).sum()
}

pub fn total_objective<T: Real>(model: &LatentModel<T>, batch: &[&Sequence<T>], weights: &LossWeights<T>) -> Result<T> {
    Ok(objective_and_gradients(model, batch, weights)?.0.total)
}

pub fn objective_and_gradients<T: Real>(
    model: &LatentModel<T>,
    batch: &[&Sequence<T>],
    weights: &LossWeights<T>,
) -> Result<(LossTerms<T>, Gradients<T>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let rec = record_losses(&mut g, model, &bound, batch, weights)?;
    let grads = g.backward(rec.total)?;
    Ok((LossTerms::read(&g, &rec), grads))
}
