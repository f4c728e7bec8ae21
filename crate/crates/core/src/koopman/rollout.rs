use super::model::{action_columns, quad_form, BoundModel, LatentModel};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// Which input matrix and cost row a multi-step prediction uses after `k = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GainMode {
    /// `B_φ0` and `C_{s0}` held for the whole rollout, matching the planner.
    #[default]
    Fixed,
    /// `B_φk` from the decoded pseudo-observation and `C_{s_k} = ψ(s_k)` at every step.
    Decoded,
}

impl std::str::FromStr for GainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed-gain" => Ok(Self::Fixed),
            "decoded" | "decoded-gain" => Ok(Self::Decoded),
            other => Err(Error::Config(format!("unknown gain mode `{other}`"))),
        }
    }
}

/// Graph nodes of a batched rollout. Rows of every node are sequences of the batch.
#[derive(Clone, Debug)]
pub struct RecordedRollout<T> {
    /// `s_k`, each `[B, 2P]`, for `k = 0..=T`.
    pub states: Vec<NodeId>,
    /// `ĉ_k`, each `[B]`, for `k = 0..=T`.
    pub costs: Vec<NodeId>,
    /// `a_k`, each `[B, m]`, for `k = 0..=T`.
    pub actions: Vec<Tensor<T>>,
}

/// Encodes `(o_0, a_0)` once and propagates in the latent space with the given increments.
///
/// `o0` is a `[B, N]` node; `a0` and every increment are `[B, m]`.
pub fn record_rollout<T: Real>(
    graph: &mut Graph<T>,
    model: &LatentModel<T>,
    bound: &BoundModel,
    o0: NodeId,
    a0: &Tensor<T>,
    increments: &[Tensor<T>],
    mode: GainMode,
) -> Result<RecordedRollout<T>> {
    if increments.is_empty() {
        return Err(Error::Contract("rollout needs at least one increment".into()));
    }
    let (n, m) = (model.obs_dim(), model.act_dim());
    let (rows, _) = graph.value(o0).rows_cols();
    if graph.shape(o0) != [rows, n] || a0.shape() != [rows, m] {
        return Err(dim_err("rollout", format!("o0 {:?}, a0 {:?}", graph.shape(o0), a0.shape())));
    }
    if let Some(bad) = increments.iter().find(|d| d.shape() != [rows, m]) {
        return Err(dim_err("rollout", format!("increment {:?}, expected [{rows}, {m}]", bad.shape())));
    }

    let mut actions = Vec::with_capacity(increments.len() + 1);
    actions.push(a0.clone());
    for d in increments {
        let prev = actions.last().expect("non-empty");
        actions.push(prev.zip_map(d, |a, b| a + b));
    }

    let a0n = graph.constant(a0.clone());
    let x0 = graph.concat_cols(o0, a0n)?;
    let s0 = bound.encoder.forward(graph, x0)?;
    let mut b_cols = action_columns(graph, x0, s0, n, m)?;
    let c0 = bound.cost_net.forward(graph, s0)?;

    let mut states = vec![s0];
    let mut costs = vec![predicted_cost(graph, model, c0, s0, &actions[0])?];
    let mut c_row = c0;
    for (k, d) in increments.iter().enumerate() {
        let s = *states.last().expect("non-empty");
        if mode == GainMode::Decoded && k > 0 {
            let o_hat = bound.decoder.forward(graph, s)?;
            let ak = graph.constant(actions[k].clone());
            let xk = graph.concat_cols(o_hat, ak)?;
            let sk = bound.encoder.forward(graph, xk)?;
            b_cols = action_columns(graph, xk, sk, n, m)?;
        }
        let mut next = graph.block_rot(bound.op_a, bound.op_b, s)?;
        for (j, &col) in b_cols.iter().enumerate() {
            let dj = graph.constant(Tensor::vector((0..rows).map(|r| d.at(r, j)).collect()));
            let term = graph.mul_col(col, dj)?;
            next = graph.add(next, term)?;
        }
        states.push(next);
        if mode == GainMode::Decoded {
            c_row = bound.cost_net.forward(graph, next)?;
        }
        costs.push(predicted_cost(graph, model, c_row, next, &actions[k + 1])?);
    }
    Ok(RecordedRollout { states, costs, actions })
}

/// `(C·s)² + aᵀRa` per row.
fn predicted_cost<T: Real>(
    graph: &mut Graph<T>,
    model: &LatentModel<T>,
    c_row: NodeId,
    s: NodeId,
    actions: &Tensor<T>,
) -> Result<NodeId> {
    let y = graph.row_dot(c_row, s)?;
    let sq = graph.square(y);
    let (rows, _) = actions.rows_cols();
    let ra: Vec<T> = (0..rows).map(|r| quad_form(&model.action_cost, actions.row(r))).collect();
    let ra = graph.constant(Tensor::new(graph.shape(sq).to_vec(), ra)?);
    graph.add(sq, ra)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep<T> {
    pub s: Vec<T>,
    pub a: Vec<T>,
    pub cost: T,
}

impl<T: Real> LatentModel<T> {
    /// Multi-step prediction from a single observation; returns `(s_k, a_k, ĉ_k)` for `k = 0..=T`.
    pub fn rollout(&self, o0: &[T], a0: &[T], increments: &[Vec<T>], mode: GainMode) -> Result<Vec<RolloutStep<T>>> {
        let (n, m) = (self.obs_dim(), self.act_dim());
        if o0.len() != n || a0.len() != m {
            return Err(dim_err("rollout", format!("o0 {} / a0 {}, expected {n} / {m}", o0.len(), a0.len())));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let o = g.constant(Tensor::matrix(1, n, o0.to_vec())?);
        let a = Tensor::matrix(1, m, a0.to_vec())?;
        let incs = increments
            .iter()
            .map(|d| Tensor::matrix(1, d.len(), d.clone()))
            .collect::<Result<Vec<_>>>()?;
        let rec = record_rollout(&mut g, self, &bound, o, &a, &incs, mode)?;
        Ok(rec
            .states
            .iter()
            .zip(&rec.costs)
            .zip(&rec.actions)
            .map(|((&s, &c), a)| RolloutStep {
                s: g.value(s).data().to_vec(),
                a: a.data().to_vec(),
                cost: g.value(c).data()[0],
            })
            .collect())
    }
}
