use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::operator::{record_operator, EigenvaluePairs, KoopmanOperator};
use crate::diffcore::{BoundMlp, Graph, Mlp, NodeId, ParamId, ParamSet, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// Network widths of the encoder, decoder and cost net (hidden layers only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub cost_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![90, 90],
            decoder_hidden: vec![90, 90],
            cost_hidden: vec![70, 70],
        }
    }
}

impl Architecture {
    /// No hidden layers: every network is a single affine map.
    pub fn linear() -> Self {
        Self {
            encoder_hidden: Vec::new(),
            decoder_hidden: Vec::new(),
            cost_hidden: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig<T> {
    /// Observation dimension `N`.
    pub obs_dim: usize,
    /// Action dimension `m`.
    pub act_dim: usize,
    /// Number of complex eigenvalue pairs `P`; the latent state has `2P` entries.
    pub pairs: usize,
    pub dt: T,
    /// Known `m × m` action cost.
    pub action_cost: Tensor<T>,
    pub arch: Architecture,
}

/// Augmented latent state `(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub s: Vec<T>,
    pub a: Vec<T>,
}

/// Encoder, decoder, cost net and eigenvalues, all stored in one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct LatentModel<T> {
    pub params: ParamSet<T>,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub cost_net: Mlp,
    pub mu: ParamId,
    pub omega: ParamId,
    pub action_cost: Tensor<T>,
    pub dt: T,
    obs_dim: usize,
    act_dim: usize,
    pairs: usize,
}

/// A model's parameters recorded as leaves of one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub encoder: BoundMlp,
    pub decoder: BoundMlp,
    pub cost_net: BoundMlp,
    pub mu: NodeId,
    pub omega: NodeId,
    /// Operator block parts `(a, b)`.
    pub op_a: NodeId,
    pub op_b: NodeId,
}

fn check_action_cost<T: Real>(r: &Tensor<T>, m: usize) -> Result<()> {
    if r.shape() != [m, m] {
        return Err(dim_err("action cost", format!("expected {m}x{m}, got {:?}", r.shape())));
    }
    for i in 0..m {
        for j in 0..m {
            let (x, y) = (r.at(i, j), r.at(j, i));
            if (x - y).abs() > T::lit(1e-12) * (T::one() + x.abs()) {
                return Err(Error::Config("action cost must be symmetric".into()));
            }
        }
        if r.at(i, i) < T::zero() {
            return Err(Error::Config("action cost must be positive semidefinite".into()));
        }
    }
    Ok(())
}

impl<T: Real> LatentModel<T> {
    /// Fresh model with seeded Glorot weights and random stable eigenvalues.
    pub fn new(cfg: &ModelConfig<T>, seed: u64) -> Result<Self> {
        if cfg.obs_dim == 0 || cfg.act_dim == 0 || cfg.pairs == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(cfg.dt > T::zero()) {
            return Err(Error::Config("sampling time must be positive".into()));
        }
        check_action_cost(&cfg.action_cost, cfg.act_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (n, m, l) = (cfg.obs_dim, cfg.act_dim, 2 * cfg.pairs);
        let dims = |inp: usize, hidden: &[usize], out: usize| {
            let mut d = vec![inp];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        let encoder = Mlp::new(&mut params, &mut rng, "encoder", &dims(n + m, &cfg.arch.encoder_hidden, l));
        let decoder = Mlp::new(&mut params, &mut rng, "decoder", &dims(l, &cfg.arch.decoder_hidden, n));
        let cost_net = Mlp::new(&mut params, &mut rng, "cost", &dims(l, &cfg.arch.cost_hidden, l));
        let eigs = EigenvaluePairs::<T>::random(&mut rng, cfg.pairs, cfg.dt.to_f64_lossy());
        let mu = params.add("eig.mu", Tensor::vector(eigs.mu));
        let omega = params.add("eig.omega", Tensor::vector(eigs.omega));
        Ok(Self {
            params,
            encoder,
            decoder,
            cost_net,
            mu,
            omega,
            action_cost: cfg.action_cost.clone(),
            dt: cfg.dt,
            obs_dim: n,
            act_dim: m,
            pairs: cfg.pairs,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        params: ParamSet<T>,
        encoder: Mlp,
        decoder: Mlp,
        cost_net: Mlp,
        mu: ParamId,
        omega: ParamId,
        action_cost: Tensor<T>,
        dt: T,
    ) -> Result<Self> {
        let obs_dim = decoder.output_dim();
        let pairs = params.get(mu).len();
        let act_dim = encoder.input_dim().checked_sub(obs_dim).ok_or_else(|| {
            Error::Format("encoder input narrower than observation".into())
        })?;
        check_action_cost(&action_cost, act_dim)?;
        Ok(Self {
            params,
            encoder,
            decoder,
            cost_net,
            mu,
            omega,
            action_cost,
            dt,
            obs_dim,
            act_dim,
            pairs,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn latent_dim(&self) -> usize {
        2 * self.pairs
    }

    pub fn eigenvalues(&self) -> EigenvaluePairs<T> {
        EigenvaluePairs {
            mu: self.params.get(self.mu).data().to_vec(),
            omega: self.params.get(self.omega).data().to_vec(),
        }
    }

    pub fn set_eigenvalues(&mut self, eigs: &EigenvaluePairs<T>) -> Result<()> {
        if eigs.pairs() != self.pairs {
            return Err(dim_err("set_eigenvalues", format!("{} pairs for a model with {}", eigs.pairs(), self.pairs)));
        }
        *self.params.get_mut(self.mu) = Tensor::vector(eigs.mu.clone());
        *self.params.get_mut(self.omega) = Tensor::vector(eigs.omega.clone());
        Ok(())
    }

    pub fn operator(&self) -> Result<KoopmanOperator<T>> {
        KoopmanOperator::build(&self.eigenvalues(), self.dt)
    }

    /// Parameter ids of all weight matrices (biases and eigenvalues excluded).
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.encoder
            .weight_ids()
            .chain(self.decoder.weight_ids())
            .chain(self.cost_net.weight_ids())
            .collect()
    }

    /// Sets every network weight and bias to zero.
    pub fn zero_networks(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().filter(|&id| id != self.mu && id != self.omega).collect();
        for id in ids {
            for v in self.params.get_mut(id).data_mut() {
                *v = T::zero();
            }
        }
    }

    pub fn bind(&self, graph: &mut Graph<T>) -> BoundModel {
        let encoder = self.encoder.bind(graph, &self.params);
        let decoder = self.decoder.bind(graph, &self.params);
        let cost_net = self.cost_net.bind(graph, &self.params);
        let mu = self.params.leaf(graph, self.mu);
        let omega = self.params.leaf(graph, self.omega);
        let (op_a, op_b) = record_operator(graph, mu, omega, self.dt);
        BoundModel {
            encoder,
            decoder,
            cost_net,
            mu,
            omega,
            op_a,
            op_b,
        }
    }

    fn check_len(&self, ctx: &'static str, what: &str, got: usize, want: usize) -> Result<()> {
        if got != want {
            return Err(dim_err(ctx, format!("{what} has length {got}, model expects {want}")));
        }
        Ok(())
    }

    /// `s = φ(o, a)`.
    pub fn encode(&self, o: &[T], a: &[T]) -> Result<Vec<T>> {
        self.check_len("encode", "observation", o.len(), self.obs_dim)?;
        self.check_len("encode", "action", a.len(), self.act_dim)?;
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, &self.params);
        let x = g.constant(Tensor::vector([o, a].concat()));
        let s = enc.forward(&mut g, x)?;
        Ok(g.value(s).data().to_vec())
    }

    /// `B_φ = ∂φ/∂a` at `(o, a)` as a `2P × m` matrix.
    pub fn action_jacobian(&self, o: &[T], a: &[T]) -> Result<Tensor<T>> {
        self.check_len("action_jacobian", "observation", o.len(), self.obs_dim)?;
        self.check_len("action_jacobian", "action", a.len(), self.act_dim)?;
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, &self.params);
        let x = g.constant(Tensor::vector([o, a].concat()));
        let s = enc.forward(&mut g, x)?;
        let cols = action_columns(&mut g, x, s, self.obs_dim, self.act_dim)?;
        Ok(columns_to_matrix(&g, &cols, self.latent_dim()))
    }

    /// Pseudo-observation `ô = φ⁻¹(s)`.
    pub fn decode(&self, s: &[T]) -> Result<Vec<T>> {
        self.check_len("decode", "latent state", s.len(), self.latent_dim())?;
        let mut g = Graph::new();
        let dec = self.decoder.bind(&mut g, &self.params);
        let x = g.constant(Tensor::vector(s.to_vec()));
        let o = dec.forward(&mut g, x)?;
        Ok(g.value(o).data().to_vec())
    }

    /// Cost row `C_s = ψ(s)`.
    pub fn cost_row(&self, s: &[T]) -> Result<Vec<T>> {
        self.check_len("cost_row", "latent state", s.len(), self.latent_dim())?;
        let mut g = Graph::new();
        let net = self.cost_net.bind(&mut g, &self.params);
        let x = g.constant(Tensor::vector(s.to_vec()));
        let c = net.forward(&mut g, x)?;
        Ok(g.value(c).data().to_vec())
    }

    /// `ĉ = (C_s·s)² + aᵀRa` with `C_s = ψ(s)`.
    pub fn cost_predict(&self, s: &[T], a: &[T]) -> Result<T> {
        self.check_len("cost_predict", "action", a.len(), self.act_dim)?;
        let row = self.cost_row(s)?;
        let y: T = row.iter().zip(s).map(|(&c, &x)| c * x).sum();
        Ok(y * y + quad_form(&self.action_cost, a))
    }

    /// Everything the planner needs at one control step from one pass of each network:
    /// `s_0`, `B_φ0` and `C_{s0}`.
    pub fn linearize(&self, o: &[T], a: &[T]) -> Result<Linearization<T>> {
        self.check_len("linearize", "observation", o.len(), self.obs_dim)?;
        self.check_len("linearize", "action", a.len(), self.act_dim)?;
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, &self.params);
        let cost = self.cost_net.bind(&mut g, &self.params);
        let x = g.constant(Tensor::vector([o, a].concat()));
        let s = enc.forward(&mut g, x)?;
        let cols = action_columns(&mut g, x, s, self.obs_dim, self.act_dim)?;
        let c = cost.forward(&mut g, s)?;
        Ok(Linearization {
            s0: g.value(s).data().to_vec(),
            b0: columns_to_matrix(&g, &cols, self.latent_dim()),
            c0: g.value(c).data().to_vec(),
        })
    }
}

/// Latent quantities evaluated once at `k = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearization<T> {
    pub s0: Vec<T>,
    /// `2P × m`.
    pub b0: Tensor<T>,
    pub c0: Vec<T>,
}

pub(crate) fn quad_form<T: Real>(r: &Tensor<T>, a: &[T]) -> T {
    let m = a.len();
    let mut acc = T::zero();
    for i in 0..m {
        for j in 0..m {
            acc += a[i] * r.at(i, j) * a[j];
        }
    }
    acc
}

/// Tangent pass of the encoder along each action coordinate; column `j` is
/// `∂φ/∂a_j` for every row of the (possibly batched) input `x`.
pub fn action_columns<T: Real>(
    graph: &mut Graph<T>,
    x: NodeId,
    s: NodeId,
    obs_dim: usize,
    act_dim: usize,
) -> Result<Vec<NodeId>> {
    let shape = graph.shape(x).to_vec();
    let (rows, cols) = graph.value(x).rows_cols();
    if cols != obs_dim + act_dim {
        return Err(dim_err("action_columns", format!("input has {cols} columns, expected {}", obs_dim + act_dim)));
    }
    (0..act_dim)
        .map(|j| {
            let mut e = Tensor::zeros(&shape);
            for r in 0..rows {
                e.data_mut()[r * cols + obs_dim + j] = T::one();
            }
            let e = graph.constant(e);
            graph.jvp(&[(x, e)], s)
        })
        .collect()
}

fn columns_to_matrix<T: Real>(g: &Graph<T>, cols: &[NodeId], rows: usize) -> Tensor<T> {
    let m = cols.len();
    let mut b = Tensor::zeros(&[rows, m]);
    for (j, &c) in cols.iter().enumerate() {
        for (i, &v) in g.value(c).data().iter().enumerate() {
            b.data_mut()[i * m + j] = v;
        }
    }
    b
}

/// One latent step: `s' = Λs + BΔa`, `a' = a + Δa`.
pub fn latent_step<T: Real>(
    state: &LatentState<T>,
    da: &[T],
    op: &KoopmanOperator<T>,
    b: &Tensor<T>,
) -> Result<LatentState<T>> {
    if state.s.len() != op.dim() || b.shape() != [op.dim(), da.len()] || state.a.len() != da.len() {
        return Err(dim_err(
            "latent_step",
            format!(
                "s {}, a {}, Δa {}, B {:?}, operator {}",
                state.s.len(),
                state.a.len(),
                da.len(),
                b.shape(),
                op.dim()
            ),
        ));
    }
    let mut s = op.apply(&state.s);
    let bda = b.matvec(da)?;
    for (x, y) in s.iter_mut().zip(bda) {
        *x += y;
    }
    let a = state.a.iter().zip(da).map(|(&x, &y)| x + y).collect();
    Ok(LatentState { s, a })
}
