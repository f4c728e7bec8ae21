use rand::Rng;

use crate::diffcore::{Graph, NodeId};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Real;

/// `P` complex-conjugate eigenvalue pairs `μ_j ± iω_j` (continuous time).
#[derive(Clone, Debug, PartialEq)]
pub struct EigenvaluePairs<T> {
    pub mu: Vec<T>,
    pub omega: Vec<T>,
}

impl<T: Real> EigenvaluePairs<T> {
    pub fn new(mu: Vec<T>, omega: Vec<T>) -> Result<Self> {
        if mu.len() != omega.len() {
            return Err(dim_err("EigenvaluePairs", format!("{} decay rates, {} frequencies", mu.len(), omega.len())));
        }
        if mu.iter().chain(&omega).any(|v| !v.is_finite()) {
            return Err(Error::Config("eigenvalues must be finite".into()));
        }
        Ok(Self { mu, omega })
    }

    /// Stable start below Nyquist: `μ ~ U[-0.3, 0]`, `ω ~ U[0, π/(4Δt)]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, pairs: usize, dt: f64) -> Self {
        let mu = (0..pairs).map(|_| T::lit(rng.random_range(-0.3..=0.0))).collect();
        let w_max = std::f64::consts::PI / (4.0 * dt);
        let omega = (0..pairs).map(|_| T::lit(rng.random_range(0.0..=w_max))).collect();
        Self { mu, omega }
    }

    pub fn pairs(&self) -> usize {
        self.mu.len()
    }
}

/// Block-diagonal discrete-time operator: block `j` is
/// `e^{μ_j Δt} · [[cos ω_jΔt, −sin ω_jΔt], [sin ω_jΔt, cos ω_jΔt]]`.
///
/// Each block is kept as `(a_j, b_j) = e^{μ_jΔt}(cos ω_jΔt, sin ω_jΔt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KoopmanOperator<T> {
    mu: Vec<T>,
    omega: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    dt: T,
    /// Number of one-step applications this operator represents.
    power: usize,
}

impl<T: Real> KoopmanOperator<T> {
    pub fn build(eigs: &EigenvaluePairs<T>, dt: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::Config(format!("sampling time must be positive, got {dt}")));
        }
        Ok(Self::power_of(&eigs.mu, &eigs.omega, dt, 1))
    }

    fn power_of(mu: &[T], omega: &[T], dt: T, k: usize) -> Self {
        let kt = T::from_usize_lossy(k) * dt;
        let (a, b) = mu
            .iter()
            .zip(omega)
            .map(|(&m, &w)| {
                let r = (m * kt).exp();
                let (s, c) = (w * kt).sin_cos();
                (r * c, r * s)
            })
            .unzip();
        Self {
            mu: mu.to_vec(),
            omega: omega.to_vec(),
            a,
            b,
            dt,
            power: k,
        }
    }

    /// `Λ^k` in closed form, `O(P)`.
    pub fn pow(&self, k: usize) -> Self {
        Self::power_of(&self.mu, &self.omega, self.dt, self.power * k)
    }

    pub fn pairs(&self) -> usize {
        self.a.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.a.len()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn block(&self, j: usize) -> [[T; 2]; 2] {
        [[self.a[j], -self.b[j]], [self.b[j], self.a[j]]]
    }

    pub fn cos_parts(&self) -> &[T] {
        &self.a
    }

    pub fn sin_parts(&self) -> &[T] {
        &self.b
    }

    pub fn determinant(&self, j: usize) -> T {
        self.a[j] * self.a[j] + self.b[j] * self.b[j]
    }

    /// `Λ·s`, blockwise.
    pub fn apply(&self, s: &[T]) -> Vec<T> {
        debug_assert_eq!(s.len(), self.dim());
        let mut out = vec![T::zero(); s.len()];
        for j in 0..self.pairs() {
            let (x, y) = (s[2 * j], s[2 * j + 1]);
            out[2 * j] = self.a[j] * x - self.b[j] * y;
            out[2 * j + 1] = self.b[j] * x + self.a[j] * y;
        }
        out
    }

    /// `rᵀ·Λ` for a row vector `r`, blockwise.
    pub fn apply_left(&self, r: &[T]) -> Vec<T> {
        debug_assert_eq!(r.len(), self.dim());
        let mut out = vec![T::zero(); r.len()];
        for j in 0..self.pairs() {
            let (x, y) = (r[2 * j], r[2 * j + 1]);
            out[2 * j] = self.a[j] * x + self.b[j] * y;
            out[2 * j + 1] = -self.b[j] * x + self.a[j] * y;
        }
        out
    }

    pub fn dense(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        let mut d = vec![vec![T::zero(); n]; n];
        for j in 0..self.pairs() {
            let blk = self.block(j);
            for (r, row) in blk.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    d[2 * j + r][2 * j + c] = v;
                }
            }
        }
        d
    }
}

/// Records `(a, b)` block parts of the operator on a graph, differentiable in `μ` and `ω`.
pub fn record_operator<T: Real>(graph: &mut Graph<T>, mu: NodeId, omega: NodeId, dt: T) -> (NodeId, NodeId) {
    let mdt = graph.scale(mu, dt);
    let wdt = graph.scale(omega, dt);
    let r = graph.exp(mdt);
    let c = graph.cos(wdt);
    let s = graph.sin(wdt);
    let a = graph.mul(r, c).expect("equal pair counts");
    let b = graph.mul(r, s).expect("equal pair counts");
    (a, b)
}
