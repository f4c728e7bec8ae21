use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::diffcore::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::koopman::KoopmanOperator;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct PlanConfig<T> {
    /// Horizon `H`.
    pub horizon: usize,
    /// Action cost `R`, `m × m`, positive semidefinite.
    pub action_cost: Tensor<T>,
    /// Increment cost `R̃`, `m × m`, positive definite.
    pub increment_cost: Tensor<T>,
    pub a_min: Vec<T>,
    pub a_max: Vec<T>,
}

impl<T: Real> PlanConfig<T> {
    /// Scalar-weighted costs `R = r·I`, `R̃ = r̃·I`.
    pub fn isotropic(horizon: usize, r: T, r_tilde: T, a_min: Vec<T>, a_max: Vec<T>) -> Result<Self> {
        let m = a_min.len();
        let diag = |w: T| {
            let mut t = Tensor::zeros(&[m, m]);
            for i in 0..m {
                t.data_mut()[i * m + i] = w;
            }
            t
        };
        let cfg = Self {
            horizon,
            action_cost: diag(r),
            increment_cost: diag(r_tilde),
            a_min,
            a_max,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn act_dim(&self) -> usize {
        self.a_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.a_min.len();
        if self.horizon == 0 {
            return Err(Error::Config("planning horizon must be at least 1".into()));
        }
        if m == 0 || self.a_max.len() != m {
            return Err(dim_err("PlanConfig", format!("bounds of length {} and {}", m, self.a_max.len())));
        }
        if self.a_min.iter().zip(&self.a_max).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("action bounds need a_min < a_max".into()));
        }
        for (name, mat) in [("R", &self.action_cost), ("R̃", &self.increment_cost)] {
            if mat.shape() != [m, m] {
                return Err(dim_err("PlanConfig", format!("{name} is {:?}, expected {m}x{m}", mat.shape())));
            }
            if (0..m).any(|i| (0..m).any(|j| mat.at(i, j) != mat.at(j, i))) {
                return Err(Error::Config(format!("{name} must be symmetric")));
            }
        }
        let rt = to_dmatrix(&self.increment_cost);
        if rt.cholesky().is_none() {
            return Err(Error::Config("R̃ must be positive definite".into()));
        }
        let r = to_dmatrix(&self.action_cost);
        if r.symmetric_eigenvalues().iter().any(|&e| e < -1e-12) {
            return Err(Error::Config("R must be positive semidefinite".into()));
        }
        Ok(())
    }
}

pub(crate) fn to_dmatrix<T: Real>(t: &Tensor<T>) -> DMatrix<f64> {
    let (r, c) = t.rows_cols();
    DMatrix::from_row_iterator(r, c, t.data().iter().map(|v| v.to_f64_lossy()))
}

/// `J(v) = ½ vᵀ H v + gᵀ v + constant` over the stacked actions `v = (a_1, …, a_H)`,
/// with per-coordinate bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedQP<T> {
    /// Row-major `(H·m) × (H·m)`.
    pub hessian: Vec<T>,
    pub g: Vec<T>,
    pub constant: T,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub horizon: usize,
    pub act_dim: usize,
}

impl<T: Real> CondensedQP<T> {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> T {
        self.hessian[i * self.dim() + j]
    }

    /// `H v + g`.
    pub fn gradient(&self, v: &[T]) -> Vec<T> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let row = &self.hessian[i * n..(i + 1) * n];
                row.iter().zip(v).fold(self.g[i], |acc, (&h, &x)| acc + h * x)
            })
            .collect()
    }

    pub fn objective(&self, v: &[T]) -> T {
        let n = self.dim();
        let half = T::lit(0.5);
        let mut acc = self.constant;
        for i in 0..n {
            let hv: T = (0..n).map(|j| self.hessian[i * n + j] * v[j]).sum();
            acc += half * v[i] * hv + self.g[i] * v[i];
        }
        acc
    }

    pub fn project(&self, v: &mut [T]) {
        for ((x, &lo), &hi) in v.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.max(lo).min(hi);
        }
    }

    /// Plain-text dump (dimensions, `H`, `g`, bounds, constant) for cross-checking with other solvers.
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.dim();
        writeln!(f, "# n horizon act_dim\n{n} {} {}", self.horizon, self.act_dim)?;
        writeln!(f, "# hessian")?;
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:e}", self.hess(i, j).to_f64_lossy())).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        for (name, vec) in [("g", &self.g), ("lower", &self.lower), ("upper", &self.upper)] {
            let row: Vec<String> = vec.iter().map(|v| format!("{:e}", v.to_f64_lossy())).collect();
            writeln!(f, "# {name}\n{}", row.join(" "))?;
        }
        writeln!(f, "# constant\n{:e}", self.constant.to_f64_lossy())?;
        f.flush()?;
        Ok(())
    }
}

/// Block `j` of `Λ^k` is `e^{kμΔt}·rot(kωΔt)`.
pub fn lambda_power<T: Real>(op: &KoopmanOperator<T>, k: usize) -> KoopmanOperator<T> {
    op.pow(k)
}

/// Eliminates the latent states from
/// `Σ_{k=1..H} (C_0 s_k)² + a_kᵀ R a_k + Δa_{k-1}ᵀ R̃ Δa_{k-1}`
/// with `s_k = Λ^k s_0 + Σ_{j<k} Λ^{k-1-j} B_0 Δa_j` and `Δa_j = a_{j+1} − a_j`.
///
/// The output is scalar, so only the rows `C_0 Λ^i` are ever formed: the
/// latent dimension enters linearly.
pub fn condense<T: Real>(
    op: &KoopmanOperator<T>,
    b0: &Tensor<T>,
    c0: &[T],
    s0: &[T],
    a0: &[T],
    cfg: &PlanConfig<T>,
) -> Result<CondensedQP<T>> {
    cfg.validate()?;
    let (l, m, h) = (op.dim(), cfg.act_dim(), cfg.horizon);
    if b0.shape() != [l, m] || c0.len() != l || s0.len() != l || a0.len() != m {
        return Err(dim_err(
            "condense",
            format!(
                "B0 {:?}, C0 {}, s0 {}, a0 {} for latent {l} and {m} actions",
                b0.shape(),
                c0.len(),
                s0.len(),
                a0.len()
            ),
        ));
    }
    let n = h * m;
    let dot = |x: &[T], y: &[T]| x.iter().zip(y).fold(T::zero(), |acc, (&p, &q)| acc + p * q);

    // markov[i] = C0 Λ^i B0 (length m), free[k] = C0 Λ^k s0
    let mut markov = vec![vec![T::zero(); m]; h];
    let mut free = vec![T::zero(); h + 1];
    let mut row = c0.to_vec();
    for i in 0..=h {
        if i > 0 {
            row = op.apply_left(&row);
        }
        free[i] = dot(&row, s0);
        if i < h {
            for (j, g) in markov[i].iter_mut().enumerate() {
                *g = (0..l).fold(T::zero(), |acc, r| acc + row[r] * b0.at(r, j));
            }
        }
    }

    // y = y0 + K v with K[r, i] = G_{r−i} − G_{r−i−1} (block Toeplitz, lower triangular)
    let diff: Vec<Vec<T>> = (0..h)
        .map(|d| {
            (0..m)
                .map(|j| markov[d][j] - if d > 0 { markov[d - 1][j] } else { T::zero() })
                .collect()
        })
        .collect();
    let y0: Vec<T> = (0..h).map(|r| free[r + 1] - dot(&markov[r], a0)).collect();

    let two = T::lit(2.0);
    let mut hess = vec![T::zero(); n * n];
    let mut g = vec![T::zero(); n];
    // KᵀK and Kᵀy0
    for i in 0..h {
        for j in 0..h {
            for r in i.max(j)..h {
                let (di, dj) = (&diff[r - i], &diff[r - j]);
                for p in 0..m {
                    for q in 0..m {
                        hess[(i * m + p) * n + j * m + q] += two * di[p] * dj[q];
                    }
                }
            }
        }
        for r in i..h {
            for p in 0..m {
                g[i * m + p] += two * diff[r - i][p] * y0[r];
            }
        }
    }
    let (ra, rt) = (&cfg.action_cost, &cfg.increment_cost);
    // I⊗R and Dᵀ(I⊗R̃)D: D has identity blocks on the diagonal and −I below it
    for k in 0..h {
        for p in 0..m {
            for q in 0..m {
                let idx = |a: usize, b: usize| (a * m + p) * n + b * m + q;
                hess[idx(k, k)] += two * ra.at(p, q);
                hess[idx(k, k)] += two * rt.at(p, q);
                if k + 1 < h {
                    hess[idx(k, k)] += two * rt.at(p, q);
                    hess[idx(k, k + 1)] -= two * rt.at(p, q);
                    hess[idx(k + 1, k)] -= two * rt.at(p, q);
                }
            }
        }
    }
    // −2 Dᵀ(I⊗R̃)E with E = (a0, 0, …)
    for p in 0..m {
        g[p] -= two * (0..m).fold(T::zero(), |acc, q| acc + rt.at(p, q) * a0[q]);
    }
    let constant = dot(&y0, &y0)
        + (0..m).fold(T::zero(), |acc, p| acc + a0[p] * (0..m).fold(T::zero(), |s, q| s + rt.at(p, q) * a0[q]));

    let lower = (0..h).flat_map(|_| cfg.a_min.iter().copied()).collect();
    let upper = (0..h).flat_map(|_| cfg.a_max.iter().copied()).collect();
    Ok(CondensedQP {
        hessian: hess,
        g,
        constant,
        lower,
        upper,
        horizon: h,
        act_dim: m,
    })
}
