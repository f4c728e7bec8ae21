use nalgebra::{DMatrix, DVector};

use super::condense::CondensedQP;
use crate::error::{dim_err, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Bound on the KKT residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations between active-set polishing attempts.
    pub polish_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 2000,
            polish_every: 25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution<T> {
    pub v: Vec<T>,
    pub iterations: usize,
    pub kkt_residual: T,
    pub converged: bool,
}

/// Worst violation of the box-QP optimality conditions at `v`: the gradient must be
/// non-negative at a lower bound, non-positive at an upper bound and zero in between.
pub fn kkt_residual<T: Real>(qp: &CondensedQP<T>, v: &[T]) -> T {
    let grad = qp.gradient(v);
    let mut worst = T::zero();
    for i in 0..qp.dim() {
        let (x, g) = (v[i], grad[i]);
        let r = if x <= qp.lower[i] && x >= qp.upper[i] {
            T::zero()
        } else if x <= qp.lower[i] {
            (-g).max(T::zero())
        } else if x >= qp.upper[i] {
            g.max(T::zero())
        } else {
            g.abs()
        };
        worst = worst.max(r);
    }
    worst
}

fn hessian_matrix<T: Real>(qp: &CondensedQP<T>) -> DMatrix<f64> {
    let n = qp.dim();
    DMatrix::from_row_iterator(n, n, qp.hessian.iter().map(|v| v.to_f64_lossy()))
}

/// Largest eigenvalue of the Hessian by power iteration.
fn lipschitz(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..500 {
        let y = h * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / norm;
        if (next - est).abs() <= 1e-12 * next.abs() {
            est = next;
            break;
        }
        est = next;
    }
    // Gershgorin caps the estimate from above; the power estimate approaches from below.
    let gersh = (0..n).map(|i| h.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    (est * 1.01).min(gersh).max(est)
}

/// Fixes the coordinates that sit on a bound with the gradient pushing outward and
/// solves the remaining equality-constrained problem exactly.
fn polish(h: &DMatrix<f64>, g: &[f64], lo: &[f64], hi: &[f64], x: &[f64], grad: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    for i in 0..n {
        if x[i] <= lo[i] && grad[i] >= 0.0 {
            fixed[i] = Some(lo[i]);
        } else if x[i] >= hi[i] && grad[i] <= 0.0 {
            fixed[i] = Some(hi[i]);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut out: Vec<f64> = (0..n).map(|i| fixed[i].unwrap_or(0.0)).collect();
    if free.is_empty() {
        return Some(out);
    }
    let k = free.len();
    let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
    let rhs = DVector::from_fn(k, |a, _| {
        let i = free[a];
        -g[i] - (0..n).filter_map(|j| fixed[j].map(|v| h[(i, j)] * v)).sum::<f64>()
    });
    let sol = hff.cholesky()?.solve(&rhs);
    for (a, &i) in free.iter().enumerate() {
        if sol[a] < lo[i] || sol[a] > hi[i] {
            return None;
        }
        out[i] = sol[a];
    }
    Some(out)
}

/// Accelerated projected gradient (FISTA with adaptive restart, step `1/L`) with
/// periodic active-set polishing. Returns the best iterate found and whether its
/// KKT residual reached `opts.tol`.
pub fn solve_box_qp<T: Real>(qp: &CondensedQP<T>, opts: &SolverOptions, warm: Option<&[T]>) -> Result<QpSolution<T>> {
    let n = qp.dim();
    if qp.hessian.len() != n * n || qp.lower.len() != n || qp.upper.len() != n {
        return Err(dim_err("solve_box_qp", format!("hessian {} / bounds {} for dimension {n}", qp.hessian.len(), qp.lower.len())));
    }
    if let Some(w) = warm {
        if w.len() != n {
            return Err(dim_err("solve_box_qp", format!("warm start of length {}, expected {n}", w.len())));
        }
    }
    let to64 = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let h = hessian_matrix(qp);
    let (g, lo, hi) = (to64(&qp.g), to64(&qp.lower), to64(&qp.upper));
    let grad_of = |x: &[f64]| -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        let hx = &h * xv;
        (0..n).map(|i| hx[i] + g[i]).collect()
    };
    let kkt = |x: &[f64], grad: &[f64]| -> f64 {
        (0..n)
            .map(|i| {
                if x[i] <= lo[i] && x[i] >= hi[i] {
                    0.0
                } else if x[i] <= lo[i] {
                    (-grad[i]).max(0.0)
                } else if x[i] >= hi[i] {
                    grad[i].max(0.0)
                } else {
                    grad[i].abs()
                }
            })
            .fold(0.0, f64::max)
    };
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].max(lo[i]).min(hi[i]);
        }
    };

    let mut x: Vec<f64> = warm.map_or_else(|| vec![0.0; n], to64);
    project(&mut x);
    let l = lipschitz(&h);
    let step = if l > 0.0 { 1.0 / l } else { 1.0 };

    let mut grad = grad_of(&x);
    let mut best = (kkt(&x, &grad), x.clone());
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    while iterations < opts.max_iter && best.0 > opts.tol {
        iterations += 1;
        let gy = grad_of(&y);
        let mut next: Vec<f64> = (0..n).map(|i| y[i] - step * gy[i]).collect();
        project(&mut next);
        // gradient-based restart: drop momentum when it points uphill
        let uphill: f64 = (0..n).map(|i| (y[i] - next[i]) * (next[i] - x[i])).sum();
        let t_next = if uphill > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if uphill > 0.0 { 0.0 } else { (t - 1.0) / t_next };
        y = (0..n).map(|i| next[i] + beta * (next[i] - x[i])).collect();
        x = next;
        t = t_next;

        grad = grad_of(&x);
        let r = kkt(&x, &grad);
        if r < best.0 {
            best = (r, x.clone());
        }
        if opts.polish_every > 0 && iterations % opts.polish_every == 0 {
            if let Some(p) = polish(&h, &g, &lo, &hi, &x, &grad) {
                let gp = grad_of(&p);
                let rp = kkt(&p, &gp);
                if rp < best.0 {
                    best = (rp, p.clone());
                    x = p.clone();
                    y = p;
                    t = 1.0;
                }
            }
        }
    }
    let v: Vec<T> = best.1.iter().map(|&v| T::lit(v)).collect();
    let residual = kkt_residual(qp, &v);
    Ok(QpSolution {
        v,
        iterations,
        converged: best.0 <= opts.tol,
        kkt_residual: residual,
    })
}
