use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::Tensor;
use crate::koopman::{Architecture, EigenvaluePairs, KoopmanOperator, LatentModel, ModelConfig};

struct Instance {
    op: KoopmanOperator<f64>,
    b0: Tensor<f64>,
    c0: Vec<f64>,
    s0: Vec<f64>,
    a0: Vec<f64>,
    cfg: PlanConfig<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng, pairs: usize, m: usize, horizon: usize) -> Instance {
    let eigs = EigenvaluePairs::new(
        (0..pairs).map(|_| rng.random_range(-1.0..0.2)).collect(),
        (0..pairs).map(|_| rng.random_range(0.0..15.0)).collect(),
    )
    .unwrap();
    let l = 2 * pairs;
    let mut sym = |scale: f64, shift: f64| {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let s = (&a * a.transpose()) * scale + DMatrix::identity(m, m) * shift;
        Tensor::matrix(m, m, (0..m * m).map(|k| s[(k / m, k % m)]).collect()).unwrap()
    };
    let action_cost = sym(0.01, 0.0);
    let increment_cost = sym(0.05, 0.01);
    Instance {
        op: KoopmanOperator::build(&eigs, 0.05).unwrap(),
        b0: Tensor::matrix(l, m, (0..l * m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        c0: (0..l).map(|_| rng.random_range(-1.0..1.0)).collect(),
        s0: (0..l).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a0: (0..m).map(|_| rng.random_range(-0.5..0.5)).collect(),
        cfg: PlanConfig {
            horizon,
            action_cost,
            increment_cost,
            a_min: vec![-1.0; m],
            a_max: vec![1.0; m],
        },
    }
}

/// Cost of the planned actions by stepping the latent model forward.
fn simulated_cost(inst: &Instance, v: &[f64]) -> f64 {
    let m = inst.a0.len();
    let quad = |r: &Tensor<f64>, x: &[f64]| -> f64 { (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| x[i] * r.at(i, j) * x[j]).sum() };
    let mut s = inst.s0.clone();
    let mut a = inst.a0.clone();
    let mut total = 0.0;
    for k in 0..inst.cfg.horizon {
        let next = &v[k * m..(k + 1) * m];
        let da: Vec<f64> = next.iter().zip(&a).map(|(x, y)| x - y).collect();
        let mut s_next = inst.op.apply(&s);
        for (i, sn) in s_next.iter_mut().enumerate() {
            *sn += (0..m).map(|j| inst.b0.at(i, j) * da[j]).sum::<f64>();
        }
        s = s_next;
        a = next.to_vec();
        let y: f64 = inst.c0.iter().zip(&s).map(|(c, x)| c * x).sum();
        total += y * y + quad(&inst.cfg.action_cost, &a) + quad(&inst.cfg.increment_cost, &da);
    }
    total
}

fn condensed(inst: &Instance) -> CondensedQP<f64> {
    condense(&inst.op, &inst.b0, &inst.c0, &inst.s0, &inst.a0, &inst.cfg).unwrap()
}

/// Enumerates every lower/free/upper pattern, solves the equality-constrained
/// system for each and keeps the best feasible point.
fn active_set_oracle(qp: &CondensedQP<f64>) -> (Vec<f64>, f64) {
    let n = qp.dim();
    let h = DMatrix::from_row_slice(n, n, &qp.hessian);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for pattern in 0..3usize.pow(n as u32) {
        let mut code = pattern;
        let mut fixed = vec![None; n];
        for f in fixed.iter_mut() {
            *f = match code % 3 {
                0 => None,
                1 => Some(0),
                _ => Some(1),
            };
            code /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let mut x: Vec<f64> =
            (0..n).map(|i| match fixed[i] { Some(0) => qp.lower[i], Some(_) => qp.upper[i], None => 0.0 }).collect();
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(k, |a, _| {
                let i = free[a];
                -qp.g[i] - (0..n).filter(|j| fixed[*j].is_some()).map(|j| h[(i, j)] * x[j]).sum::<f64>()
            });
            let sol = hff.lu().solve(&rhs).unwrap();
            for (a, &i) in free.iter().enumerate() {
                x[i] = sol[a];
            }
        }
        if (0..n).any(|i| x[i] < qp.lower[i] - 1e-12 || x[i] > qp.upper[i] + 1e-12) {
            continue;
        }
        let f = qp.objective(&x);
        if best.as_ref().is_none_or(|(_, b)| f < *b) {
            best = Some((x, f));
        }
    }
    best.unwrap()
}

fn random_pd_qp(rng: &mut ChaCha8Rng, n: usize, box_size: f64) -> CondensedQP<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    CondensedQP {
        hessian: (0..n * n).map(|k| h[(k / n, k % n)]).collect(),
        g: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        constant: 0.0,
        lower: vec![-box_size; n],
        upper: vec![box_size; n],
        horizon: n,
        act_dim: 1,
    }
}

#[test]
fn config_validation() {
    assert!(PlanConfig::isotropic(15, 0.001, 0.01, vec![-2.0], vec![2.0]).is_ok());
    assert!(PlanConfig::isotropic(15, 0.001, 0.0, vec![-2.0], vec![2.0]).is_err());
    assert!(PlanConfig::isotropic(15, 0.001, -0.1, vec![-2.0], vec![2.0]).is_err());
    assert!(PlanConfig::isotropic(0, 0.001, 0.01, vec![-2.0], vec![2.0]).is_err());
    assert!(PlanConfig::isotropic(15, 0.001, 0.01, vec![2.0], vec![2.0]).is_err());
    assert!(PlanConfig::isotropic(15, -0.001, 0.01, vec![-2.0], vec![2.0]).is_err());
}

#[test]
fn lambda_power_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inst = random_instance(&mut rng, 3, 1, 3);
    let id = lambda_power(&inst.op, 0);
    assert_eq!(id.apply(&inst.s0), inst.s0);
    assert_eq!(lambda_power(&inst.op, 1).apply(&inst.s0), inst.op.apply(&inst.s0));
    let mut s = inst.s0.clone();
    for _ in 0..7 {
        s = inst.op.apply(&s);
    }
    for (x, y) in lambda_power(&inst.op, 7).apply(&inst.s0).iter().zip(&s) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn zero_cost_row_keeps_the_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut inst = random_instance(&mut rng, 2, 1, 15);
    inst.c0 = vec![0.0; 4];
    inst.a0 = vec![0.0];
    inst.cfg.action_cost = Tensor::zeros(&[1, 1]);
    let qp = condensed(&inst);
    assert_eq!(qp.dim(), 15);
    let sol = solve_box_qp(&qp, &SolverOptions::default(), None).unwrap();
    assert!(sol.converged);
    assert!(sol.v.iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn condensed_objective_matches_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (pairs, m, horizon) in [(1, 1, 3), (3, 2, 5)] {
        let inst = random_instance(&mut rng, pairs, m, horizon);
        let qp = condensed(&inst);
        for _ in 0..100 {
            let v: Vec<f64> = (0..horizon * m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (got, want) = (qp.objective(&v), simulated_cost(&inst, &v));
            assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn hessian_is_symmetric_and_dominates_increment_laplacian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = random_instance(&mut rng, 4, 2, 6);
    let qp = condensed(&inst);
    let n = qp.dim();
    let h = DMatrix::from_row_slice(n, n, &qp.hessian);
    assert_eq!(h, h.transpose());
    let rt = DMatrix::from_row_slice(2, 2, inst.cfg.increment_cost.data());
    let min_eig = rt.symmetric_eigenvalues().min();
    let mut lap = DMatrix::zeros(n, n);
    for k in 0..6 {
        for p in 0..2 {
            let i = k * 2 + p;
            if k + 1 < 6 {
                let j = i + 2;
                lap[(i, i)] += 1.0;
                lap[(j, j)] += 1.0;
                lap[(i, j)] -= 1.0;
                lap[(j, i)] -= 1.0;
            }
        }
    }
    let gap = &h - lap * (2.0 * min_eig);
    assert!(gap.symmetric_eigenvalues().min() > -1e-10);
    assert!(h.symmetric_eigenvalues().min() > 0.0);
}

#[test]
fn solver_scalar_examples() {
    let qp = |lo: f64, hi: f64| CondensedQP {
        hessian: vec![2.0],
        g: vec![-2.0],
        constant: 0.0,
        lower: vec![lo],
        upper: vec![hi],
        horizon: 1,
        act_dim: 1,
    };
    let opts = SolverOptions::default();
    let s = solve_box_qp(&qp(-10.0, 10.0), &opts, None).unwrap();
    assert!(s.converged && (s.v[0] - 1.0).abs() < 1e-12);
    let s = solve_box_qp(&qp(-0.5, 0.5), &opts, None).unwrap();
    assert!(s.converged && s.v[0] == 0.5);
}

#[test]
fn solver_matches_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = SolverOptions::default();
    for _ in 0..5 {
        let qp = random_pd_qp(&mut rng, 10, 0.5);
        let sol = solve_box_qp(&qp, &opts, None).unwrap();
        let (x, f) = active_set_oracle(&qp);
        assert!(sol.converged);
        assert!(sol.kkt_residual <= 1e-8);
        assert!((qp.objective(&sol.v) - f).abs() <= 1e-6);
        for (a, b) in sol.v.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!(sol.v.iter().zip(&qp.lower).zip(&qp.upper).all(|((v, lo), hi)| lo <= v && v <= hi));
    }
}

#[test]
fn unconstrained_solution_matches_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let qp = random_pd_qp(&mut rng, 15, 1e6);
    let n = qp.dim();
    let h = DMatrix::from_row_slice(n, n, &qp.hessian);
    let x = h.lu().solve(&-DVector::from_column_slice(&qp.g)).unwrap();
    let sol = solve_box_qp(&qp, &SolverOptions::default(), None).unwrap();
    for i in 0..n {
        assert!((sol.v[i] - x[i]).abs() <= 1e-8);
    }
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let qp = random_pd_qp(&mut rng, 15, 0.3);
    let opts = SolverOptions {
        max_iter: 2,
        polish_every: 0,
        ..SolverOptions::default()
    };
    let sol = solve_box_qp(&qp, &opts, None).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iterations, 2);
    assert!(sol.v.iter().zip(&qp.lower).zip(&qp.upper).all(|((v, lo), hi)| lo <= v && v <= hi));
    assert_eq!(sol.kkt_residual, kkt_residual(&qp, &sol.v));
}

#[test]
fn warm_start_reaches_the_same_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let qp = random_pd_qp(&mut rng, 15, 0.4);
    let opts = SolverOptions::default();
    let cold = solve_box_qp(&qp, &opts, None).unwrap();
    let guess: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
    let warm = solve_box_qp(&qp, &opts, Some(&guess)).unwrap();
    for (a, b) in cold.v.iter().zip(&warm.v) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!(solve_box_qp(&qp, &opts, Some(&guess[..3])).is_err());
}

fn tiny_model(seed: u64) -> LatentModel<f64> {
    let cfg = ModelConfig {
        obs_dim: 3,
        act_dim: 1,
        pairs: 1,
        dt: 0.05,
        action_cost: Tensor::matrix(1, 1, vec![0.001]).unwrap(),
        arch: Architecture {
            encoder_hidden: vec![12],
            decoder_hidden: vec![4],
            cost_hidden: vec![6],
        },
    };
    LatentModel::new(&cfg, seed).unwrap()
}

#[test]
fn plan_with_zero_cost_row_keeps_the_action() {
    let mut model = tiny_model(1);
    let (w, b) = model.cost_net.layer_ids()[1];
    *model.params.get_mut(w) = Tensor::zeros(&[2, 6]);
    *model.params.get_mut(b) = Tensor::zeros(&[2]);
    let cfg = PlanConfig::isotropic(15, 0.0, 0.01, vec![-2.0], vec![2.0]).unwrap();
    let op = model.operator().unwrap();
    let out = plan(&model, &op, &[0.3, -0.1, 0.7], &[0.4], &cfg, &SolverOptions::default(), None).unwrap();
    assert!(out.increment[0].abs() < 1e-12);
}

#[test]
fn planned_actions_respect_torque_bounds() {
    let model = tiny_model(2);
    let op = model.operator().unwrap();
    let cfg = PlanConfig::isotropic(15, 0.001, 0.01, vec![-2.0], vec![2.0]).unwrap();
    let mut planner = Planner::new(cfg, SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut a = vec![0.0];
    for _ in 0..30 {
        let o: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = planner.step(&model, &op, &o, &a).unwrap();
        assert!(out.solution.v.iter().all(|v| (-2.0..=2.0).contains(v)));
        a[0] += out.increment[0];
        assert!((-2.0..=2.0).contains(&a[0]));
    }
}

#[test]
fn plan_matches_grid_search() {
    let model = tiny_model(3);
    let op = model.operator().unwrap();
    let (o, a0) = ([0.8, -0.4, 1.5], [0.1]);
    let cfg = PlanConfig::isotropic(3, 0.001, 0.01, vec![-2.0], vec![2.0]).unwrap();
    let out = plan(&model, &op, &o, &a0, &cfg, &SolverOptions::default(), None).unwrap();

    let lin = model.linearize(&o, &a0).unwrap();
    let qp = condense(&op, &lin.b0, &lin.c0, &lin.s0, &a0, &cfg).unwrap();
    // increments on a 41-point grid spanning ±1
    let grid: Vec<f64> = (0..41).map(|i| -1.0 + 0.05 * i as f64).collect();
    let mut best = (f64::INFINITY, 0.0);
    for &d0 in &grid {
        for &d1 in &grid {
            for &d2 in &grid {
                let v = [a0[0] + d0, a0[0] + d0 + d1, a0[0] + d0 + d1 + d2];
                if v.iter().any(|x| x.abs() > 2.0) {
                    continue;
                }
                let f = qp.objective(&v);
                if f < best.0 {
                    best = (f, d0);
                }
            }
        }
    }
    assert!(qp.objective(&out.solution.v) <= best.0 + 1e-12);
    assert!((out.increment[0] - best.1).abs() <= 0.05 + 1e-12, "{} vs {}", out.increment[0], best.1);
}

#[test]
fn plan_is_bit_identical() {
    let model = tiny_model(4);
    let op = model.operator().unwrap();
    let cfg = PlanConfig::isotropic(15, 0.001, 0.01, vec![-2.0], vec![2.0]).unwrap();
    let run = || plan(&model, &op, &[0.2, 0.5, -1.0], &[0.3], &cfg, &SolverOptions::default(), None).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn dump_writes_all_sections() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let qp = condensed(&random_instance(&mut rng, 1, 1, 3));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qp.txt");
    qp.dump(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    for section in ["# hessian", "# g", "# lower", "# upper", "# constant"] {
        assert!(text.contains(section));
    }
    assert_eq!(text.lines().nth(1).unwrap(), "3 3 1");
}
