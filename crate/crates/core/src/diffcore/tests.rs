use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn v(x: &[f64]) -> Tensor<f64> {
    Tensor::vector(x.to_vec())
}

fn m(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn affine_identity_zero_and_hand_multiply() {
    let mut g = Graph::new();
    let (w, b, x) = (g.constant(Tensor::eye(2)), g.constant(v(&[0.0, 0.0])), g.constant(v(&[3.0, -1.0])));
    let y = g.affine(w, b, x).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, -1.0]);

    let (w, b, x) = (g.constant(Tensor::zeros(&[2, 2])), g.constant(v(&[1.0, 2.0])), g.constant(v(&[9.0, 9.0])));
    let y = g.affine(w, b, x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let w = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let (b, x) = (g.constant(v(&[0.0, 1.0])), g.constant(v(&[1.0, 1.0])));
    let y = g.affine(w, b, x).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 8.0]);
}

#[test]
fn affine_shape_mismatch_names_operands() {
    let mut g = Graph::new();
    let w = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(v(&[0.0, 0.0]));
    let x = g.constant(v(&[1.0, 2.0]));
    let err = g.affine(w, b, x).unwrap_err();
    assert!(matches!(err, Error::Dimension { context: "affine", .. }), "{err}");
    assert!(err.to_string().contains("x has shape"));
}

#[test]
fn relu_values_and_gradient() {
    let mut g = Graph::new();
    let x = g.constant(v(&[-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let x = g.constant(v(&[-3.0, -0.5]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    let mut g = Graph::new();
    let x = g.param(ParamId(0), v(&[-1.0, 2.0]));
    let y = g.relu(x);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    // central differences, step 1e-6
    let f = |x: [f64; 2]| x.iter().map(|v| v.max(0.0)).sum::<f64>();
    let h = 1e-6;
    let fd0 = (f([-1.0 + h, 2.0]) - f([-1.0 - h, 2.0])) / (2.0 * h);
    let fd1 = (f([-1.0, 2.0 + h]) - f([-1.0, 2.0 - h])) / (2.0 * h);
    assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[0.0, 1.0]);
    assert!((fd0 - 0.0).abs() < 1e-9 && (fd1 - 1.0).abs() < 1e-9);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(ParamId(0), v(&[0.0]));
    let y = g.relu(x);
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().get(ParamId(0)).unwrap().data(), &[0.0]);
}

#[test]
fn mse_examples() {
    let mut g = Graph::new();
    let a = g.constant(v(&[1.0, 2.0]));
    let l = g.mse(a, a).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let (a, b) = (g.constant(v(&[1.0, 1.0])), g.constant(v(&[0.0, 0.0])));
    let l = g.mse(a, b).unwrap();
    assert_eq!(g.value(l).item(), 1.0);
    let (a, b) = (g.constant(v(&[1.0, 2.0, 3.0])), g.constant(v(&[0.0, 0.0, 0.0])));
    let l = g.mse(a, b).unwrap();
    assert!((g.value(l).item() - 14.0 / 3.0).abs() < 1e-15);
    let c = g.constant(v(&[0.0, 0.0]));
    assert!(g.mse(a, c).is_err());
}

#[test]
fn backward_quadratic_and_unused_param() {
    let mut g = Graph::new();
    let x = g.param(ParamId(0), v(&[2.0]));
    let unused = g.param(ParamId(1), v(&[5.0, 6.0]));
    let zero = g.constant(v(&[0.0]));
    let l = g.mse(x, zero).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(ParamId(0)).unwrap().data(), &[4.0]);
    assert_eq!(grads.get(ParamId(1)).unwrap().data(), &[0.0, 0.0]);
    let _ = unused;
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(ParamId(0), v(&[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::Contract(_))));
}

fn random_mlp(seed: u64, dims: &[usize]) -> (ParamSet<f64>, Mlp) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mlp = Mlp::new(&mut params, &mut rng, "net", dims);
    // non-zero biases so kinks move away from the origin
    for id in params.ids().collect::<Vec<_>>() {
        if params.name(id).ends_with("bias") {
            for b in params.get_mut(id).data_mut() {
                *b = rng.random_range(-0.5..0.5);
            }
        }
    }
    (params, mlp)
}

fn mlp_loss(params: &ParamSet<f64>, mlp: &Mlp, x: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let net = mlp.bind(&mut g, params);
    let xi = g.constant(x.clone());
    let y = net.forward(&mut g, xi).unwrap();
    let t = g.constant(target.clone());
    let l = g.mse(y, t).unwrap();
    g.value(l).item()
}

#[test]
fn mlp_gradients_match_central_differences() {
    let (params, mlp) = random_mlp(7, &[3, 6, 5, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let target = Tensor::matrix(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    let mut g = Graph::new();
    let net = mlp.bind(&mut g, &params);
    let xi = g.constant(x.clone());
    let y = net.forward(&mut g, xi).unwrap();
    let t = g.constant(target.clone());
    let l = g.mse(y, t).unwrap();
    let grads = g.backward(l).unwrap();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let mut p = params.clone();
            p.get_mut(id).data_mut()[k] += h;
            let up = mlp_loss(&p, &mlp, &x, &target);
            p.get_mut(id).data_mut()[k] -= 2.0 * h;
            let dn = mlp_loss(&p, &mlp, &x, &target);
            let fd = (up - dn) / (2.0 * h);
            let an = grads.get(id).unwrap().data()[k];
            if an.abs() > 1e-7 || fd.abs() > 1e-7 {
                worst = worst.max(rel_err(an, fd));
            }
        }
    }
    assert!(worst < 1e-6, "worst relative error {worst}");
}

#[test]
fn elementwise_ops_gradients_match_finite_differences() {
    // f(x) = sum(exp(x) * sin(x)) + rowdot(cos(x), x^2) + sum_squares(block_rot(x[..2], x[2..], x))
    fn build(g: &mut Graph<f64>, x: NodeId) -> NodeId {
        let e = g.exp(x);
        let s = g.sin(x);
        let es = g.mul(e, s).unwrap();
        let t1 = g.sum(es);
        let c = g.cos(x);
        let sq = g.square(x);
        let t2 = g.row_dot(c, sq).unwrap();
        let a = g.slice_cols(x, 0, 2).unwrap();
        let b = g.slice_cols(x, 2, 2).unwrap();
        let r = g.block_rot(a, b, x).unwrap();
        let t3 = g.sum_squares(r);
        let s12 = g.add(t1, t2).unwrap();
        let tot = g.add(s12, t3).unwrap();
        g.scale(tot, 0.5)
    }
    let x0 = [0.3, -0.7, 1.1, 0.4];
    let mut g = Graph::new();
    let x = g.param(ParamId(0), v(&x0));
    let l = build(&mut g, x);
    let grad = g.backward(l).unwrap().get(ParamId(0)).unwrap().clone();
    let eval = |xs: [f64; 4]| {
        let mut g = Graph::new();
        let x = g.constant(v(&xs));
        let l = build(&mut g, x);
        g.value(l).item()
    };
    let h = 1e-6;
    for k in 0..4 {
        let mut up = x0;
        up[k] += h;
        let mut dn = x0;
        dn[k] -= h;
        let fd = (eval(up) - eval(dn)) / (2.0 * h);
        assert!(rel_err(grad.data()[k], fd) < 1e-6, "coord {k}: {} vs {fd}", grad.data()[k]);
    }
}

#[test]
fn jvp_of_linear_map_is_column() {
    let mut g = Graph::new();
    let w = g.constant(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    let x = g.constant(v(&[0.2, -0.4]));
    let y = g.linear(w, x).unwrap();
    let e1 = g.constant(v(&[1.0, 0.0]));
    let t = g.jvp(&[(x, e1)], y).unwrap();
    assert_eq!(g.value(t).data(), &[1.0, 3.0, 5.0]);

    let x = g.constant(v(&[-1.0, 2.0]));
    let r = g.relu(x);
    let ones = g.constant(v(&[1.0, 1.0]));
    let t = g.jvp(&[(x, ones)], r).unwrap();
    assert_eq!(g.value(t).data(), &[0.0, 1.0]);

    let bad = g.constant(v(&[1.0, 0.0, 0.0]));
    assert!(g.jvp(&[(x, bad)], r).is_err());
}

#[test]
fn jvp_matches_central_differences_on_random_mlp() {
    let (params, mlp) = random_mlp(11, &[4, 8, 8, 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eval = |xs: &[f64]| {
        let mut g = Graph::new();
        let net = mlp.bind(&mut g, &params);
        let x = g.constant(v(xs));
        let y = net.forward(&mut g, x).unwrap();
        g.value(y).data().to_vec()
    };
    let h = 1e-5;
    for j in 0..4 {
        let mut g = Graph::new();
        let net = mlp.bind(&mut g, &params);
        let x = g.constant(v(&x0));
        let y = net.forward(&mut g, x).unwrap();
        let mut e = vec![0.0; 4];
        e[j] = 1.0;
        let ej = g.constant(v(&e));
        let t = g.jvp(&[(x, ej)], y).unwrap();
        let mut up = x0.clone();
        up[j] += h;
        let mut dn = x0.clone();
        dn[j] -= h;
        let (fu, fdn) = (eval(&up), eval(&dn));
        for (i, &an) in g.value(t).data().iter().enumerate() {
            let fd = (fu[i] - fdn[i]) / (2.0 * h);
            assert!((an - fd).abs() < 1e-6, "output {i} dir {j}: {an} vs {fd}");
        }
    }
}

/// Loss containing a Jacobian-vector product: sum_squares(J(x)·u) for an MLP.
fn jvp_loss(params: &ParamSet<f64>, mlp: &Mlp, x0: &[f64], u: &[f64]) -> (f64, Gradients<f64>) {
    let mut g = Graph::new();
    let net = mlp.bind(&mut g, params);
    let x = g.constant(v(x0));
    let y = net.forward(&mut g, x).unwrap();
    let ut = g.constant(v(u));
    let t = g.jvp(&[(x, ut)], y).unwrap();
    let l = g.sum_squares(t);
    let grads = g.backward(l).unwrap();
    (g.value(l).item(), grads)
}

#[test]
fn backward_through_jvp_matches_second_order_differences() {
    let (params, mlp) = random_mlp(21, &[3, 7, 6, 2]);
    let x0 = [0.4, -0.3, 0.9];
    let u = [0.0, 0.5, 1.0];
    let (_, grads) = jvp_loss(&params, &mlp, &x0, &u);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let mut p = params.clone();
            p.get_mut(id).data_mut()[k] += h;
            let (up, _) = jvp_loss(&p, &mlp, &x0, &u);
            p.get_mut(id).data_mut()[k] -= 2.0 * h;
            let (dn, _) = jvp_loss(&p, &mlp, &x0, &u);
            let fd = (up - dn) / (2.0 * h);
            let an = grads.get(id).unwrap().data()[k];
            if an.abs() > 1e-7 || fd.abs() > 1e-7 {
                worst = worst.max(rel_err(an, fd));
            }
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn gradients_and_replay_are_bit_identical() {
    let (params, mlp) = random_mlp(3, &[3, 5, 2]);
    let run = || {
        let mut g = Graph::new();
        let net = mlp.bind(&mut g, &params);
        let x = g.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap());
        let y = net.forward(&mut g, x).unwrap();
        let s = g.sum_squares(y);
        let grads = g.backward(s).unwrap();
        (g.value(y).clone(), grads.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut params = ParamSet::new();
    params.add("p", v(&[1.0, -2.0]));
    let before = params.clone();
    let mut st = AdamState::new(&params);
    adam_step(&mut params, &Gradients::default(), &mut st, 0.1).unwrap();
    assert_eq!(params, before);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_first_step_moves_by_lr_against_sign() {
    let mut params = ParamSet::new();
    params.add("p", v(&[0.5]));
    let mut st = AdamState::new(&params);
    let mut g = Graph::new();
    let p = params.leaf(&mut g, ParamId(0));
    let l = g.scale(p, -3.0);
    let l = g.sum(l);
    let grads = g.backward(l).unwrap();
    adam_step(&mut params, &grads, &mut st, 0.01).unwrap();
    assert!((params.get(ParamId(0)).data()[0] - 0.51).abs() < 1e-9);
}

#[test]
fn adam_three_steps_on_parabola_match_scripted_reference() {
    // scripted scalar Adam, independent of the tensor implementation
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
    let (mut p, mut mm, mut vv) = (1.0f64, 0.0f64, 0.0f64);
    let mut reference = Vec::new();
    for t in 1..=3 {
        let g = 2.0 * p;
        mm = b1 * mm + (1.0 - b1) * g;
        vv = b2 * vv + (1.0 - b2) * g * g;
        p -= lr * (mm / (1.0 - b1.powi(t))) / ((vv / (1.0 - b2.powi(t))).sqrt() + eps);
        reference.push(p);
    }

    let mut params = ParamSet::new();
    params.add("p", v(&[1.0]));
    let mut st = AdamState::new(&params);
    let mut f_prev = 1.0;
    for r in reference {
        let mut g = Graph::new();
        let x = params.leaf(&mut g, ParamId(0));
        let l = g.sum_squares(x);
        let grads = g.backward(l).unwrap();
        adam_step(&mut params, &grads, &mut st, lr).unwrap();
        let p = params.get(ParamId(0)).data()[0];
        assert!((p - r).abs() < 1e-14);
        assert!(p * p < f_prev);
        f_prev = p * p;
    }
}

#[test]
fn generic_over_f32() {
    let mut g: Graph<f32> = Graph::new();
    let w = g.param(ParamId(0), Tensor::from_rows(&[vec![1.0f32, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = g.constant(Tensor::vector(vec![0.0f32, 1.0]));
    let x = g.constant(Tensor::vector(vec![1.0f32, 1.0]));
    let y = g.affine(w, b, x).unwrap();
    assert_eq!(g.value(y).data(), &[3.0f32, 8.0]);
    let s = g.sum(y);
    let gw = g.backward(s).unwrap();
    assert_eq!(gw.get(ParamId(0)).unwrap().data(), &[1.0f32, 1.0, 1.0, 1.0]);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn affine_gradient_matches_fd(
            w in proptest::collection::vec(-2.0f64..2.0, 6),
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let eval = |w: &[f64]| {
                let mut g = Graph::new();
                let wn = g.constant(Tensor::matrix(2, 3, w.to_vec()).unwrap());
                let bn = g.constant(v(&b));
                let xn = g.constant(v(&x));
                let y = g.affine(wn, bn, xn).unwrap();
                let s = g.sum_squares(y);
                g.value(s).item()
            };
            let mut g = Graph::new();
            let wn = g.param(ParamId(0), Tensor::matrix(2, 3, w.clone()).unwrap());
            let bn = g.constant(v(&b));
            let xn = g.constant(v(&x));
            let y = g.affine(wn, bn, xn).unwrap();
            let s = g.sum_squares(y);
            let grad = g.backward(s).unwrap().get(ParamId(0)).unwrap().clone();
            let h = 1e-6;
            for k in 0..6 {
                let mut up = w.clone();
                up[k] += h;
                let mut dn = w.clone();
                dn[k] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                prop_assert!((grad.data()[k] - fd).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }
}
