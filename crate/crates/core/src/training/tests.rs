use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{AdamState, Tensor};
use crate::koopman::{Architecture, GainMode, LatentModel, ModelConfig};
use crate::testkit::reference_system;

fn transition(n: usize, m: usize, k: usize) -> Transition<f64> {
    Transition {
        o: vec![k as f64; n],
        a: vec![0.0; m],
        da: vec![0.0; m],
        c: k as f64,
    }
}

fn episode(len: usize) -> Vec<Transition<f64>> {
    (0..len).map(|k| transition(3, 1, k)).collect()
}

fn small_model(seed: u64) -> LatentModel<f64> {
    let cfg = ModelConfig {
        obs_dim: 3,
        act_dim: 1,
        pairs: 2,
        dt: 0.05,
        action_cost: Tensor::matrix(1, 1, vec![0.001]).unwrap(),
        arch: Architecture {
            encoder_hidden: vec![10, 10],
            decoder_hidden: vec![8],
            cost_hidden: vec![9, 9],
        },
    };
    LatentModel::new(&cfg, seed).unwrap()
}

/// Random sequence with consistent actions.
fn random_sequence(rng: &mut ChaCha8Rng, horizon: usize) -> Sequence<f64> {
    let mut a = rng.random_range(-1.0..1.0);
    let transitions = (0..=horizon)
        .map(|_| {
            let da: f64 = rng.random_range(-0.3..0.3);
            let t = Transition {
                o: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a: vec![a],
                da: vec![da],
                c: rng.random_range(0.0..2.0),
            };
            a += da;
            t
        })
        .collect();
    Sequence::new(transitions).unwrap()
}

#[test]
fn sequence_counts() {
    assert_eq!(create_sequences(&episode(31), 15).len(), 1);
    assert_eq!(create_sequences(&episode(16), 15).len(), 1);
    assert_eq!(create_sequences(&episode(15), 15).len(), 0);
    let seqs = create_sequences(&episode(200), 15);
    assert_eq!(seqs.len(), 12);
    assert_eq!(seqs[1].transitions[0].c, 16.0);
    assert!(seqs.iter().all(|s| s.horizon() == 15));
    assert_eq!(create_sequences(&episode(101), 15).len(), 6);
}

#[test]
fn sequence_consistency_flag() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = random_sequence(&mut rng, 5);
    assert!(s.is_consistent());
    s.transitions[3].a[0] += 1e-9;
    assert!(!s.is_consistent());
    assert!(Sequence::new(vec![transition(3, 1, 0)]).is_err());
}

#[test]
fn perfect_model_has_zero_prediction_losses() {
    let sys = reference_system();
    let model = sys.perfect_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs = create_sequences(&sys.random_episode(&mut rng, 47), 15);
    assert_eq!(seqs.len(), 3);
    for s in &seqs {
        for mode in [GainMode::Fixed, GainMode::Decoded] {
            assert!(linear_loss(&model, s, mode).unwrap() < 1e-20);
            assert!(cost_pred_loss(&model, s, mode).unwrap() < 1e-20);
        }
        assert!(cost_recon_loss(&model, s).unwrap() < 1e-20);
    }
}

#[test]
fn losses_match_direct_evaluation() {
    let model = small_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for horizon in [1, 4] {
        let seq = random_sequence(&mut rng, horizon);
        let tr = &seq.transitions;
        let incs: Vec<Vec<f64>> = tr[..horizon].iter().map(|t| t.da.clone()).collect();
        let roll = model.rollout(&tr[0].o, &tr[0].a, &incs, GainMode::Fixed).unwrap();

        let mut lin = 0.0;
        for k in 0..horizon {
            let target = model.encode(&tr[k + 1].o, &tr[k + 1].a).unwrap();
            let mse: f64 =
                target.iter().zip(&roll[k + 1].s).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / target.len() as f64;
            lin += mse / horizon as f64;
        }
        let recon = (tr[0].c - roll[0].cost).powi(2);
        let pred: f64 = (1..=horizon).map(|k| (tr[k].c - roll[k].cost).powi(2)).sum::<f64>() / horizon as f64;

        let got_lin = linear_loss(&model, &seq, GainMode::Fixed).unwrap();
        assert!((got_lin - lin).abs() <= 1e-12 * lin.max(1.0), "{got_lin} vs {lin}");
        assert!((cost_recon_loss(&model, &seq).unwrap() - recon).abs() <= 1e-12 * recon.max(1.0));
        assert!((cost_pred_loss(&model, &seq, GainMode::Fixed).unwrap() - pred).abs() <= 1e-12 * pred.max(1.0));
    }
}

#[test]
fn cost_loss_examples() {
    let mut model = small_model(4);
    model.zero_networks();
    model.action_cost = Tensor::matrix(1, 1, vec![0.0]).unwrap();
    let tr = |c: f64| Transition {
        o: vec![0.0; 3],
        a: vec![0.0],
        da: vec![0.0],
        c,
    };
    let seq = Sequence::new(vec![tr(0.0), tr(3.0)]).unwrap();
    assert_eq!(cost_recon_loss(&model, &seq).unwrap(), 0.0);
    assert_eq!(cost_pred_loss(&model, &seq, GainMode::Fixed).unwrap(), 9.0);
    let seq = Sequence::new(vec![tr(2.0), tr(0.0)]).unwrap();
    assert_eq!(cost_recon_loss(&model, &seq).unwrap(), 4.0);
}

#[test]
fn l2_counts_weights_only() {
    let mut model = small_model(5);
    for id in model.params.ids().collect::<Vec<_>>() {
        for v in model.params.get_mut(id).data_mut() {
            *v = 1.0;
        }
    }
    let weights: usize = model.weight_ids().iter().map(|&id| model.params.get(id).len()).sum();
    assert_eq!(l2_reg(&model), weights as f64);

    let cfg = ModelConfig {
        obs_dim: 2,
        act_dim: 1,
        pairs: 1,
        dt: 0.1,
        action_cost: Tensor::matrix(1, 1, vec![0.0]).unwrap(),
        arch: Architecture::linear(),
    };
    let mut m = LatentModel::new(&cfg, 0).unwrap();
    for id in m.params.ids().collect::<Vec<_>>() {
        for v in m.params.get_mut(id).data_mut() {
            *v = 1.0;
        }
    }
    // encoder 2×3, decoder 2×2, cost 2×2
    assert_eq!(l2_reg(&m), 14.0);
    for id in m.weight_ids() {
        for v in m.params.get_mut(id).data_mut() {
            *v = 2.0_f64.sqrt();
        }
    }
    assert!((l2_reg(&m) - 28.0).abs() < 1e-12);
}

#[test]
fn composite_is_weighted_sum_and_order_invariant() {
    let model = small_model(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let seqs: Vec<Sequence<f64>> = (0..20).map(|_| random_sequence(&mut rng, 5)).collect();
    let batch: Vec<&Sequence<f64>> = seqs.iter().collect();
    let w = LossWeights {
        alpha1: 10.0,
        alpha2: 1e-3,
        mode: GainMode::Fixed,
    };
    let (terms, _) = objective_and_gradients(&model, &batch, &w).unwrap();
    let want = terms.lin + 10.0 * (terms.recon + terms.pred) + 1e-3 * terms.reg;
    assert!((terms.total - want).abs() <= 1e-12 * want);
    assert!((terms.reg - l2_reg(&model)).abs() <= 1e-12 * terms.reg);

    let mean_lin: f64 = seqs.iter().map(|s| linear_loss(&model, s, GainMode::Fixed).unwrap()).sum::<f64>() / 20.0;
    assert!((terms.lin - mean_lin).abs() <= 1e-12 * mean_lin);

    let mut rev = batch.clone();
    rev.reverse();
    let back = total_objective(&model, &rev, &w).unwrap();
    assert!((back - terms.total).abs() <= 1e-12 * terms.total);

    let (chunked, _) = batch_gradients(&model, &batch, &w).unwrap();
    assert!((chunked.total - terms.total).abs() <= 1e-12 * terms.total);
}

#[test]
fn gradient_matches_finite_differences() {
    let model = small_model(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seqs: Vec<Sequence<f64>> = (0..4).map(|_| random_sequence(&mut rng, 3)).collect();
    let batch: Vec<&Sequence<f64>> = seqs.iter().collect();
    for mode in [GainMode::Fixed, GainMode::Decoded] {
        let w = LossWeights {
            alpha1: 10.0,
            alpha2: 1e-2,
            mode,
        };
        let (_, grads) = batch_gradients(&model, &batch, &w).unwrap();
        let ids: Vec<_> = model.params.ids().collect();
        for probe in 0..12 {
            let id = match probe {
                0 => model.mu,
                1 => model.omega,
                _ => ids[rng.random_range(0..ids.len())],
            };
            let i = rng.random_range(0..model.params.get(id).len());
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params.get_mut(id).data_mut()[i] += delta;
                total_objective(&m, &batch, &w).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4 || (an - fd).abs() < 1e-8, "{} [{i}]: {an} vs {fd}", model.params.name(id));
        }
    }
}

#[test]
fn buffer_persistence_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut buf = ReplayBuffer::new(Some(5));
    for _ in 0..7 {
        buf.push(random_sequence(&mut rng, 4)).unwrap();
    }
    assert_eq!(buf.len(), 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("buffer.bin");
    buf.save(&path).unwrap();
    let back = ReplayBuffer::<f64>::load(&path, Some(5)).unwrap();
    assert_eq!(back, buf);
    assert!(ReplayBuffer::<f64>::from_bytes(&buf.to_bytes()[..50], None).is_err());
    assert!(buf.push(random_sequence(&mut rng, 3)).is_err());
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut buf = ReplayBuffer::new(None);
    for _ in 0..20 {
        buf.push(random_sequence(&mut rng, 5)).unwrap();
    }
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        horizon: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = small_model(10);
        let mut adam = AdamState::new(&m.params);
        let metrics = train_epochs(&buf, &mut m, &cfg, &mut adam, 42).unwrap();
        (m.to_bytes(), metrics)
    };
    assert_eq!(run(), run());
}

#[test]
fn training_reduces_prediction_losses() {
    let sys = reference_system();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut buf = ReplayBuffer::new(None);
    for _ in 0..40 {
        buf.extend(create_sequences(&sys.random_episode(&mut rng, 159), 15)).unwrap();
    }
    let cfg = sys.model_config(Architecture {
        encoder_hidden: vec![64],
        decoder_hidden: vec![8],
        cost_hidden: vec![16],
    });
    let mut model = LatentModel::new(&cfg, 0).unwrap();
    let batch: Vec<&Sequence<f64>> = buf.iter().collect();
    let eval = |m: &LatentModel<f64>| {
        let (t, _) = objective_and_gradients(m, &batch, &LossWeights::default()).unwrap();
        t.lin + t.pred
    };
    let before = eval(&model);
    let tc = TrainConfig {
        epochs: 60,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(&model.params);
    train_epochs(&buf, &mut model, &tc, &mut adam, 13).unwrap();
    let after = eval(&model);
    assert!(after * 5.0 <= before, "{before} -> {after}");
}
