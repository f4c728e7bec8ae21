//! Synthetic fixtures shared by the unit, integration and acceptance tests.

use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::Result;
use crate::koopman::{Architecture, EigenvaluePairs, KoopmanOperator, LatentModel, ModelConfig};
use crate::training::Transition;

/// Linear latent system `z_{k+1} = Λ z_k + b Δa_k` observed through
/// `o = z − b·a`, with cost `(C z)² + R a²` and one action.
///
/// An encoder `φ(o, a) = o + b·a` with `ψ ≡ C` reproduces it exactly.
#[derive(Clone, Debug)]
pub struct LinearLatentSystem {
    pub eigs: EigenvaluePairs<f64>,
    pub dt: f64,
    pub input: Vec<f64>,
    pub cost_row: Vec<f64>,
    pub action_cost: f64,
}

impl LinearLatentSystem {
    pub fn latent_dim(&self) -> usize {
        2 * self.eigs.pairs()
    }

    pub fn operator(&self) -> KoopmanOperator<f64> {
        KoopmanOperator::build(&self.eigs, self.dt).expect("positive dt")
    }

    pub fn model_config(&self, arch: Architecture) -> ModelConfig<f64> {
        ModelConfig {
            obs_dim: self.latent_dim(),
            act_dim: 1,
            pairs: self.eigs.pairs(),
            dt: self.dt,
            action_cost: Tensor::matrix(1, 1, vec![self.action_cost]).expect("1x1"),
            arch,
        }
    }

    /// Affine-only model whose encoder, cost net and eigenvalues equal the system's.
    pub fn perfect_model(&self) -> LatentModel<f64> {
        let n = self.latent_dim();
        let mut model = LatentModel::new(&self.model_config(Architecture::linear()), 0).expect("valid config");
        let (enc_w, enc_b) = model.encoder.layer_ids()[0];
        let mut w = Tensor::zeros(&[n, n + 1]);
        for i in 0..n {
            w.data_mut()[i * (n + 1) + i] = 1.0;
            w.data_mut()[i * (n + 1) + n] = self.input[i];
        }
        *model.params.get_mut(enc_w) = w;
        *model.params.get_mut(enc_b) = Tensor::zeros(&[n]);
        let (dec_w, dec_b) = model.decoder.layer_ids()[0];
        *model.params.get_mut(dec_w) = Tensor::eye(n);
        *model.params.get_mut(dec_b) = Tensor::zeros(&[n]);
        let (c_w, c_b) = model.cost_net.layer_ids()[0];
        *model.params.get_mut(c_w) = Tensor::zeros(&[n, n]);
        *model.params.get_mut(c_b) = Tensor::vector(self.cost_row.clone());
        model.set_eigenvalues(&self.eigs).expect("pair count");
        model
    }

    /// `increments.len() + 1` transitions; the final one carries a zero increment.
    pub fn simulate(&self, o0: &[f64], a0: f64, increments: &[f64]) -> Vec<Transition<f64>> {
        let op = self.operator();
        let mut z: Vec<f64> = o0.iter().zip(&self.input).map(|(o, b)| o + b * a0).collect();
        let mut a = a0;
        let mut out = Vec::with_capacity(increments.len() + 1);
        for k in 0..=increments.len() {
            let da = increments.get(k).copied().unwrap_or(0.0);
            let y: f64 = self.cost_row.iter().zip(&z).map(|(c, x)| c * x).sum();
            let o: Vec<f64> = z.iter().zip(&self.input).map(|(x, b)| x - b * a).collect();
            out.push(Transition {
                o,
                a: vec![a],
                da: vec![da],
                c: y * y + self.action_cost * a * a,
            });
            let mut next = op.apply(&z);
            for (n, b) in next.iter_mut().zip(&self.input) {
                *n += b * da;
            }
            z = next;
            a += da;
        }
        out
    }

    /// Random initial observation, action and increments.
    pub fn random_episode<R: Rng + ?Sized>(&self, rng: &mut R, steps: usize) -> Vec<Transition<f64>> {
        let o0: Vec<f64> = (0..self.latent_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a0 = rng.random_range(-0.5..0.5);
        let incs: Vec<f64> = (0..steps).map(|_| rng.random_range(-0.2..0.2)).collect();
        self.simulate(&o0, a0, &incs)
    }
}

/// A lightly damped single-pair system used across tests.
pub fn reference_system() -> LinearLatentSystem {
    LinearLatentSystem {
        eigs: EigenvaluePairs::new(vec![-0.2], vec![2.0]).expect("finite"),
        dt: 0.05,
        input: vec![0.5, -0.3],
        cost_row: vec![1.0, 0.5],
        action_cost: 0.001,
    }
}

/// Central-difference derivative of a scalar function of one coordinate.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Helper returning `Result` so fixtures can be built with `?` in tests.
pub fn perfect_fixture() -> Result<(LinearLatentSystem, LatentModel<f64>)> {
    let sys = reference_system();
    let model = sys.perfect_model();
    Ok((sys, model))
}
