use rand::Rng;
use rand_distr::StandardNormal;

/// Ornstein-Uhlenbeck exploration noise in the variance-preserving discrete form
/// `ε ← λ ε + sqrt(1 − λ²) · N(0, σ² I)`, so `σ²` is the stationary variance.
#[derive(Clone, Debug, PartialEq)]
pub struct OUNoise {
    pub eps: Vec<f64>,
    pub lambda_ou: f64,
    pub sigma2: f64,
    pub sigma2_init: f64,
    /// Episodes over which `σ²` is annealed to zero.
    pub n_ou: usize,
}

impl OUNoise {
    pub fn new(act_dim: usize, lambda_ou: f64, sigma2_init: f64, n_ou: usize) -> Self {
        Self {
            eps: vec![0.0; act_dim],
            lambda_ou,
            sigma2: sigma2_init,
            sigma2_init,
            n_ou,
        }
    }

    /// Zeroes the process state at the start of an episode.
    pub fn reset(&mut self) {
        self.eps.iter_mut().for_each(|e| *e = 0.0);
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        let scale = (1.0 - self.lambda_ou * self.lambda_ou).max(0.0).sqrt() * self.sigma2.sqrt();
        for e in &mut self.eps {
            let z: f64 = rng.sample(StandardNormal);
            *e = self.lambda_ou * *e + scale * z;
        }
        &self.eps
    }

    /// `σ² = σ²_init · max(0, 1 − episode / N_ou)`.
    pub fn anneal(&mut self, episode: usize) -> f64 {
        self.sigma2 = if self.n_ou == 0 {
            0.0
        } else {
            self.sigma2_init * (1.0 - episode as f64 / self.n_ou as f64).max(0.0)
        };
        self.sigma2
    }
}
