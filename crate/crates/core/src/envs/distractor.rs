use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{System, Task};

pub const REPLICAS: usize = 4;
pub const EXCITATION_DECAY: f64 = 0.9;

/// Copies of the task's system driven by their own OU torques.
#[derive(Clone, Debug)]
pub struct DistractorBank {
    pub replicas: Vec<System>,
    torques: Vec<Vec<f64>>,
    /// Stationary standard deviation of the excitation torque.
    pub excitation_std: f64,
    rng: ChaCha8Rng,
}

impl DistractorBank {
    pub fn new(task: Task, mut rng: ChaCha8Rng) -> Self {
        let replicas = (0..REPLICAS).map(|_| System::random(task, &mut rng)).collect();
        Self {
            replicas,
            torques: vec![vec![0.0; task.act_dim()]; REPLICAS],
            excitation_std: 0.5 * task.torque_limit(),
            rng,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        self.replicas.iter().flat_map(System::observe).collect()
    }

    /// Draws the next torque of every replica and steps it.
    pub fn excite(&mut self) {
        let scale = (1.0 - EXCITATION_DECAY * EXCITATION_DECAY).sqrt() * self.excitation_std;
        for (sys, u) in self.replicas.iter_mut().zip(&mut self.torques) {
            for x in u.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut self.rng);
                *x = EXCITATION_DECAY * *x + scale * n;
            }
            sys.step(u);
        }
    }
}
