use std::time::Instant;

use rand::Rng;

use super::noise::OUNoise;
use crate::envs::{Env, System};
use crate::error::Result;
use crate::koopman::{KoopmanOperator, LatentModel};
use crate::lmpc::Planner;
use crate::training::Transition;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Sum of `costs`.
    pub cumulative_cost: f64,
    /// Env-emitted cost of every transition.
    pub costs: Vec<f64>,
    pub sigma2: f64,
    /// Seconds; not part of any deterministic output.
    pub wall_time: f64,
    /// Controlled system before each transition's action is applied.
    pub states: Vec<System>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition<f64>>,
    pub log: EpisodeLog,
}

/// Receding-horizon LMPC on a fixed model and operator.
pub struct LmpcPolicy<'a> {
    pub model: &'a LatentModel<f64>,
    pub op: &'a KoopmanOperator<f64>,
    pub planner: Planner<f64>,
}

impl LmpcPolicy<'_> {
    pub fn increment(&mut self, o: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.planner.step(self.model, self.op, o, a)?.increment)
    }
}

/// Exploration noise and the generator that drives it.
pub struct Exploration<'a, R: Rng> {
    pub noise: &'a mut OUNoise,
    pub rng: &'a mut R,
}

/// One episode of `L + 1` transitions from `a_0 = 0`. `policy` maps `(o_k, a_k)` to
/// a planned increment; noise is added and the result clamped to the actuator
/// bounds. The recorded increment is the one actually applied, so
/// `a_{k+1} = a_k + Δa_k` holds exactly. The last transition's cost is the
/// env's cost of `a_L` without stepping past the episode end.
pub fn run_episode<R: Rng>(
    env: &mut Env,
    reset_seed: u64,
    episode: usize,
    mut policy: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
    mut exploration: Option<Exploration<'_, R>>,
) -> Result<Episode> {
    let start = Instant::now();
    let task = env.task();
    let (len, m, lim) = (task.episode_length(), task.act_dim(), task.torque_limit());
    env.reset(reset_seed);
    if let Some(x) = exploration.as_mut() {
        x.noise.reset();
    }
    let sigma2 = exploration.as_ref().map_or(0.0, |x| x.noise.sigma2);

    let mut a = vec![0.0; m];
    let mut transitions = Vec::with_capacity(len + 1);
    let mut costs = Vec::with_capacity(len + 1);
    let mut states = Vec::with_capacity(len + 1);
    for k in 0..=len {
        let o = env.observe();
        let planned = policy(&o, &a)?;
        let mut next: Vec<f64> = a.iter().zip(&planned).map(|(x, d)| x + d).collect();
        if let Some(x) = exploration.as_mut() {
            for (n, e) in next.iter_mut().zip(x.noise.step(x.rng)) {
                *n += e;
            }
        }
        let da: Vec<f64> = next.iter().zip(&a).map(|(n, x)| n.clamp(-lim, lim) - x).collect();
        states.push(*env.system());
        let cost = if k < len { env.step(&a)?.cost } else { env.cost(&a)? };
        costs.push(cost);
        let next: Vec<f64> = a.iter().zip(&da).map(|(x, d)| x + d).collect();
        transitions.push(Transition { o, a: std::mem::replace(&mut a, next), da, c: cost });
    }
    Ok(Episode {
        transitions,
        log: EpisodeLog {
            episode,
            cumulative_cost: costs.iter().sum(),
            costs,
            sigma2,
            wall_time: start.elapsed().as_secs_f64(),
            states,
        },
    })
}
