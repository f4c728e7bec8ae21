use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{checkpoint_dir, csv_err};
use super::config::AgentConfig;
use super::episode::{run_episode, Episode, Exploration, LmpcPolicy};
use super::noise::OUNoise;
use crate::diffcore::{AdamState, Tensor};
use crate::envs::{Env, TrajectoryWriter};
use crate::error::Result;
use crate::koopman::{LatentModel, ModelConfig};
use crate::lmpc::Planner;
use crate::training::{create_sequences, train_epochs, ReplayBuffer};

/// Independent seed streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum SeedStream {
    Model = 1,
    TrainReset = 2,
    Noise = 3,
    Shuffle = 4,
    EvalReset = 5,
    RandomPolicy = 6,
}

pub fn derive_seed(seed: u64, stream: SeedStream, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    /// 1-based.
    pub episode: usize,
    pub cumulative_cost: f64,
    pub sigma2: f64,
}

/// Everything a run needs to continue where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct RunState {
    pub seed: u64,
    pub model: LatentModel<f64>,
    pub adam: AdamState<f64>,
    pub buffer: ReplayBuffer<f64>,
    pub history: Vec<EpisodeSummary>,
    /// Completed training phases.
    pub phases: usize,
}

impl RunState {
    pub fn new(cfg: &AgentConfig, seed: u64) -> Result<Self> {
        let model = build_model(cfg, seed)?;
        Ok(Self {
            seed,
            adam: AdamState::new(&model.params),
            model,
            buffer: ReplayBuffer::default(),
            history: Vec::new(),
            phases: 0,
        })
    }

    pub fn episodes(&self) -> usize {
        self.history.len()
    }
}

pub fn build_model(cfg: &AgentConfig, seed: u64) -> Result<LatentModel<f64>> {
    let m = cfg.task.act_dim();
    let mut action_cost = Tensor::zeros(&[m, m]);
    for i in 0..m {
        action_cost.data_mut()[i * m + i] = cfg.action_cost;
    }
    let obs_dim = Env::new(cfg.task, cfg.mode, seed).obs_dim();
    LatentModel::new(
        &ModelConfig {
            obs_dim,
            act_dim: m,
            pairs: cfg.pairs,
            dt: cfg.task.dt(),
            action_cost,
            arch: cfg.arch.clone(),
        },
        derive_seed(seed, SeedStream::Model, 0),
    )
}

fn lmpc_policy<'a>(cfg: &AgentConfig, model: &'a LatentModel<f64>, op: &'a crate::koopman::KoopmanOperator<f64>) -> Result<LmpcPolicy<'a>> {
    Ok(LmpcPolicy {
        model,
        op,
        planner: Planner::new(cfg.plan_config()?, cfg.solver_options())?,
    })
}

/// Collects episodes and trains until `cfg.budget` episodes have been run:
/// `N_initial` episodes then `E_initial` epochs, then rounds of `N_loop`
/// episodes and `E_loop` epochs on the whole buffer. With `out`, each phase
/// ends by writing `checkpoint_<episodes>/` and rewriting `curves.csv`.
pub fn train_loop(cfg: &AgentConfig, seed: u64, resume: Option<RunState>, out: Option<&Path>) -> Result<RunState> {
    cfg.validate()?;
    let mut state = match resume {
        Some(s) => s,
        None => RunState::new(cfg, seed)?,
    };
    let seed = state.seed;
    let mut env = Env::new(cfg.task, cfg.mode, seed);
    let mut noise = OUNoise::new(cfg.task.act_dim(), cfg.lambda_ou, cfg.sigma2_init, cfg.n_ou);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    while state.episodes() < cfg.budget {
        let (count, epochs) = if state.phases == 0 {
            (cfg.n_initial, cfg.e_initial)
        } else {
            (cfg.n_loop, cfg.e_loop)
        };
        let count = count.min(cfg.budget - state.episodes());
        let op = state.model.operator()?;
        {
            let mut policy = lmpc_policy(cfg, &state.model, &op)?;
            for _ in 0..count {
                let e = state.episodes() + 1;
                noise.anneal(e);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedStream::Noise, e as u64));
                policy.planner.reset();
                let ep = run_episode(
                    &mut env,
                    derive_seed(seed, SeedStream::TrainReset, e as u64),
                    e,
                    |o, a| policy.increment(o, a),
                    Some(Exploration {
                        noise: &mut noise,
                        rng: &mut rng,
                    }),
                )?;
                state.buffer.extend(create_sequences(&ep.transitions, cfg.seq_len))?;
                state.history.push(EpisodeSummary {
                    episode: e,
                    cumulative_cost: ep.log.cumulative_cost,
                    sigma2: ep.log.sigma2,
                });
            }
        }
        let metrics = train_epochs(
            &state.buffer,
            &mut state.model,
            &cfg.train_config(epochs),
            &mut state.adam,
            derive_seed(seed, SeedStream::Shuffle, state.phases as u64),
        )?;
        state.phases += 1;
        let curve = curves(&state.history, 10);
        let last = curve.last().expect("at least one episode");
        log::info!(
            "seed {seed} phase {}: {} episodes, mean cost of last 10 = {:.3} (std {:.3}), final loss {:.4e}",
            state.phases,
            state.episodes(),
            last.mean,
            last.std,
            metrics.last().map_or(f64::NAN, |m| m.losses.total)
        );
        if let Some(dir) = out {
            state.save(checkpoint_dir(dir, state.episodes()))?;
            write_curves(dir.join("curves.csv"), &curve)?;
        }
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
    pub sigma2: f64,
}

/// Mean and population standard deviation of the cumulative cost over the last
/// `window` episodes up to each episode.
pub fn curves(history: &[EpisodeSummary], window: usize) -> Vec<CurveRow> {
    (0..history.len())
        .map(|i| {
            let slice = &history[(i + 1).saturating_sub(window.max(1))..=i];
            let (mean, std) = mean_std(slice.iter().map(|h| h.cumulative_cost));
            CurveRow {
                episode: history[i].episode,
                mean,
                std,
                sigma2: history[i].sigma2,
            }
        })
        .collect()
}

pub fn write_curves(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["episode", "mean_cost_last10", "std", "sigma2"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.episode.to_string(), r.mean.to_string(), r.std.to_string(), r.sigma2.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub episodes: Vec<Episode>,
}

impl EvalSummary {
    fn from_episodes(episodes: Vec<Episode>) -> Self {
        let (mean, std) = mean_std(episodes.iter().map(|e| e.log.cumulative_cost));
        Self { mean, std, episodes }
    }

    pub fn write_trajectories(&self, path: impl AsRef<Path>) -> Result<()> {
        let first = &self.episodes[0].transitions[0];
        let mut w = TrajectoryWriter::create(path, first.a.len(), first.o.len())?;
        for (i, ep) in self.episodes.iter().enumerate() {
            for (k, t) in ep.transitions.iter().enumerate() {
                w.write(i, k, t.c, &t.a, &t.o)?;
            }
        }
        w.flush()
    }
}

/// Noise-free LMPC rollouts. `seed` fixes the observation layout (use the
/// training run's seed) and the initial states.
pub fn evaluate(cfg: &AgentConfig, model: &LatentModel<f64>, seed: u64, n_episodes: usize) -> Result<EvalSummary> {
    let mut env = Env::new(cfg.task, cfg.mode, seed);
    let op = model.operator()?;
    let mut policy = lmpc_policy(cfg, model, &op)?;
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        policy.planner.reset();
        episodes.push(run_episode::<ChaCha8Rng>(
            &mut env,
            derive_seed(seed, SeedStream::EvalReset, i as u64),
            i,
            |o, a| policy.increment(o, a),
            None,
        )?);
    }
    Ok(EvalSummary::from_episodes(episodes))
}

/// Uniformly random actions within the torque limits, on the evaluation initial states.
pub fn random_baseline(cfg: &AgentConfig, seed: u64, n_episodes: usize) -> Result<EvalSummary> {
    let mut env = Env::new(cfg.task, cfg.mode, seed);
    let lim = cfg.task.torque_limit();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SeedStream::RandomPolicy, 0));
    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        episodes.push(run_episode::<ChaCha8Rng>(
            &mut env,
            derive_seed(seed, SeedStream::EvalReset, i as u64),
            i,
            |_, a| Ok(a.iter().map(|x| rng.random_range(-lim..=lim) - x).collect()),
            None,
        )?);
    }
    Ok(EvalSummary::from_episodes(episodes))
}
