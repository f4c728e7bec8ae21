//! Seeded simulators: pendulum swing-up and a two-link arm tracking a moving
//! target, each observable cleanly or mixed with four distractor replicas.

mod distractor;
mod manipulator;
mod pendulum;
mod trajectory;

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use distractor::{DistractorBank, EXCITATION_DECAY, REPLICAS};
pub use manipulator::ManipulatorState;
pub use pendulum::{wrap_angle, PendulumState};
pub use trajectory::TrajectoryWriter;

use crate::error::{dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Pendulum,
    Manipulator,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(Self::Pendulum),
            "manipulator" => Ok(Self::Manipulator),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl Task {
    pub fn act_dim(self) -> usize {
        match self {
            Self::Pendulum => 1,
            Self::Manipulator => 2,
        }
    }

    /// Observation length of one system.
    pub fn system_obs_dim(self) -> usize {
        match self {
            Self::Pendulum => 3,
            Self::Manipulator => 10,
        }
    }

    pub fn torque_limit(self) -> f64 {
        match self {
            Self::Pendulum => pendulum::MAX_TORQUE,
            Self::Manipulator => manipulator::MAX_TORQUE,
        }
    }

    pub fn episode_length(self) -> usize {
        match self {
            Self::Pendulum => 100,
            Self::Manipulator => 150,
        }
    }

    pub fn dt(self) -> f64 {
        match self {
            Self::Pendulum => pendulum::DT,
            Self::Manipulator => manipulator::DT,
        }
    }

    /// Action cost of the emitted cost, `R = r·I`.
    pub fn action_cost(self) -> f64 {
        match self {
            Self::Pendulum => 0.001,
            Self::Manipulator => manipulator::ACTION_COST,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObsMode {
    #[default]
    Clean,
    Distractor,
}

impl FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Self::Clean),
            "distractor" => Ok(Self::Distractor),
            other => Err(Error::Config(format!("unknown observation mode `{other}`"))),
        }
    }
}

/// One physical system of either task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum System {
    Pendulum(PendulumState),
    Manipulator(ManipulatorState),
}

impl System {
    pub fn random(task: Task, rng: &mut ChaCha8Rng) -> Self {
        match task {
            Task::Pendulum => Self::Pendulum(PendulumState::random(rng)),
            Task::Manipulator => Self::Manipulator(ManipulatorState::random(rng)),
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match self {
            Self::Pendulum(p) => p.observe().to_vec(),
            Self::Manipulator(m) => m.observe().to_vec(),
        }
    }

    pub fn cost(&self, action: &[f64]) -> f64 {
        match self {
            Self::Pendulum(p) => p.cost(action[0]),
            Self::Manipulator(m) => m.cost(&[action[0], action[1]]),
        }
    }

    /// Advances one step and returns the pre-step cost.
    pub fn step(&mut self, action: &[f64]) -> f64 {
        match self {
            Self::Pendulum(p) => p.step(action[0]),
            Self::Manipulator(m) => m.step(&[action[0], action[1]]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    /// Cost of the pre-step state and the applied action; zero after `reset`.
    pub cost: f64,
    pub done: bool,
}

/// A task instance. The distractor interleaving is fixed by `layout_seed` for
/// the lifetime of the instance; `reset` draws new initial states.
#[derive(Clone, Debug)]
pub struct Env {
    task: Task,
    mode: ObsMode,
    system: System,
    bank: Option<DistractorBank>,
    /// `layout[i]` is the position in the concatenated observation that lands at index `i`.
    layout: Vec<usize>,
    steps: usize,
}

/// Stream ids split one seed into independent generators.
const SYSTEM_STREAM: u64 = 0;
const DISTRACTOR_STREAM: u64 = 1;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Env {
    pub fn new(task: Task, mode: ObsMode, layout_seed: u64) -> Self {
        let full = match mode {
            ObsMode::Clean => task.system_obs_dim(),
            ObsMode::Distractor => task.system_obs_dim() * (REPLICAS + 1),
        };
        let mut layout: Vec<usize> = (0..full).collect();
        if mode == ObsMode::Distractor {
            use rand::seq::SliceRandom;
            layout.shuffle(&mut stream(layout_seed, DISTRACTOR_STREAM + 1));
        }
        let mut env = Self {
            task,
            mode,
            system: System::random(task, &mut stream(layout_seed, SYSTEM_STREAM)),
            bank: None,
            layout,
            steps: 0,
        };
        env.reset(layout_seed);
        env
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.len()
    }

    pub fn act_dim(&self) -> usize {
        self.task.act_dim()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn bank(&self) -> Option<&DistractorBank> {
        self.bank.as_ref()
    }

    /// Indices of the controlled system's entries within the observation.
    pub fn relevant_indices(&self) -> Vec<usize> {
        let d = self.task.system_obs_dim();
        (0..d).map(|j| self.layout.iter().position(|&src| src == j).expect("permutation")).collect()
    }

    pub fn reset(&mut self, seed: u64) -> EnvStep {
        self.reset_with(seed, seed)
    }

    /// Separate seeds for the controlled system and the distractor replicas.
    pub fn reset_with(&mut self, seed: u64, distractor_seed: u64) -> EnvStep {
        self.system = System::random(self.task, &mut stream(seed, SYSTEM_STREAM));
        self.bank = match self.mode {
            ObsMode::Clean => None,
            ObsMode::Distractor => Some(DistractorBank::new(self.task, stream(distractor_seed, DISTRACTOR_STREAM))),
        };
        self.steps = 0;
        EnvStep {
            observation: self.observe(),
            cost: 0.0,
            done: false,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut full = self.system.observe();
        if let Some(bank) = &self.bank {
            full.extend(bank.observe());
        }
        self.layout.iter().map(|&src| full[src]).collect()
    }

    /// Cost the current state would emit under `action`.
    pub fn cost(&self, action: &[f64]) -> Result<f64> {
        self.check_action(action)?;
        Ok(self.system.cost(action))
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != self.act_dim() {
            return Err(dim_err("Env::step", format!("action of length {}, expected {}", action.len(), self.act_dim())));
        }
        Ok(())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<EnvStep> {
        self.check_action(action)?;
        if self.steps >= self.task.episode_length() {
            return Err(Error::Contract("step after the episode ended".into()));
        }
        let cost = self.system.step(action);
        if let Some(bank) = &mut self.bank {
            bank.excite();
        }
        self.steps += 1;
        Ok(EnvStep {
            observation: self.observe(),
            cost,
            done: self.steps == self.task.episode_length(),
        })
    }
}
