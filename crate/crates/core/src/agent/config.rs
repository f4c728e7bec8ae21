use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::envs::{ObsMode, Task};
use crate::error::{Error, Result};
use crate::koopman::{Architecture, GainMode};
use crate::lmpc::{PlanConfig, SolverOptions};
use crate::training::TrainConfig;

/// Every knob of a run. Field names in config files are given next to each field.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub task: Task,
    pub mode: ObsMode,
    /// `P`
    pub pairs: usize,
    /// `H`
    pub horizon: usize,
    /// `T`
    pub seq_len: usize,
    /// `R`
    pub action_cost: f64,
    /// `R_tilde`
    pub increment_cost: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lr: f64,
    /// `B`
    pub batch_size: usize,
    /// `N_initial`
    pub n_initial: usize,
    /// `E_initial`
    pub e_initial: usize,
    /// `N_loop`
    pub n_loop: usize,
    /// `E_loop`
    pub e_loop: usize,
    pub lambda_ou: f64,
    pub sigma2_init: f64,
    /// `N_ou`
    pub n_ou: usize,
    /// Total number of collected episodes.
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub gain_mode: GainMode,
    pub arch: Architecture,
    pub eval_episodes: usize,
}

impl AgentConfig {
    pub fn new(task: Task, mode: ObsMode) -> Self {
        let (pairs, budget) = match task {
            Task::Pendulum => (10, 600),
            Task::Manipulator => (30, 1000),
        };
        Self {
            task,
            mode,
            pairs,
            horizon: 15,
            seq_len: 15,
            action_cost: 0.001,
            increment_cost: 0.01,
            alpha1: 10.0,
            alpha2: 1e-14,
            lr: 1e-3,
            batch_size: 32,
            n_initial: 90,
            e_initial: 100,
            n_loop: 20,
            e_loop: 3,
            lambda_ou: 0.85,
            sigma2_init: 0.85,
            n_ou: 400,
            budget,
            seeds: vec![0, 1, 2, 3, 4],
            gain_mode: GainMode::Fixed,
            arch: Architecture::default(),
            eval_episodes: 10,
        }
    }

    /// Parses `key = value` lines over the task defaults. `#` starts a comment.
    /// A `task` key selects the defaults before the other keys are applied.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().trim_matches('"').to_string()));
        }
        let lookup = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let task = lookup("task").map(Task::from_str).transpose()?.unwrap_or(Task::Pendulum);
        let mode = lookup("mode").map(ObsMode::from_str).transpose()?.unwrap_or_default();
        let mut cfg = Self::new(task, mode);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))
        }
        fn list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| num(key, s))
                .collect()
        }
        match key {
            "task" => self.task = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "P" => self.pairs = num(key, value)?,
            "H" => self.horizon = num(key, value)?,
            "T" => self.seq_len = num(key, value)?,
            "R" => self.action_cost = num(key, value)?,
            "R_tilde" => self.increment_cost = num(key, value)?,
            "alpha1" => self.alpha1 = num(key, value)?,
            "alpha2" => self.alpha2 = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "B" => self.batch_size = num(key, value)?,
            "N_initial" => self.n_initial = num(key, value)?,
            "E_initial" => self.e_initial = num(key, value)?,
            "N_loop" => self.n_loop = num(key, value)?,
            "E_loop" => self.e_loop = num(key, value)?,
            "lambda_ou" => self.lambda_ou = num(key, value)?,
            "sigma2_init" => self.sigma2_init = num(key, value)?,
            "N_ou" => self.n_ou = num(key, value)?,
            "budget" => self.budget = num(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "gain_mode" => self.gain_mode = value.parse()?,
            "encoder_hidden" => self.arch.encoder_hidden = list(key, value)?,
            "decoder_hidden" => self.arch.decoder_hidden = list(key, value)?,
            "cost_hidden" => self.arch.cost_hidden = list(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The config in the same `key = value` form [`AgentConfig::parse`] reads.
    pub fn render(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let task = match self.task {
            Task::Pendulum => "pendulum",
            Task::Manipulator => "manipulator",
        };
        let mode = match self.mode {
            ObsMode::Clean => "clean",
            ObsMode::Distractor => "distractor",
        };
        let gain = match self.gain_mode {
            GainMode::Fixed => "fixed",
            GainMode::Decoded => "decoded",
        };
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        line("task", task.into());
        line("mode", mode.into());
        line("P", self.pairs.to_string());
        line("H", self.horizon.to_string());
        line("T", self.seq_len.to_string());
        line("R", self.action_cost.to_string());
        line("R_tilde", self.increment_cost.to_string());
        line("alpha1", self.alpha1.to_string());
        line("alpha2", format!("{:e}", self.alpha2));
        line("lr", self.lr.to_string());
        line("B", self.batch_size.to_string());
        line("N_initial", self.n_initial.to_string());
        line("E_initial", self.e_initial.to_string());
        line("N_loop", self.n_loop.to_string());
        line("E_loop", self.e_loop.to_string());
        line("lambda_ou", self.lambda_ou.to_string());
        line("sigma2_init", self.sigma2_init.to_string());
        line("N_ou", self.n_ou.to_string());
        line("budget", self.budget.to_string());
        line(
            "seeds",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        line("gain_mode", gain.into());
        line("encoder_hidden", join(&self.arch.encoder_hidden));
        line("decoder_hidden", join(&self.arch.decoder_hidden));
        line("cost_hidden", join(&self.arch.cost_hidden));
        line("eval_episodes", self.eval_episodes.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 || self.horizon == 0 || self.seq_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("P, H, T and B must be at least 1".into()));
        }
        if self.n_initial == 0 || self.n_loop == 0 || self.e_initial == 0 || self.e_loop == 0 {
            return Err(Error::Config("episode and epoch counts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.lambda_ou) || self.sigma2_init < 0.0 {
            return Err(Error::Config("need 0 ≤ lambda_ou < 1 and sigma2_init ≥ 0".into()));
        }
        if self.seq_len >= self.task.episode_length() + 1 {
            return Err(Error::Config("T must be shorter than an episode".into()));
        }
        self.plan_config()?;
        self.train_config(1).validate()
    }

    pub fn plan_config(&self) -> Result<PlanConfig<f64>> {
        let lim = self.task.torque_limit();
        let m = self.task.act_dim();
        PlanConfig::isotropic(self.horizon, self.action_cost, self.increment_cost, vec![-lim; m], vec![lim; m])
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions::default()
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig<f64> {
        TrainConfig {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs,
            horizon: self.seq_len,
            mode: self.gain_mode,
        }
    }
}
