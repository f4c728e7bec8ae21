use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use latent_koopman::agent::{
    curves, evaluate, latest_checkpoint, random_baseline, train_loop, write_curves, AgentConfig, RunState,
};
use latent_koopman::envs::{ObsMode, Task};
use latent_koopman::{Error, Result};

#[derive(Parser)]
#[command(name = "latent-koopman", version, about = "Latent Koopman models with linear MPC on pendulum and manipulator tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect episodes and train, writing checkpoints and curves.csv per seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Total number of episodes (overrides `budget`).
        #[arg(long)]
        episodes: Option<usize>,
        /// Continue from the latest checkpoint under each seed's directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run the noise-free policy of a checkpoint and report the cumulative cost.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory; defaults to the latest one under `<out>/seed_<seed>`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of evaluation episodes (overrides `eval_episodes`).
        #[arg(long)]
        episodes: Option<usize>,
        /// Also report the uniformly random policy on the same initial states.
        #[arg(long)]
        baseline: bool,
        /// Write every evaluation transition to `<out>/seed_<seed>/trajectories.csv`.
        #[arg(long)]
        trajectories: bool,
    },
    /// Rewrite curves.csv from the latest checkpoint of each seed.
    ExportCurves {
        #[command(flatten)]
        common: Common,
        /// Moving-average window in episodes.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
}

#[derive(Args)]
struct Common {
    /// pendulum | manipulator
    #[arg(long)]
    task: Option<Task>,
    /// clean | distractor
    #[arg(long)]
    mode: Option<ObsMode>,
    /// Run seed; replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; each seed writes to `<out>/seed_<seed>`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<AgentConfig> {
        let mut text = match &self.config {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        if let Some(t) = self.task {
            text.push_str(&format!("\ntask = {}", task_name(t)));
        }
        if let Some(m) = self.mode {
            text.push_str(&format!("\nmode = {}", mode_name(m)));
        }
        let mut cfg = AgentConfig::parse(&text)?;
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        Ok(cfg)
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed_{seed}"))
    }
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Pendulum => "pendulum",
        Task::Manipulator => "manipulator",
    }
}

fn mode_name(m: ObsMode) -> &'static str {
    match m {
        ObsMode::Clean => "clean",
        ObsMode::Distractor => "distractor",
    }
}

fn latest(dir: &std::path::Path) -> Result<PathBuf> {
    latest_checkpoint(dir)?.ok_or_else(|| Error::Config(format!("no checkpoint under {}", dir.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, episodes, resume } => {
            let mut cfg = common.config()?;
            if let Some(n) = episodes {
                cfg.budget = n;
            }
            for &seed in &cfg.seeds {
                let dir = common.seed_dir(seed);
                let state = if resume {
                    latest_checkpoint(&dir)?.map(RunState::load).transpose()?
                } else {
                    None
                };
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("config.txt"), cfg.render())?;
                let state = train_loop(&cfg, seed, state, Some(&dir))?;
                let last = curves(&state.history, 10).pop();
                if let Some(row) = last {
                    println!("seed {seed}: {} episodes, mean cost of last 10 = {:.3} ± {:.3}", row.episode, row.mean, row.std);
                }
            }
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
            baseline,
            trajectories,
        } => {
            let cfg = common.config()?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            for &seed in &cfg.seeds {
                let dir = common.seed_dir(seed);
                let ckpt = match &checkpoint {
                    Some(p) => p.clone(),
                    None => latest(&dir)?,
                };
                let state = RunState::load(&ckpt)?;
                let summary = evaluate(&cfg, &state.model, state.seed, n)?;
                println!("seed {seed}: policy cost {:.3} ± {:.3} over {n} episodes", summary.mean, summary.std);
                if baseline {
                    let random = random_baseline(&cfg, state.seed, n)?;
                    println!("seed {seed}: random cost {:.3} ± {:.3}", random.mean, random.std);
                }
                if trajectories {
                    std::fs::create_dir_all(&dir)?;
                    summary.write_trajectories(dir.join("trajectories.csv"))?;
                }
            }
        }
        Command::ExportCurves { common, window } => {
            let cfg = common.config()?;
            for &seed in &cfg.seeds {
                let dir = common.seed_dir(seed);
                let state = RunState::load(latest(&dir)?)?;
                let path = dir.join("curves.csv");
                write_curves(&path, &curves(&state.history, window))?;
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
