use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moma::dataset;
use moma::envs::Env;
use moma::harness::{self, ExperimentConfig};
use moma::mappo::load_team;
use moma::worldmodel::save_ensemble;

#[derive(Parser)]
#[command(name = "moma", version, about = "Offline multi-agent RL with world-model rollouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset with scripted behaviour policies.
    GenData {
        #[arg(long)]
        env: String,
        /// favorable / neutral / unfavorable for the coordination game;
        /// mixture / expert-ccw / expert-cw / random for the reacher.
        #[arg(long)]
        behavior: String,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the world-model ensemble of a config's dataset.
    TrainWm {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `world_model` path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the config's algorithm. `MOMA_SEED` overrides the seed.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Greedy evaluation of a saved team.
    Eval {
        #[arg(long)]
        team: PathBuf,
        /// Supplies the normalizers.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Aggregate run summaries into mean ± SEM rows.
    Report {
        /// Run directories or summary files.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> moma::Result<()> {
    match command {
        Command::GenData {
            env,
            behavior,
            episodes,
            seed,
            out,
        } => {
            let ds = harness::gen_data(&env, &behavior, episodes, seed, &out)?;
            let stats = ds.compute_stats(&ds.env()?);
            println!(
                "{}: {} episodes, {} steps, mean score {:.4}",
                out.display(),
                ds.meta.n_episodes,
                ds.meta.n_steps,
                stats.score_mean
            );
        }
        Command::TrainWm { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.world_model.clone())
                .ok_or_else(|| moma::Error::config("no output path: pass --out or set world_model"))?;
            let ds = dataset::load(&cfg.dataset)?;
            let ens = moma::worldmodel::train_ensemble(&ds, &cfg.wm, cfg.seed)?;
            save_ensemble(&ens, &out)?;
            println!("{}: l_eps {:.6}", out.display(), ens.l_eps);
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let s = harness::run(&cfg)?;
            let e = &s.final_eval;
            println!(
                "{} seed {} on {}/{}: score {:.4} ± {:.4}, normalized {:.4}",
                s.algorithm.name(),
                s.seed,
                s.env,
                s.dataset,
                e.mean,
                e.sem,
                e.normalized
            );
        }
        Command::Eval {
            team,
            dataset: ds_path,
            episodes,
            seed,
        } => {
            let (team, algorithm) = load_team(&team)?;
            let ds = dataset::load(&ds_path)?;
            let env = Env::from_id(&team.env_id)?;
            let e = harness::evaluate(&env, &team, episodes, seed, ds.meta.normalizers)?;
            println!(
                "{algorithm} on {}: score {:.4} ± {:.4}, normalized {:.4} ± {:.4}",
                team.env_id, e.mean, e.sem, e.normalized, e.normalized_sem
            );
            if let Some(c) = e.convention_consistency {
                println!("elbow convention consistency {c:.3}");
            }
        }
        Command::Report { runs } => {
            let summaries = runs.iter().map(|p| harness::load_summary(p)).collect::<moma::Result<Vec<_>>>()?;
            print!("{}", harness::format_report(&harness::report(&summaries)?));
        }
    }
    Ok(())
}
