use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use aerobat::eval::{self, EpisodeLog, EvalOptions, RunMatrix};
use aerobat::learner::{write_log, Checkpoint, Mode, Trainer};
use aerobat::track::{self, TrackSpec};
use aerobat::{Config, Error, Result};

/// Log verbosity, in `env_logger` filter syntax.
const LOG_ENV: &str = "AEROBAT_LOG";

#[derive(Parser)]
#[command(name = "aerobat", version, about = "Quadrotor aerobatics simulator and PPO trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy and write the log, checkpoint and reset-set snapshot.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Env-step budget; overrides the configured iteration count.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Resume from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        track: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 0.0)]
        gate_speed: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the episode JSON-lines and per-episode logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every cell of a run matrix.
    Ablate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        budget: u64,
        /// Report path (JSON); printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an episode log written by `eval --out` to trajectory CSV.
    Export {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::parse(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_run(t: &Trainer, out: &Path) -> Result<()> {
    write_log(out.join("train_log.csv"), &t.log)?;
    Checkpoint::capture(t).save(out.join("checkpoint.bin"))?;
    if let Some(c) = &t.curriculum {
        c.sets.save(out.join("reset_sets.json"))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<PathBuf>,
    mode: Mode,
    seed: u64,
    out: PathBuf,
    budget: Option<u64>,
    iterations: Option<usize>,
    resume: Option<PathBuf>,
) -> Result<()> {
    ensure_dir(&out)?;
    let mut trainer = match resume {
        Some(p) => Checkpoint::load(p)?.into_trainer()?,
        None => {
            let cfg = match config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            Trainer::new(cfg, mode, seed)?
        }
    };
    let path = out.join("config.toml");
    std::fs::write(&path, trainer.cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    let res = trainer.train(budget, iterations);
    // On divergence the trainer holds the last good parameters.
    save_run(&trainer, &out)?;
    res?;
    if let Some(last) = trainer.log.last() {
        println!("{}", serde_json::to_string(last).unwrap_or_default());
    }
    Ok(())
}

fn eval_cmd(
    checkpoint: PathBuf,
    track_id: String,
    episodes: usize,
    gate_speed: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let ck = Checkpoint::load(&checkpoint)?;
    let mut cfg = ck.config.clone();
    cfg.track = TrackSpec {
        fixture: Some(track_id.clone()),
        ..Default::default()
    };
    let track = Arc::new(track::fixture(&track_id)?);
    let opts = EvalOptions {
        episodes,
        gate_speed: Some(gate_speed),
        seed,
        record_trajectories: out.is_some(),
    };
    let report = eval::run_eval(&ck.policy, &cfg, track, opts)?;
    if let Some(dir) = out {
        ensure_dir(&dir)?;
        eval::write_episodes(dir.join("episodes.jsonl"), &report.episodes)?;
        for (i, (rec, traj)) in report.episodes.iter().zip(&report.trajectories).enumerate() {
            EpisodeLog {
                record: rec.clone(),
                trajectory: traj.clone(),
            }
            .save(dir.join(format!("episode_{i:04}.json")))?;
        }
        write_json(&dir.join("metrics.json"), &report.metrics)?;
    }
    println!("{}", serde_json::to_string_pretty(&report.metrics).unwrap_or_default());
    Ok(())
}

fn ablate(matrix: PathBuf, budget: u64, out: Option<PathBuf>) -> Result<()> {
    let m = RunMatrix::load(&matrix)?;
    let base = match &m.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let report = eval::run_ablation(&base, &m, budget)?;
    match out {
        Some(p) => write_json(&p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).unwrap_or_default()),
    }
    Ok(())
}

fn export(episode: PathBuf, out: PathBuf) -> Result<()> {
    let log = EpisodeLog::load(&episode)?;
    eval::export_trajectory(&log.trajectory, &out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train {
            config,
            mode,
            seed,
            out,
            budget,
            iterations,
            resume,
        } => train(config, mode, seed, out, budget, iterations, resume),
        Cmd::Eval {
            checkpoint,
            track,
            episodes,
            gate_speed,
            seed,
            out,
        } => eval_cmd(checkpoint, track, episodes, gate_speed, seed, out),
        Cmd::Ablate { matrix, budget, out } => ablate(matrix, budget, out),
        Cmd::Export { episode, out } => export(episode, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error [{}]: {e}", cat.name());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
