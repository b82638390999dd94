//! Deterministic policy evaluation, metrics, ablation matrices and episode
//! log export.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::env::{Action, Env, EpisodeRecord, Observation, TrajectoryRow, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::learner::{derive_seed, Mode, Policy, TrainLogRow, Trainer};
use crate::track::{self, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMetrics {
    pub waypoint: usize,
    pub passes: usize,
    pub pass_rate: f64,
    pub aer_p: Option<f64>,
    pub aer_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean undiscounted original (unshaped) return per episode.
    pub mean_return: f64,
    /// Mean flight time of successful episodes, s.
    pub flight_time: Option<f64>,
    /// Mean position error over all recorded crossings, m.
    pub aer_p: Option<f64>,
    /// Mean body-z angle error over all recorded crossings, degrees.
    pub aer_a: Option<f64>,
    pub mean_steps: f64,
    pub per_gate: Vec<GateMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalMetrics {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len();
        let gates = records.iter().map(|r| r.gates).max().unwrap_or(0);
        let passes = || records.iter().flat_map(|r| r.passes.iter());
        let per_gate = (0..gates)
            .map(|g| {
                let ps: Vec<_> = passes().filter(|p| p.waypoint == g).collect();
                GateMetrics {
                    waypoint: g,
                    passes: ps.len(),
                    pass_rate: if n > 0 { ps.len() as f64 / n as f64 } else { 0.0 },
                    aer_p: mean(ps.iter().map(|p| p.p_error)),
                    aer_a: mean(ps.iter().map(|p| p.theta_error_deg)),
                }
            })
            .collect();
        let successes = records.iter().filter(|r| r.success()).count();
        Self {
            episodes: n,
            success_rate: if n > 0 { successes as f64 / n as f64 } else { 0.0 },
            mean_return: mean(records.iter().map(|r| r.original_return)).unwrap_or(0.0),
            flight_time: mean(records.iter().filter(|r| r.success()).map(|r| r.flight_time)),
            aer_p: mean(passes().map(|p| p.p_error)),
            aer_a: mean(passes().map(|p| p.theta_error_deg)),
            mean_steps: mean(records.iter().map(|r| r.steps as f64)).unwrap_or(0.0),
            per_gate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: EvalMetrics,
    pub episodes: Vec<EpisodeRecord>,
    /// Per-episode trajectories, when requested.
    pub trajectories: Vec<Vec<TrajectoryRow>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Overrides the configured gate speed range when set.
    pub gate_speed: Option<f64>,
    pub seed: u64,
    pub record_trajectories: bool,
}

const EVAL_TAG: u64 = 0xE7A1;

/// Flies `opts.episodes` episodes from the nominal start distribution with the
/// mean action. Episode `i` uses its own seeded environment, so results do
/// not depend on batching or order.
pub fn run_eval(policy: &Policy, cfg: &Config, track: Arc<Track>, opts: EvalOptions) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    if policy.obs_dim() != OBS_DIM || policy.act_dim() != ACT_DIM {
        return Err(Error::Checkpoint("policy shape does not match the environment".into()));
    }
    let mut envs = Vec::with_capacity(opts.episodes);
    let mut obs: Vec<Observation> = Vec::with_capacity(opts.episodes);
    for i in 0..opts.episodes {
        let mut env = Env::new(track.clone(), cfg, derive_seed(opts.seed, EVAL_TAG, i as u64))?;
        env.set_gate_speed(opts.gate_speed);
        env.set_record_trajectory(opts.record_trajectories);
        obs.push(env.reset_from_start()?);
        envs.push(env);
    }
    let mut live: Vec<usize> = (0..envs.len()).collect();
    let mut input = Vec::with_capacity(live.len() * OBS_DIM);
    while !live.is_empty() {
        input.clear();
        for &i in &live {
            input.extend_from_slice(obs[i].as_slice());
        }
        let means = policy.means(&input, live.len())?;
        let mut still = Vec::with_capacity(live.len());
        for (k, &i) in live.iter().enumerate() {
            let a: Action = std::array::from_fn(|c| means[k * ACT_DIM + c]);
            let st = envs[i].step(&a)?;
            obs[i] = st.obs;
            if !st.done {
                still.push(i);
            }
        }
        live = still;
    }
    let episodes: Vec<EpisodeRecord> = envs.iter().map(|e| e.episode().clone()).collect();
    let trajectories = if opts.record_trajectories {
        envs.iter().map(|e| e.trajectory().to_vec()).collect()
    } else {
        vec![]
    };
    Ok(EvalReport {
        metrics: EvalMetrics::from_records(&episodes),
        episodes,
        trajectories,
    })
}

pub fn write_episodes(path: impl AsRef<Path>, episodes: &[EpisodeRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for ep in episodes {
        let line = serde_json::to_string(ep).map_err(|e| Error::parse(path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: impl AsRef<Path>) -> Result<Vec<EpisodeRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// One exported trajectory with its episode summary, as written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub record: EpisodeRecord,
    pub trajectory: Vec<TrajectoryRow>,
}

impl EpisodeLog {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

pub const TRAJECTORY_HEADER: [&str; 20] = [
    "t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz", "thrust", "cmd_wx",
    "cmd_wy", "cmd_wz", "reward", "gate",
];

/// Writes one CSV row per policy step.
pub fn export_trajectory(rows: &[TrajectoryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRAJECTORY_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec: Vec<String> = Vec::with_capacity(20);
        rec.push(r.t.to_string());
        rec.extend(r.p.iter().chain(&r.q).chain(&r.v).chain(&r.w).chain(&r.cmd).map(f64::to_string));
        rec.push(r.reward.to_string());
        rec.push(r.gate.to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let f: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::parse(path, e)))
            .collect::<Result<_>>()?;
        if f.len() != 20 {
            return Err(Error::parse(path, format!("expected 20 columns, got {}", f.len())));
        }
        out.push(TrajectoryRow {
            t: f[0],
            p: [f[1], f[2], f[3]],
            q: [f[4], f[5], f[6], f[7]],
            v: [f[8], f[9], f[10]],
            w: [f[11], f[12], f[13]],
            cmd: [f[14], f[15], f[16], f[17]],
            reward: f[18],
            gate: f[19] as usize,
        });
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub mode: Mode,
    pub track: String,
    pub seed: u64,
    #[serde(default)]
    pub gate_speed: f64,
}

/// Training/evaluation cells. A matrix file lists cells explicitly or as the
/// product of `modes × tracks × seeds × gate_speeds`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunMatrix {
    /// Base configuration file, relative to the matrix file.
    pub config: Option<PathBuf>,
    pub modes: Vec<Mode>,
    pub tracks: Vec<String>,
    pub seeds: Vec<u64>,
    pub gate_speeds: Vec<f64>,
    pub final_episodes: Option<usize>,
    pub cells: Vec<Cell>,
}

impl RunMatrix {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        if let (Some(c), Some(dir)) = (&m.config, path.parent()) {
            m.config = Some(dir.join(c));
        }
        m.expanded()?;
        Ok(m)
    }

    /// Explicit cells followed by the product cells, validated.
    pub fn expanded(&self) -> Result<Vec<Cell>> {
        let mut cells = self.cells.clone();
        let speeds = if self.gate_speeds.is_empty() { vec![0.0] } else { self.gate_speeds.clone() };
        for &mode in &self.modes {
            for t in &self.tracks {
                for &seed in &self.seeds {
                    for &gate_speed in &speeds {
                        cells.push(Cell {
                            mode,
                            track: t.clone(),
                            seed,
                            gate_speed,
                        });
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Config("run matrix has no cells".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &cells {
            track::fixture(&c.track)?;
            if !(c.gate_speed >= 0.0) {
                return Err(Error::Config(format!("negative gate speed in cell {c:?}")));
            }
            if !seen.insert((c.mode, c.track.clone(), c.seed, c.gate_speed.to_bits())) {
                return Err(Error::Config(format!("duplicate cell {c:?}")));
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Done {
        curve: Vec<TrainLogRow>,
        auc: f64,
        final_metrics: EvalMetrics,
    },
    Failed {
        reason: String,
        curve: Vec<TrainLogRow>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: Cell,
    pub training_episodes: u64,
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub cells: usize,
    pub mean_auc: Option<f64>,
    pub mean_final_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub budget: u64,
    pub cells: Vec<CellReport>,
    pub modes: Vec<ModeSummary>,
    pub total_training_episodes: u64,
}

/// Mean evaluation reward over the curve, trapezoid-weighted by env steps.
/// A single point counts as its own value.
pub fn curve_auc(curve: &[TrainLogRow]) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter_map(|r| r.eval_reward.map(|y| (r.env_steps as f64, y)))
        .collect();
    match pts.as_slice() {
        [] => f64::NAN,
        [(_, y)] => *y,
        _ => {
            let span = pts.last().unwrap().0 - pts[0].0;
            if span <= 0.0 {
                return pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            }
            pts.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum::<f64>() / span
        }
    }
}

fn run_cell(base: &Config, cell: &Cell, budget: u64, final_episodes: usize) -> (u64, CellOutcome) {
    let mut cfg = base.clone();
    cfg.track = track::TrackSpec {
        fixture: Some(cell.track.clone()),
        ..Default::default()
    };
    let mut trainer = match Trainer::new(cfg.clone(), cell.mode, cell.seed) {
        Ok(t) => t,
        Err(e) => {
            return (
                0,
                CellOutcome::Failed {
                    reason: e.to_string(),
                    curve: vec![],
                },
            )
        }
    };
    let res = trainer.train(Some(budget), None);
    let curve = trainer.log.clone();
    if let Err(e) = res {
        return (trainer.episodes, CellOutcome::Failed { reason: e.to_string(), curve });
    }
    let opts = EvalOptions {
        episodes: final_episodes,
        gate_speed: Some(cell.gate_speed),
        seed: derive_seed(cell.seed, 0xF1A1, 0),
        record_trajectories: false,
    };
    match run_eval(&trainer.policy, &cfg, trainer.track().clone(), opts) {
        Ok(r) => (
            trainer.episodes,
            CellOutcome::Done {
                auc: curve_auc(&curve),
                curve,
                final_metrics: r.metrics,
            },
        ),
        Err(e) => (trainer.episodes, CellOutcome::Failed { reason: e.to_string(), curve }),
    }
}

/// Trains every cell for `budget` env steps and evaluates the result. A
/// failing cell is reported and the others continue.
pub fn run_ablation(base: &Config, matrix: &RunMatrix, budget: u64) -> Result<AblationReport> {
    let cells = matrix.expanded()?;
    let final_episodes = matrix.final_episodes.unwrap_or(base.ppo.eval_episodes);
    let mut reports = Vec::with_capacity(cells.len());
    for cell in cells {
        log::info!("ablation cell {:?} {} seed {} mv {}", cell.mode, cell.track, cell.seed, cell.gate_speed);
        let (episodes, outcome) = run_cell(base, &cell, budget, final_episodes);
        if let CellOutcome::Failed { reason, .. } = &outcome {
            log::warn!("cell failed: {reason}");
        }
        reports.push(CellReport {
            cell,
            training_episodes: episodes,
            outcome,
        });
    }
    let mut modes: Vec<Mode> = reports.iter().map(|r| r.cell.mode).collect();
    modes.dedup();
    let mut uniq = Vec::new();
    for m in modes {
        if !uniq.contains(&m) {
            uniq.push(m);
        }
    }
    let summaries = uniq
        .into_iter()
        .map(|mode| {
            let done: Vec<(f64, f64)> = reports
                .iter()
                .filter(|r| r.cell.mode == mode)
                .filter_map(|r| match &r.outcome {
                    CellOutcome::Done { auc, final_metrics, .. } => Some((*auc, final_metrics.success_rate)),
                    CellOutcome::Failed { .. } => None,
                })
                .collect();
            ModeSummary {
                mode,
                cells: reports.iter().filter(|r| r.cell.mode == mode).count(),
                mean_auc: mean(done.iter().map(|d| d.0)),
                mean_final_success: mean(done.iter().map(|d| d.1)),
            }
        })
        .collect();
    Ok(AblationReport {
        budget,
        total_training_episodes: reports.iter().map(|r| r.training_episodes).sum(),
        cells: reports,
        modes: summaries,
    })
}
