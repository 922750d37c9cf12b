use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::agent::{Agent, Variant};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::par::{try_map_indexed, Execution};

/// One logged point of a seed's learning curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub timestep: u64,
    pub update: u64,
    pub episodes: u64,
    pub moving_average_reward: f64,
    pub eta2: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_r2: f64,
    pub bonus_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub timestep: u64,
    pub mean_moving_average: f64,
    pub std_moving_average: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl SeedRun {
    pub fn final_moving_average(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.moving_average_reward)
    }

    /// Mean of the moving-average curve over the logged points.
    pub fn auc(&self) -> f64 {
        area_under_curve(&self.rows.iter().map(|r| r.moving_average_reward).collect::<Vec<_>>())
    }

    pub fn bonus_ratios(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.bonus_ratio).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub variant: Variant,
    pub runs: Vec<SeedRun>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    pub fn mean_auc(&self) -> f64 {
        self.runs.iter().map(SeedRun::auc).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_final(&self) -> f64 {
        self.runs.iter().map(SeedRun::final_moving_average).sum::<f64>() / self.runs.len() as f64
    }
}

/// Trailing mean over the last `window` entries; shorter prefixes average what exists.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &x) in series.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

/// Mean height of an evenly spaced curve, i.e. the area divided by its width.
pub fn area_under_curve(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Trailing window over completed episode rewards.
struct EpisodeWindow {
    window: usize,
    recent: VecDeque<f64>,
}

impl EpisodeWindow {
    fn push(&mut self, reward: f64) {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(reward);
    }

    /// 0 until the first episode completes.
    fn mean(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().sum::<f64>() / self.recent.len() as f64
        }
    }
}

/// Trains one seed for the configured budget. Deterministic in `seed`.
pub fn run_seed(cfg: &ExperimentConfig, env: &TabularMdp, seed: u64) -> Result<SeedRun> {
    let mut agent = Agent::new(env, cfg.agent.clone(), seed)?;
    let mut window = EpisodeWindow { window: cfg.moving_average_window, recent: VecDeque::new() };
    let updates = cfg.num_updates();
    let mut rows = Vec::new();
    let mut episodes = 0u64;
    for u in 0..updates {
        let (batch, m) = agent.train_iteration(env, Execution::Sequential)?;
        for e in &batch.episodes {
            window.push(e.total_reward);
        }
        episodes += batch.episodes.len() as u64;
        if (u + 1) % cfg.log_every == 0 || u + 1 == updates {
            rows.push(MetricsRow {
                timestep: agent.timesteps(),
                update: u + 1,
                episodes,
                moving_average_reward: window.mean(),
                eta2: m.eta2,
                entropy: m.entropy,
                clip_fraction: m.clip_fraction,
                mean_r2: m.mean_r2,
                bonus_ratio: m.bonus_ratio,
            });
        }
    }
    Ok(SeedRun { seed, rows })
}

/// Mean and sample standard deviation across seeds at each logged timestep.
pub fn summarize(runs: &[SeedRun]) -> Result<Vec<SummaryRow>> {
    let first = runs.first().ok_or_else(|| Error::InvalidConfig("no runs to summarize".into()))?;
    let mut out = Vec::with_capacity(first.rows.len());
    for (i, row) in first.rows.iter().enumerate() {
        let mut values = Vec::with_capacity(runs.len());
        for r in runs {
            let other = r.rows.get(i).filter(|o| o.timestep == row.timestep);
            let other = other.ok_or_else(|| Error::InvalidConfig("seed runs are logged at different timesteps".into()))?;
            values.push(other.moving_average_reward);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        out.push(SummaryRow { timestep: row.timestep, mean_moving_average: mean, std_moving_average: std, seeds: values.len() });
    }
    Ok(out)
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

/// Runs every seed without touching the filesystem.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let env = cfg.environment.build()?;
    let runs = try_map_indexed(cfg.execution, cfg.seeds.len(), |k| run_seed(cfg, &env, cfg.seeds[k]))?;
    let summary = summarize(&runs)?;
    Ok(ExperimentResult { variant: cfg.agent.variant, runs, summary })
}

/// Runs every seed and writes `seed_<k>.csv` plus `summary.csv` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let result = run_seeds(cfg)?;
    for run in &result.runs {
        write_csv(&seed_csv_path(&cfg.output_dir, run.seed), &run.rows)?;
    }
    write_csv(&cfg.output_dir.join("summary.csv"), &result.summary)?;
    Ok(result)
}
