//! Parallel ensemble execution and seed-ordered aggregation.
//!
//! Trajectories run on a rayon pool in fixed-size chunks of consecutive
//! seeds; each chunk's results are folded into the accumulators in seed
//! order, so the summary is bit-identical for any worker count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use spinadapt_core::{robust_bounds, simulate_trajectory, RobustBounds, TrajectorySetup};
use thiserror::Error;

use crate::analysis::{first_entry_time, last_exit_time, last_time_below, ExitTime};
use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{self, OutputError, TrajectoryRow};

/// Column stems of `summary.csv`, in order.
pub const SERIES_NAMES: [&str; 5] = ["ratio", "d_B", "Delta", "C_theta", "u"];

/// `Delta` values below `-DELTA_SLACK` count as negative.
pub const DELTA_SLACK: f64 = 1e-6;

const CHUNK: usize = 32;

pub const THREADS_ENV: &str = "SPINADAPT_THREADS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("seed {seed}: time grid differs from the rest of the ensemble")]
    RaggedGrid { seed: u64 },
}

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub seed: u64,
    pub first_entry: Option<f64>,
    pub last_exit: ExitTime,
    pub final_d_b: f64,
    pub converged: bool,
    pub final_ratio: f64,
    /// Last recorded time with `Delta < -DELTA_SLACK`.
    pub last_negative_delta: Option<f64>,
}

impl TrajectoryStats {
    pub fn from_rows(
        seed: u64,
        rows: &[TrajectoryRow],
        bounds: &RobustBounds<f64>,
        convergence_tol: f64,
    ) -> Self {
        let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
        let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
        let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
        let last = rows.last().expect("trajectory has at least one sample");
        Self {
            seed,
            first_entry: first_entry_time(&times, &ratios, bounds),
            last_exit: last_exit_time(&times, &ratios, bounds),
            final_d_b: last.d_b,
            converged: last.d_b < convergence_tol,
            final_ratio: last.ratio,
            last_negative_delta: last_time_below(&times, &deltas, -DELTA_SLACK),
        }
    }

    /// No recorded `Delta < -DELTA_SLACK` at any time `>= t0`.
    pub fn delta_nonnegative_from(&self, t0: f64) -> bool {
        self.last_negative_delta.is_none_or(|t| t < t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    /// Trajectories aggregated (failures excluded).
    pub count: usize,
    pub ratio: SeriesStats,
    pub d_b: SeriesStats,
    pub delta: SeriesStats,
    pub c_theta: SeriesStats,
    pub u: SeriesStats,
    pub trajectories: Vec<TrajectoryStats>,
    pub failures: Vec<Failure>,
}

impl EnsembleSummary {
    /// Series in `SERIES_NAMES` order.
    pub fn series(&self) -> [&SeriesStats; 5] {
        [&self.ratio, &self.d_b, &self.delta, &self.c_theta, &self.u]
    }

    fn fraction(&self, pred: impl Fn(&TrajectoryStats) -> bool) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().filter(|s| pred(s)).count() as f64 / self.trajectories.len() as f64
    }

    /// Fraction with final `d_B` below the convergence tolerance.
    pub fn converged_fraction(&self) -> f64 {
        self.fraction(|s| s.converged)
    }

    /// Fraction whose ratio ends inside the robust interval and stays there
    /// after a last exit strictly before `horizon`.
    pub fn settled_fraction(&self, horizon: f64) -> f64 {
        self.fraction(|s| s.last_exit.time().is_some_and(|t| t < horizon))
    }

    pub fn delta_nonnegative_fraction(&self, from: f64) -> f64 {
        self.fraction(|s| s.delta_nonnegative_from(from))
    }
}

/// Seed-ordered accumulator behind [`EnsembleSummary`].
#[derive(Debug, Clone)]
pub struct Aggregator {
    bounds: RobustBounds<f64>,
    convergence_tol: f64,
    times: Vec<f64>,
    acc: Vec<[Welford; 5]>,
    trajectories: Vec<TrajectoryStats>,
    failures: Vec<Failure>,
}

impl Aggregator {
    pub fn new(bounds: RobustBounds<f64>, convergence_tol: f64) -> Self {
        Self {
            bounds,
            convergence_tol,
            times: Vec::new(),
            acc: Vec::new(),
            trajectories: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn push(&mut self, seed: u64, rows: &[TrajectoryRow]) -> Result<(), RunError> {
        if self.trajectories.is_empty() {
            self.times = rows.iter().map(|r| r.t).collect();
            self.acc = vec![[Welford::default(); 5]; rows.len()];
        } else if rows.len() != self.times.len()
            || rows.iter().zip(&self.times).any(|(r, &t)| r.t.to_bits() != t.to_bits())
        {
            return Err(RunError::RaggedGrid { seed });
        }
        for (acc, r) in self.acc.iter_mut().zip(rows) {
            for (w, x) in acc.iter_mut().zip([r.ratio, r.d_b, r.delta, r.c_theta, r.u]) {
                w.push(x);
            }
        }
        self.trajectories.push(TrajectoryStats::from_rows(
            seed,
            rows,
            &self.bounds,
            self.convergence_tol,
        ));
        Ok(())
    }

    pub fn push_failure(&mut self, seed: u64, message: String) {
        self.failures.push(Failure { seed, message });
    }

    pub fn finish(self) -> EnsembleSummary {
        let column = |k: usize| SeriesStats {
            mean: self.acc.iter().map(|a| a[k].mean).collect(),
            variance: self.acc.iter().map(|a| a[k].variance()).collect(),
        };
        EnsembleSummary {
            count: self.trajectories.len(),
            ratio: column(0),
            d_b: column(1),
            delta: column(2),
            c_theta: column(3),
            u: column(4),
            times: self.times,
            trajectories: self.trajectories,
            failures: self.failures,
        }
    }
}

/// Worker count: `flag`, else `SPINADAPT_THREADS`, else `config.threads`,
/// where 0 means one per available CPU.
pub fn resolve_threads(flag: Option<usize>, config: &ExperimentConfig) -> Result<usize, ConfigError> {
    let requested = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| ConfigError::Field {
                field: "threads",
                message: format!("{THREADS_ENV}=`{v}` is not a non-negative integer"),
            })?,
            Err(_) => config.threads,
        },
    };
    Ok(if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    })
}

/// Runs `config.realizations` trajectories with seeds
/// `base_seed, base_seed + 1, ...` on `threads` workers. When `out_dir` is
/// given the summary, per-trajectory stats and manifest are written there,
/// plus one CSV per trajectory if `config.write_trajectories`.
///
/// Failed trajectories are recorded in `failures` and excluded from every
/// statistic; they are not resampled.
pub fn run_ensemble(
    config: &ExperimentConfig,
    threads: usize,
    out_dir: Option<&Path>,
) -> Result<EnsembleSummary, RunError> {
    let setup = config.to_setup()?;
    let bounds = robust_bounds(config.n, config.n_bar).map_err(|e| ConfigError::Field {
        field: "n_bar",
        message: e.to_string(),
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let traj_dir: Option<PathBuf> = out_dir.filter(|_| config.write_trajectories).map(Path::to_path_buf);

    let seeds: Vec<u64> = config.seeds().collect();
    let mut agg = Aggregator::new(bounds, config.convergence_tol);
    for chunk in seeds.chunks(CHUNK) {
        let results: Vec<Result<Vec<TrajectoryRow>, String>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&seed| run_one(&setup, seed, traj_dir.as_deref()))
                .collect()
        });
        for (&seed, res) in chunk.iter().zip(results) {
            match res {
                Ok(rows) => agg.push(seed, &rows)?,
                Err(message) => agg.push_failure(seed, message),
            }
        }
    }
    let summary = agg.finish();
    if let Some(dir) = out_dir {
        write_outputs(dir, config, &summary)?;
    }
    Ok(summary)
}

fn run_one(setup: &TrajectorySetup<f64>, seed: u64, dir: Option<&Path>) -> Result<Vec<TrajectoryRow>, String> {
    let record = simulate_trajectory(setup, seed).map_err(|e| e.to_string())?;
    let rows: Vec<TrajectoryRow> = record.samples.iter().map(TrajectoryRow::from).collect();
    if let Some(dir) = dir {
        output::write_trajectory(&output::trajectory_path(dir, seed), &rows).map_err(|e| e.to_string())?;
    }
    Ok(rows)
}

/// Writes `summary.csv`, `trajectory_stats.csv` and `manifest.txt`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, summary: &EnsembleSummary) -> Result<(), OutputError> {
    output::write_text(&dir.join("manifest.txt"), &manifest(config, summary))?;
    output::write_summary(&dir.join("summary.csv"), summary)?;
    output::write_trajectory_stats(&dir.join("trajectory_stats.csv"), &summary.trajectories)
}

fn manifest(config: &ExperimentConfig, summary: &EnsembleSummary) -> String {
    let seeds = config.seeds();
    let mut text = format!(
        "# spinadapt {}\n# seeds {}..={} ({} realizations)\n# aggregated {} failed {}\n",
        env!("CARGO_PKG_VERSION"),
        seeds.start,
        seeds.end - 1,
        config.realizations,
        summary.count,
        summary.failures.len(),
    );
    for f in &summary.failures {
        text.push_str(&format!("# failure seed {}: {}\n", f.seed, f.message));
    }
    text.push_str("\n[config]\n");
    text.push_str(&config.to_toml_string());
    text
}

/// Rebuilds the summary single-threaded from the trajectory files of a
/// previous run. Seeds whose file is missing are reported as failures.
pub fn recompute_summary(dir: &Path, config: &ExperimentConfig) -> Result<EnsembleSummary, RunError> {
    config.validate()?;
    let bounds = robust_bounds(config.n, config.n_bar).map_err(|e| ConfigError::Field {
        field: "n_bar",
        message: e.to_string(),
    })?;
    let mut agg = Aggregator::new(bounds, config.convergence_tol);
    for seed in config.seeds() {
        let path = output::trajectory_path(dir, seed);
        if !path.exists() {
            agg.push_failure(seed, format!("missing {}", path.display()));
            continue;
        }
        agg.push(seed, &output::read_trajectory(&path)?)?;
    }
    Ok(agg.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 2.5, -3.0, 4.25, 0.125];
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((w.mean - mean).abs() < 1e-15);
        assert!((w.variance() - var).abs() < 1e-14);
        let mut one = Welford::default();
        one.push(7.0);
        assert_eq!((one.mean, one.variance()), (7.0, 0.0));
    }

    fn row(t: f64, ratio: f64) -> TrajectoryRow {
        TrajectoryRow {
            t,
            theta_hat: ratio,
            ratio,
            u: 0.0,
            d_b: 0.01,
            delta: 0.0,
            c_theta: (1.0 - ratio).powi(2),
            fid_true: 1.0,
            fid_filter: 1.0,
        }
    }

    #[test]
    fn aggregator_rejects_ragged_grids() {
        let b = robust_bounds(5, 0).unwrap();
        let mut agg = Aggregator::new(b, 0.05);
        agg.push(0, &[row(0.0, 1.0), row(1.0, 1.0)]).unwrap();
        assert!(matches!(
            agg.push(1, &[row(0.0, 1.0)]),
            Err(RunError::RaggedGrid { seed: 1 })
        ));
        assert!(agg.push(2, &[row(0.0, 1.0), row(2.0, 1.0)]).is_err());
    }

    #[test]
    fn fractions() {
        let b = robust_bounds(5, 0).unwrap();
        let mut agg = Aggregator::new(b, 0.05);
        agg.push(0, &[row(0.0, 2.0), row(1.0, 1.0)]).unwrap();
        agg.push(1, &[row(0.0, 1.0), row(1.0, 2.0)]).unwrap();
        agg.push_failure(2, "boom".into());
        let s = agg.finish();
        assert_eq!(s.count, 2);
        assert_eq!(s.settled_fraction(10.0), 0.5);
        assert_eq!(s.converged_fraction(), 1.0);
        assert_eq!(s.ratio.mean, vec![1.5, 1.5]);
        assert_eq!(s.ratio.variance, vec![0.5, 0.5]);
        assert_eq!(s.failures.len(), 1);
    }

    #[test]
    fn explicit_thread_flag_wins() {
        let c = ExperimentConfig {
            threads: 3,
            ..Default::default()
        };
        assert_eq!(resolve_threads(Some(2), &c).unwrap(), 2);
        assert!(resolve_threads(Some(0), &c).unwrap() >= 1);
    }
}
