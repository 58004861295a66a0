//! `spinadapt` command line.
//!
//! Exit status: 0 on success, 1 on a configuration or usage error, 2 on a
//! runtime failure (including any failed trajectory).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Deserialize;
use spinadapt_core::{
    gain_integral, mean_exact, mean_limit, robust_bounds, scalar_sde_moments, simulate_trajectory,
    variance_exact, variance_limit, EquilibriumScenario, GainSchedule, MeanLimit, VarianceLimit,
};

use crate::config::{ConfigError, ExperimentConfig, FloorSpec, NoFloor};
use crate::ensemble::{resolve_threads, run_ensemble, RunError};
use crate::output::{self, TrajectoryRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spinadapt", version, about = "Adaptive feedback stabilization of N-level spin systems")]
pub struct Cli {
    /// Worker threads (overrides SPINADAPT_THREADS and the config; 0 = all CPUs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full ensemble described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (default: `output_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the robust ratio interval for N levels and target n_bar.
    Bounds {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        target: usize,
    },
    /// Print equilibrium predictions for the tuning law, optionally checked
    /// against a fresh scalar Monte Carlo.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        /// Monte Carlo paths (overrides `mc_paths` in the scenario; 0 skips).
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Re-run one seed at full resolution and dump every step.
    Replay {
        #[arg(long)]
        seed: u64,
        config: PathBuf,
        /// Output file (default: `<output_dir>/replay/traj_<seed>.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Equilibrium scenario file for `oracle`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    /// True-state level.
    pub true_level: usize,
    /// Filter level.
    pub filter_level: usize,
    pub theta: f64,
    pub theta_hat0: f64,
    pub k: f64,
    pub p: f64,
    pub times: Vec<f64>,
    #[serde(default)]
    pub mc_paths: usize,
    #[serde(default = "default_mc_dt")]
    pub mc_dt: f64,
    #[serde(default)]
    pub mc_seed: u64,
    #[serde(default = "no_floor")]
    pub theta_floor: FloorSpec,
}

fn default_mc_dt() -> f64 {
    0.01
}

fn no_floor() -> FloorSpec {
    FloorSpec::Keyword(NoFloor::None)
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Self::Config(c.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out` and diagnostics to stderr.
pub fn cli_main<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run { config, out: dir } => cmd_run(config, dir.as_deref(), cli.threads, out),
        Command::Bounds { n, target } => cmd_bounds(*n, *target, out),
        Command::Oracle { scenario, paths } => cmd_oracle(scenario, *paths, cli.threads, out),
        Command::Replay { seed, config, out: file } => cmd_replay(*seed, config, file.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let config = ExperimentConfig::load(path)?;
    for w in config.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(config)
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn cmd_run(path: &Path, dir: Option<&Path>, threads: Option<usize>, out: &mut dyn Write) -> Result<i32, Failure> {
    let config = load_config(path)?;
    let threads = resolve_threads(threads, &config)?;
    let dir = dir.map_or_else(|| config.output_dir.clone(), Path::to_path_buf);
    let summary = run_ensemble(&config, threads, Some(&dir))?;
    let horizon = summary.times.last().copied().unwrap_or(0.0);
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(runtime);
    w(out, format!("trajectories: {} ok, {} failed", summary.count, summary.failures.len()))?;
    if let Some(last) = summary.times.len().checked_sub(1) {
        w(out, format!("mean ratio at t = {horizon}: {:.6}", summary.ratio.mean[last]))?;
        w(out, format!("mean d_B at t = {horizon}: {:.6e}", summary.d_b.mean[last]))?;
    }
    w(out, format!("converged (d_B < {}): {:.4}", config.convergence_tol, summary.converged_fraction()))?;
    w(out, format!("settled in robust interval: {:.4}", summary.settled_fraction(horizon)))?;
    w(out, format!("outputs: {}", dir.display()))?;
    for f in &summary.failures {
        eprintln!("trajectory seed {} failed: {}", f.seed, f.message);
    }
    Ok(if summary.failures.is_empty() { EXIT_OK } else { EXIT_RUNTIME })
}

fn cmd_bounds(n: usize, target: usize, out: &mut dyn Write) -> Result<i32, Failure> {
    let b = robust_bounds::<f64>(n, target).map_err(|e| Failure::Config(e.to_string()))?;
    writeln!(out, "n = {n}, target = {target}").map_err(runtime)?;
    writeln!(out, "alpha = {:.10}", b.alpha).map_err(runtime)?;
    writeln!(out, "beta = {:.10}", b.beta).map_err(runtime)?;
    if let Some(l) = b.l {
        writeln!(out, "L = {l}").map_err(runtime)?;
    }
    writeln!(out, "ratio interval = ({:.6}, {:.6})", b.ratio_lower(), b.ratio_upper()).map_err(runtime)?;
    Ok(EXIT_OK)
}

fn cmd_oracle(path: &Path, paths: Option<usize>, threads: Option<usize>, out: &mut dyn Write) -> Result<i32, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let sc: ScenarioFile =
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let gain = GainSchedule::new(sc.k, sc.p).map_err(|e| Failure::Config(e.to_string()))?;
    let scenario = EquilibriumScenario::new(sc.n, sc.true_level, sc.filter_level, sc.theta, sc.theta_hat0, gain)
        .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(t) = sc.times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Failure::Config(format!("times: {t} is negative")));
    }
    let paths = paths.unwrap_or(sc.mc_paths);

    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(runtime);
    w(out, format!("x = {}, x_hat = {}, theta x / x_hat = {:.10}", scenario.x(), scenario.x_hat(), scenario.stationary_mean()))?;
    match mean_limit(&scenario) {
        MeanLimit::Limit(v) => w(out, format!("mean limit = {v:.10}"))?,
        MeanLimit::DependsOnInitial { value } => {
            w(out, format!("mean limit depends on theta_hat(0); for this start = {value:.10}"))?
        }
    }
    match variance_limit(&scenario) {
        VarianceLimit::Limit(v) => w(out, format!("variance limit = {v}"))?,
        VarianceLimit::UpperBound(v) => w(out, format!("variance limsup <= {v}"))?,
        VarianceLimit::Infinite => w(out, "variance limit = inf".to_string())?,
    }

    let mc = if paths > 0 {
        let threads = threads.unwrap_or(0);
        let threads = if threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            threads
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(runtime)?;
        let m = pool
            .install(|| scalar_sde_moments(&scenario, sc.mc_dt, &sc.times, paths, sc.mc_seed, sc.theta_floor.value()))
            .map_err(|e| Failure::Config(e.to_string()))?;
        Some(m)
    } else {
        None
    };

    let mut header = "t,F,mean,variance".to_string();
    if mc.is_some() {
        header.push_str(",mc_mean,mc_se_mean,mc_variance,mc_se_variance,z_mean,z_variance");
    }
    w(out, header)?;
    for (i, &t) in sc.times.iter().enumerate() {
        let v = variance_exact(t, &scenario).map_err(runtime)?;
        let m = mean_exact(t, &scenario);
        let mut line = format!(
            "{},{},{},{}",
            output::fmt_f64(t),
            output::fmt_f64(gain_integral(t, &gain)),
            output::fmt_f64(m),
            output::fmt_f64(v)
        );
        if let Some(mc) = &mc {
            let s = mc[i];
            let z = |d: f64, se: f64| if se > 0.0 { d / se } else { 0.0 };
            line.push_str(&format!(
                ",{},{},{},{},{:.3},{:.3}",
                output::fmt_f64(s.mean),
                output::fmt_f64(s.se_mean),
                output::fmt_f64(s.variance),
                output::fmt_f64(s.se_variance),
                z(s.mean - m, s.se_mean),
                z(s.variance - v, s.se_variance),
            ));
        }
        w(out, line)?;
    }
    Ok(EXIT_OK)
}

fn cmd_replay(seed: u64, path: &Path, file: Option<&Path>, out: &mut dyn Write) -> Result<i32, Failure> {
    let mut config = load_config(path)?;
    config.output_stride = 1;
    let setup = config.to_setup()?;
    let record = simulate_trajectory(&setup, seed).map_err(runtime)?;
    let rows: Vec<TrajectoryRow> = record.samples.iter().map(TrajectoryRow::from).collect();
    let dest = file.map_or_else(
        || config.output_dir.join("replay").join(format!("traj_{seed}.csv")),
        Path::to_path_buf,
    );
    output::write_trajectory(&dest, &rows).map_err(runtime)?;
    let last = record.last();
    writeln!(
        out,
        "seed {seed}: {} samples, final ratio {:.6}, final d_B {:.6e} -> {}",
        rows.len(),
        last.ratio,
        last.d_b,
        dest.display()
    )
    .map_err(runtime)?;
    Ok(EXIT_OK)
}
