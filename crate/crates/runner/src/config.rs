//! Experiment configuration: a flat TOML file with one key per field.
//!
//! Every key is optional; omitted keys take the values of the reference
//! experiment (`N = 5`, target level 0, `(omega, M, eta) = (0.5, 1, 0.9)`,
//! nominal `(1, 25, 1)`, `(K, p) = (20, 0.6)`). See `docs/config-schema.md`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use spinadapt_core::{
    quantum::build_ops, CMatrix, DensityMatrix, GainSchedule, InitialState, QuantumError,
    SystemParams, TrajectorySetup, DEFAULT_THETA_FLOOR,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("field `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

fn field_err(field: &'static str, message: impl fmt::Display) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.to_string(),
    }
}

/// Initial-state specification. In the file it is either a string
/// (`"maximally_mixed"`, `"random_hs"`, `"projector:<k>"`) or an inline table
/// `{ re = [[...], ...], im = [[...], ...] }` giving an explicit matrix
/// (`im` may be omitted).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Named(String),
    Explicit {
        re: Vec<Vec<f64>>,
        #[serde(default)]
        im: Option<Vec<Vec<f64>>>,
    },
}

impl StateSpec {
    fn resolve(&self, field: &'static str, dim: usize) -> Result<InitialState<f64>, ConfigError> {
        match self {
            Self::Named(name) => match name.trim() {
                "maximally_mixed" => Ok(InitialState::MaximallyMixed),
                "random_hs" => Ok(InitialState::RandomHs),
                other => {
                    let k = other
                        .strip_prefix("projector:")
                        .and_then(|k| k.trim().parse::<usize>().ok())
                        .ok_or_else(|| {
                            field_err(
                                field,
                                format!(
                                    "unknown state `{other}` (expected maximally_mixed, \
                                     random_hs, projector:<k> or an explicit matrix)"
                                ),
                            )
                        })?;
                    if k >= dim {
                        return Err(field_err(field, format!("projector index {k} >= N = {dim}")));
                    }
                    Ok(InitialState::Projector(k))
                }
            },
            Self::Explicit { re, im } => {
                let rows = re.len();
                let shape_ok = |m: &Vec<Vec<f64>>| m.len() == dim && m.iter().all(|r| r.len() == dim);
                if !shape_ok(re) || im.as_ref().is_some_and(|m| !shape_ok(m)) {
                    return Err(field_err(
                        field,
                        format!("explicit matrix must be {dim}x{dim}, got {rows} rows"),
                    ));
                }
                let m = CMatrix::from_fn(dim, dim, |i, j| {
                    let imag = im.as_ref().map_or(0.0, |m| m[i][j]);
                    spinadapt_core::Complex::new(re[i][j], imag)
                });
                let rho = DensityMatrix::new(m)
                    .map_err(|e: QuantumError| field_err(field, format!("invalid density matrix: {e}")))?;
                Ok(InitialState::Explicit(rho))
            }
        }
    }
}

/// `theta_floor`: a non-negative number or the string `"none"`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum FloorSpec {
    Value(f64),
    Keyword(NoFloor),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoFloor {
    None,
}

impl FloorSpec {
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Value(v) => Some(*v),
            Self::Keyword(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of levels `N = 2J + 1`.
    pub n: usize,
    /// Target level `n_bar`.
    pub n_bar: usize,
    pub omega: f64,
    /// Measurement strength `M`.
    pub m: f64,
    pub eta: f64,
    pub omega_hat: f64,
    pub m_hat0: f64,
    pub eta_hat: f64,
    /// Gain schedule `f(t) = (K t + 1)^(-p)`.
    pub k: f64,
    pub p: f64,
    pub gain_fb: f64,
    pub feedforward: bool,
    pub dt: f64,
    pub horizon: f64,
    pub realizations: usize,
    pub base_seed: u64,
    pub output_stride: usize,
    pub initial_true_state: StateSpec,
    pub initial_filter_state: StateSpec,
    pub theta_floor: FloorSpec,
    /// Worker threads; 0 means one per available CPU.
    pub threads: usize,
    /// `d_B` threshold for final-state convergence.
    pub convergence_tol: f64,
    /// Persist one CSV per trajectory.
    pub write_trajectories: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 5,
            n_bar: 0,
            omega: 0.5,
            m: 1.0,
            eta: 0.9,
            omega_hat: 1.0,
            m_hat0: 25.0,
            eta_hat: 1.0,
            k: 20.0,
            p: 0.6,
            gain_fb: 4.0,
            feedforward: true,
            dt: 0.01,
            horizon: 1000.0,
            realizations: 1000,
            base_seed: 0,
            output_stride: 10,
            initial_true_state: StateSpec::Named("random_hs".into()),
            initial_filter_state: StateSpec::Named("maximally_mixed".into()),
            theta_floor: FloorSpec::Value(DEFAULT_THETA_FLOOR),
            threads: 0,
            convergence_tol: 0.05,
            write_trajectories: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every field and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        if self.n < 2 {
            return Err(field_err("n", format!("must be >= 2, got {}", self.n)));
        }
        if self.n_bar >= self.n {
            return Err(field_err("n_bar", format!("must be < n = {}, got {}", self.n, self.n_bar)));
        }
        SystemParams::new(self.omega, self.m, self.eta)
            .map_err(|e| field_err("omega/m/eta", e))?;
        SystemParams::new(self.omega_hat, self.m_hat0, self.eta_hat)
            .map_err(|e| field_err("omega_hat/m_hat0/eta_hat", e))?;
        GainSchedule::new(self.k, self.p).map_err(|e| field_err("k/p", e))?;
        let positive = |field, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("must be > 0, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("convergence_tol", self.convergence_tol)?;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(field_err("horizon", format!("must be >= 0, got {}", self.horizon)));
        }
        if !(self.gain_fb >= 0.0 && self.gain_fb.is_finite()) {
            return Err(field_err("gain_fb", format!("must be >= 0, got {}", self.gain_fb)));
        }
        if self.realizations < 1 {
            return Err(field_err("realizations", "must be >= 1"));
        }
        if self.output_stride < 1 {
            return Err(field_err("output_stride", "must be >= 1"));
        }
        if let Some(floor) = self.theta_floor.value() {
            if !(floor >= 0.0 && floor.is_finite()) {
                return Err(field_err("theta_floor", format!("must be >= 0 or \"none\", got {floor}")));
            }
        }
        if self.base_seed.checked_add(self.realizations as u64 - 1).is_none() {
            return Err(field_err("base_seed", "base_seed + realizations overflows u64"));
        }
        self.initial_true_state.resolve("initial_true_state", self.n)?;
        self.initial_filter_state.resolve("initial_filter_state", self.n)?;

        let mut warnings = Vec::new();
        if !(self.p > 0.5 && self.p <= 1.0) {
            warnings.push(format!(
                "p = {} is outside (0.5, 1]; convergence of theta_hat is not guaranteed",
                self.p
            ));
        }
        if (self.horizon / self.dt).fract().abs() > 1e-9 {
            warnings.push(format!(
                "horizon / dt = {} is not an integer; the run uses {} steps",
                self.horizon / self.dt,
                (self.horizon / self.dt).round()
            ));
        }
        Ok(warnings)
    }

    /// Validates and builds the per-trajectory setup.
    pub fn to_setup(&self) -> Result<TrajectorySetup<f64>, ConfigError> {
        self.validate()?;
        let ops = build_ops(self.n).map_err(|e| field_err("n", e))?;
        let setup = TrajectorySetup {
            ops,
            target: self.n_bar,
            true_params: SystemParams::new(self.omega, self.m, self.eta)
                .map_err(|e| field_err("omega/m/eta", e))?,
            omega_hat: self.omega_hat,
            coupling_hat0: self.m_hat0,
            eta_hat: self.eta_hat,
            gain: GainSchedule::new(self.k, self.p).map_err(|e| field_err("k/p", e))?,
            gain_fb: self.gain_fb,
            feedforward: self.feedforward,
            dt: self.dt,
            horizon: self.horizon,
            output_stride: self.output_stride,
            initial_true: self.initial_true_state.resolve("initial_true_state", self.n)?,
            initial_filter: self.initial_filter_state.resolve("initial_filter_state", self.n)?,
            theta_floor: self.theta_floor.value(),
        };
        setup.validate().map_err(|e| field_err("setup", e))?;
        Ok(setup)
    }

    /// Seeds `base_seed ..= base_seed + realizations - 1`.
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.base_seed..self.base_seed + self.realizations as u64
    }

    /// Canonical TOML rendering, used for the manifest.
    pub fn to_toml_string(&self) -> String {
        let state = |s: &StateSpec| match s {
            StateSpec::Named(name) => format!("{name:?}"),
            StateSpec::Explicit { re, im } => {
                let rows = |m: &Vec<Vec<f64>>| {
                    let inner: Vec<String> = m
                        .iter()
                        .map(|r| {
                            let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
                            format!("[{}]", cells.join(", "))
                        })
                        .collect();
                    format!("[{}]", inner.join(", "))
                };
                match im {
                    Some(im) => format!("{{ re = {}, im = {} }}", rows(re), rows(im)),
                    None => format!("{{ re = {} }}", rows(re)),
                }
            }
        };
        let floor = match self.theta_floor.value() {
            Some(v) => format!("{v:?}"),
            None => "\"none\"".to_string(),
        };
        format!(
            "n = {}\nn_bar = {}\nomega = {:?}\nm = {:?}\neta = {:?}\nomega_hat = {:?}\n\
             m_hat0 = {:?}\neta_hat = {:?}\nk = {:?}\np = {:?}\ngain_fb = {:?}\n\
             feedforward = {}\ndt = {:?}\nhorizon = {:?}\nrealizations = {}\nbase_seed = {}\n\
             output_stride = {}\ninitial_true_state = {}\ninitial_filter_state = {}\n\
             theta_floor = {}\nthreads = {}\nconvergence_tol = {:?}\nwrite_trajectories = {}\n\
             output_dir = {:?}\n",
            self.n,
            self.n_bar,
            self.omega,
            self.m,
            self.eta,
            self.omega_hat,
            self.m_hat0,
            self.eta_hat,
            self.k,
            self.p,
            self.gain_fb,
            self.feedforward,
            self.dt,
            self.horizon,
            self.realizations,
            self.base_seed,
            self.output_stride,
            state(&self.initial_true_state),
            state(&self.initial_filter_state),
            floor,
            self.threads,
            self.convergence_tol,
            self.write_trajectories,
            self.output_dir.display().to_string(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_experiment() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert!(c.validate().unwrap().is_empty());
        let s = c.to_setup().unwrap();
        assert_eq!(s.ops.dim(), 5);
        assert!((s.true_params.theta() - 0.9f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.theta_hat0(), 5.0);
        assert_eq!(s.steps(), 100_000);
    }

    #[test]
    fn state_specs_parse() {
        let c = ExperimentConfig::from_toml_str(
            "n = 3\ninitial_true_state = \"projector:2\"\n\
             initial_filter_state = { re = [[0.5, 0, 0], [0, 0.5, 0], [0, 0, 0]] }\n",
        )
        .unwrap();
        let s = c.to_setup().unwrap();
        assert_eq!(s.initial_true, InitialState::Projector(2));
        assert!(matches!(s.initial_filter, InitialState::Explicit(_)));
    }

    #[test]
    fn theta_floor_accepts_none() {
        let c = ExperimentConfig::from_toml_str("theta_floor = \"none\"").unwrap();
        assert_eq!(c.theta_floor.value(), None);
        let c = ExperimentConfig::from_toml_str("theta_floor = 0.001").unwrap();
        assert_eq!(c.theta_floor.value(), Some(0.001));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_rejected_with_the_key_name() {
        let e = ExperimentConfig::from_toml_str("bogus = 1").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml_str("dt = \"x\"").unwrap_err().to_string();
        assert!(e.contains("dt"), "{e}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        for (text, field) in [
            ("dt = 0.0", "dt"),
            ("horizon = -1.0", "horizon"),
            ("realizations = 0", "realizations"),
            ("n_bar = 5", "n_bar"),
            ("eta = 1.5", "omega/m/eta"),
            ("k = 0.0", "k/p"),
            ("initial_true_state = \"projector:9\"", "initial_true_state"),
            ("initial_filter_state = \"pure\"", "initial_filter_state"),
            ("initial_filter_state = { re = [[1.0]] }", "initial_filter_state"),
        ] {
            let c = ExperimentConfig::from_toml_str(text).unwrap();
            match c.validate() {
                Err(ConfigError::Field { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn warns_outside_the_convergence_range_of_p() {
        for p in [0.0, 0.5, 1.2] {
            let c = ExperimentConfig {
                p,
                ..Default::default()
            };
            assert_eq!(c.validate().unwrap().len(), 1, "p = {p}");
        }
        let c = ExperimentConfig {
            p: 1.0,
            ..Default::default()
        };
        assert!(c.validate().unwrap().is_empty());
    }

    #[test]
    fn toml_rendering_round_trips() {
        let c = ExperimentConfig {
            theta_floor: FloorSpec::Keyword(NoFloor::None),
            initial_true_state: StateSpec::Explicit {
                re: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
                im: Some(vec![vec![0.0, 0.0], vec![0.0, 0.0]]),
            },
            n: 2,
            ..Default::default()
        };
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }
}
