//! CSV persistence. Floats are written with 17 significant digits so every
//! value parses back to the identical `f64`.
//!
//! Layout under the output directory:
//!
//! ```text
//! trajectories/traj_<seed>.csv   t,theta_hat,ratio,u,d_B,Delta,C_theta,fid_true,fid_filter
//! summary.csv                    per-time ensemble mean / sample variance
//! trajectory_stats.csv           per-trajectory entry/exit times and final values
//! manifest.txt                   config echo, version, seeds, failures
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use spinadapt_core::Sample;
use thiserror::Error;

use crate::ensemble::{EnsembleSummary, TrajectoryStats};
use crate::analysis::ExitTime;

pub const TRAJECTORY_HEADER: [&str; 9] = [
    "t",
    "theta_hat",
    "ratio",
    "u",
    "d_B",
    "Delta",
    "C_theta",
    "fid_true",
    "fid_filter",
];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, fmt_f64)
}

/// One row of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub theta_hat: f64,
    pub ratio: f64,
    pub u: f64,
    pub d_b: f64,
    pub delta: f64,
    pub c_theta: f64,
    pub fid_true: f64,
    pub fid_filter: f64,
}

impl From<&Sample<f64>> for TrajectoryRow {
    fn from(s: &Sample<f64>) -> Self {
        Self {
            t: s.t,
            theta_hat: s.theta_hat,
            ratio: s.ratio,
            u: s.u,
            d_b: s.d_b,
            delta: s.delta,
            c_theta: s.c_theta,
            fid_true: s.fid_true,
            fid_filter: s.fid_filter,
        }
    }
}

impl TrajectoryRow {
    fn fields(&self) -> [f64; 9] {
        [
            self.t,
            self.theta_hat,
            self.ratio,
            self.u,
            self.d_b,
            self.delta,
            self.c_theta,
            self.fid_true,
            self.fid_filter,
        ]
    }

    fn from_fields(v: [f64; 9]) -> Self {
        Self {
            t: v[0],
            theta_hat: v[1],
            ratio: v[2],
            u: v[3],
            d_b: v[4],
            delta: v[5],
            c_theta: v[6],
            fid_true: v[7],
            fid_filter: v[8],
        }
    }
}

pub fn trajectory_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join("trajectories").join(format!("traj_{seed}.csv"))
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<(), OutputError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.fields().map(fmt_f64)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, OutputError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?;
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(OutputError::Format {
            path: path.to_path_buf(),
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let mut v = [0.0; 9];
        for (slot, cell) in v.iter_mut().zip(rec.iter()) {
            *slot = cell.trim().parse().map_err(|e| OutputError::Format {
                path: path.to_path_buf(),
                message: format!("row {}: `{cell}`: {e}", line + 2),
            })?;
        }
        if rec.len() != 9 {
            return Err(OutputError::Format {
                path: path.to_path_buf(),
                message: format!("row {}: expected 9 fields, got {}", line + 2, rec.len()),
            });
        }
        rows.push(TrajectoryRow::from_fields(v));
    }
    Ok(rows)
}

pub fn write_summary(path: &Path, summary: &EnsembleSummary) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string(), "count".to_string()];
    for name in crate::ensemble::SERIES_NAMES {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_var"));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, &t) in summary.times.iter().enumerate() {
        let mut rec = vec![fmt_f64(t), summary.count.to_string()];
        for s in summary.series() {
            rec.push(fmt_f64(s.mean[i]));
            rec.push(fmt_f64(s.variance[i]));
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trajectory_stats(path: &Path, stats: &[TrajectoryStats]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "seed",
        "first_entry",
        "last_exit",
        "final_d_B",
        "converged",
        "final_ratio",
        "last_negative_Delta",
    ])
    .map_err(csv_err(path))?;
    for s in stats {
        let exit = match s.last_exit {
            ExitTime::At(t) => fmt_f64(t),
            ExitTime::NeverInside => "never-inside".to_string(),
        };
        w.write_record([
            s.seed.to_string(),
            fmt_opt(s.first_entry),
            exit,
            fmt_f64(s.final_d_b),
            s.converged.to_string(),
            fmt_f64(s.final_ratio),
            fmt_opt(s.last_negative_delta),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}
