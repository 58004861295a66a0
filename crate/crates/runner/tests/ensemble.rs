use std::fs;

use spinadapt_runner::config::{ExperimentConfig, StateSpec};
use spinadapt_runner::output::{read_trajectory, trajectory_path, TrajectoryRow};
use spinadapt_runner::{recompute_summary, run_ensemble};
use spinadapt_core::{quantum::build_ops, simulate_trajectory};

fn small(realizations: usize) -> ExperimentConfig {
    ExperimentConfig {
        horizon: 5.0,
        realizations,
        base_seed: 100,
        output_stride: 5,
        ..Default::default()
    }
}

#[test]
fn single_trajectory_ensemble_equals_its_record() {
    let config = ExperimentConfig {
        gain_fb: 0.0,
        feedforward: false,
        initial_true_state: StateSpec::Named("projector:1".into()),
        initial_filter_state: StateSpec::Named("projector:1".into()),
        ..small(1)
    };
    let summary = run_ensemble(&config, 1, None).unwrap();
    let record = simulate_trajectory(&config.to_setup().unwrap(), config.base_seed).unwrap();
    assert_eq!(summary.count, 1);
    assert_eq!(summary.times, record.samples.iter().map(|s| s.t).collect::<Vec<_>>());
    assert_eq!(summary.ratio.mean, record.samples.iter().map(|s| s.ratio).collect::<Vec<_>>());
    assert_eq!(summary.d_b.mean, record.samples.iter().map(|s| s.d_b).collect::<Vec<_>>());
    assert_eq!(summary.delta.mean, record.samples.iter().map(|s| s.delta).collect::<Vec<_>>());
    assert_eq!(summary.u.mean, vec![0.0; record.samples.len()]);
    assert!(summary.series().iter().all(|s| s.variance.iter().all(|&v| v == 0.0)));
}

#[test]
fn summary_is_identical_across_runs_and_thread_counts() {
    let config = small(40);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let sa = run_ensemble(&config, 1, Some(a.path())).unwrap();
    let sb = run_ensemble(&config, 8, Some(b.path())).unwrap();
    let sc = run_ensemble(&config, 1, Some(c.path())).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(sa, sc);
    for file in ["summary.csv", "trajectory_stats.csv", "manifest.txt"] {
        let x = fs::read(a.path().join(file)).unwrap();
        assert_eq!(x, fs::read(b.path().join(file)).unwrap(), "{file}");
        assert_eq!(x, fs::read(c.path().join(file)).unwrap(), "{file}");
    }
    for seed in config.seeds() {
        assert_eq!(
            fs::read(trajectory_path(a.path(), seed)).unwrap(),
            fs::read(trajectory_path(b.path(), seed)).unwrap()
        );
    }
}

#[test]
fn statistics_cover_every_realization_and_variances_are_nonnegative() {
    let summary = run_ensemble(&small(12), 2, None).unwrap();
    assert_eq!(summary.count, 12);
    assert!(summary.failures.is_empty());
    assert_eq!(summary.trajectories.len(), 12);
    assert_eq!(
        summary.trajectories.iter().map(|t| t.seed).collect::<Vec<_>>(),
        (100..112).collect::<Vec<_>>()
    );
    assert!(summary.series().iter().all(|s| s.variance.iter().all(|&v| v >= 0.0)));
    // steps = 500, stride 5, plus the initial sample.
    assert_eq!(summary.times.len(), 101);
}

#[test]
fn persisted_files_reproduce_records_and_summary_exactly() {
    let config = small(10);
    let dir = tempfile::tempdir().unwrap();
    let summary = run_ensemble(&config, 4, Some(dir.path())).unwrap();

    let setup = config.to_setup().unwrap();
    let seed = config.base_seed + 3;
    let record = simulate_trajectory(&setup, seed).unwrap();
    let rows: Vec<TrajectoryRow> = record.samples.iter().map(TrajectoryRow::from).collect();
    let back = read_trajectory(&trajectory_path(dir.path(), seed)).unwrap();
    assert_eq!(back.len(), rows.len());
    for (x, y) in back.iter().zip(&rows) {
        assert_eq!(format!("{x:?}"), format!("{y:?}"));
    }

    let again = recompute_summary(dir.path(), &config).unwrap();
    assert_eq!(again, summary);
    let other = tempfile::tempdir().unwrap();
    spinadapt_runner::ensemble::write_outputs(other.path(), &config, &again).unwrap();
    assert_eq!(
        fs::read(dir.path().join("summary.csv")).unwrap(),
        fs::read(other.path().join("summary.csv")).unwrap()
    );
}

#[test]
fn trajectory_header_and_layout() {
    let config = small(2);
    let dir = tempfile::tempdir().unwrap();
    run_ensemble(&config, 1, Some(dir.path())).unwrap();
    let text = fs::read_to_string(dir.path().join("trajectories/traj_100.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,theta_hat,ratio,u,d_B,Delta,C_theta,fid_true,fid_filter"
    );
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("seeds 100..=101"));
    assert!(manifest.contains("realizations = 2"));
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn trajectory_files_can_be_disabled() {
    let config = ExperimentConfig {
        write_trajectories: false,
        ..small(2)
    };
    let dir = tempfile::tempdir().unwrap();
    run_ensemble(&config, 1, Some(dir.path())).unwrap();
    assert!(!dir.path().join("trajectories").exists());
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn missing_files_show_up_as_failures_on_recompute() {
    let config = small(3);
    let dir = tempfile::tempdir().unwrap();
    run_ensemble(&config, 1, Some(dir.path())).unwrap();
    fs::remove_file(trajectory_path(dir.path(), 101)).unwrap();
    let s = recompute_summary(dir.path(), &config).unwrap();
    assert_eq!(s.count, 2);
    assert_eq!(s.failures.len(), 1);
    assert_eq!(s.failures[0].seed, 101);
}

#[test]
fn stats_flag_converged_records() {
    let config = ExperimentConfig {
        initial_true_state: StateSpec::Named("projector:0".into()),
        initial_filter_state: StateSpec::Named("projector:0".into()),
        gain_fb: 0.0,
        feedforward: false,
        ..small(2)
    };
    let s = run_ensemble(&config, 1, None).unwrap();
    assert_eq!(s.converged_fraction(), 1.0);
    let ops = build_ops::<f64>(5).unwrap();
    let record = simulate_trajectory(&config.to_setup().unwrap(), 100).unwrap();
    assert!(spinadapt_runner::check_convergence(&record, 0, 1e-12, &ops).unwrap());
}
