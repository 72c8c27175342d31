use std::fs;

use condiff::runner::{read_runs, Solver, PREDICTIONS_HEADER, RUNS_HEADER};
use condiff::{run_sweep, Method, Scheme, SweepConfig};

fn small(dir: &std::path::Path) -> SweepConfig {
    SweepConfig {
        epsilon_grid: vec![1.0],
        k_grid: vec![10, 20],
        methods: vec![Solver::Nn(Method::V), Solver::Fem],
        samplers: vec![Scheme::Uniform],
        repetitions: 3,
        max_iters: Some(100),
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_sweep(&small(dir.path())).unwrap();
    assert_eq!(summary.records.len(), 2 * (3 + 1));
    assert_eq!(summary.executed, 8);

    let text = fs::read_to_string(&summary.runs_csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), RUNS_HEADER.join(","));
    assert_eq!(read_runs(&summary.runs_csv).unwrap(), summary.records);

    let preds = fs::read_to_string(&summary.predictions_csv).unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next().unwrap(), PREDICTIONS_HEADER.join(","));
    // one best run per (method, K): 100 + 200 test points for V, same for FEM
    assert_eq!(lines.count(), 2 * (100 + 200));
}

#[test]
fn predictions_come_from_best_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_sweep(&small(dir.path())).unwrap();
    let best = summary
        .records
        .iter()
        .filter(|r| r.method == "v" && r.k_train == 10)
        .min_by(|a, b| a.e_h1.total_cmp(&b.e_h1))
        .unwrap();
    let preds = fs::read_to_string(&summary.predictions_csv).unwrap();
    let ids: std::collections::BTreeSet<&str> = preds.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(ids.contains(best.run_id.as_str()));
    assert_eq!(ids.iter().filter(|i| i.starts_with("v-") && i.contains("-k10-")).count(), 1);
}

#[test]
fn resume_skips_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.k_grid = vec![10];
    let first = run_sweep(&cfg).unwrap();
    assert_eq!(first.executed, 4);

    cfg.k_grid = vec![10, 20];
    let second = run_sweep(&cfg).unwrap();
    assert_eq!(second.executed, 4);
    assert_eq!(second.records.len(), 8);
    for r in &first.records {
        assert!(second.records.contains(r), "{} changed on resume", r.run_id);
    }

    let third = run_sweep(&cfg).unwrap();
    assert_eq!(third.executed, 0);
    assert_eq!(third.records, second.records);
}

#[test]
fn rejects_foreign_runs_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("runs.csv"), "a,b\n1,2\n").unwrap();
    assert!(run_sweep(&small(dir.path())).is_err());
}

#[test]
fn empty_grid_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.epsilon_grid.clear();
    assert!(run_sweep(&cfg).is_err());
}
