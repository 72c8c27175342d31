//! Experiment orchestration: single runs, sweeps and CSV persistence.
//!
//! `runs.csv` is appended one row per finished run, so an interrupted sweep
//! can be resumed; once every grid point is done the file is rewritten in grid
//! order. Each neural run also stores its final parameters under
//! `params/<run_id>.csv`, which is what `predictions.csv` is rebuilt from.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::solve_fem;
use crate::formulations::{Formulation, FormulationError, Method, Objective, TrainedModel};
use crate::metrics::{compute_errors, test_points, TEST_OVERSAMPLING};
use crate::network::{init_params, Architecture, NetworkParams};
use crate::optimizer::{minimize, LbfgsConfig, OptimStatus};
use crate::precision::Precision;
use crate::problem::{solve_analytic, ProblemSpec};
use crate::sampling::{exponential_rule, random_rule, uniform_rule, Scheme};

pub const RUNS_HEADER: [&str; 14] = [
    "run_id",
    "method",
    "sampler",
    "precision",
    "epsilon",
    "k_train",
    "seed",
    "repetition",
    "e_l2",
    "e_h1",
    "final_loss",
    "iterations",
    "runtime_ms",
    "status",
];

pub const PREDICTIONS_HEADER: [&str; 6] = ["run_id", "x", "u_pred", "du_pred", "u_exact", "du_exact"];

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed runs.csv row: {0}")]
    Record(String),
}

/// A neural formulation or the finite-element baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Solver {
    Nn(Method),
    Fem,
}

impl Solver {
    pub fn tag(self) -> &'static str {
        match self {
            Solver::Nn(m) => m.tag(),
            Solver::Fem => "fem",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("fem") {
            return Ok(Solver::Fem);
        }
        s.parse::<Method>().map(Solver::Nn).map_err(|e| format!("{e}; or fem"))
    }
}

/// Outcome of a run, as written to the `status` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
    Diverged,
    /// The loss overflowed the working precision.
    Overflow,
    /// Setup failed (sampler overflow, singular system, zero pivot, ...).
    Failed,
}

impl RunStatus {
    pub fn tag(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
            RunStatus::LineSearchFailure => "line_search_failure",
            RunStatus::Diverged => "diverged",
            RunStatus::Overflow => "overflow",
            RunStatus::Failed => "failed",
        }
    }

    /// Whether the run blew up numerically.
    pub fn is_blow_up(self) -> bool {
        matches!(self, RunStatus::Diverged | RunStatus::Overflow)
    }
}

impl From<OptimStatus> for RunStatus {
    fn from(s: OptimStatus) -> Self {
        match s {
            OptimStatus::Converged => RunStatus::Converged,
            OptimStatus::MaxIters => RunStatus::MaxIters,
            OptimStatus::LineSearchFailure => RunStatus::LineSearchFailure,
            OptimStatus::Diverged => RunStatus::Diverged,
        }
    }
}

impl FromStr for RunStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "converged" => RunStatus::Converged,
            "max_iters" => RunStatus::MaxIters,
            "line_search_failure" => RunStatus::LineSearchFailure,
            "diverged" => RunStatus::Diverged,
            "overflow" => RunStatus::Overflow,
            "failed" => RunStatus::Failed,
            other => return Err(format!("unknown status `{other}`")),
        })
    }
}

/// `status` column value: the run status, suffixed with `+underflow` when an
/// exponential factor flushed to zero in the working precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatusField {
    pub status: RunStatus,
    pub underflow: bool,
}

impl fmt::Display for StatusField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.status.tag())?;
        if self.underflow {
            f.write_str("+underflow")?;
        }
        Ok(())
    }
}

impl FromStr for StatusField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, underflow) = match s.strip_suffix("+underflow") {
            Some(b) => (b, true),
            None => (s, false),
        };
        Ok(StatusField { status: base.parse()?, underflow })
    }
}

/// One grid point of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: Solver,
    pub sampler: Scheme,
    pub precision: Precision,
    pub epsilon: f64,
    pub k: usize,
    pub base_seed: u64,
    pub repetition: u32,
    /// Overrides the L-BFGS iteration budget.
    pub max_iters: Option<usize>,
    /// Problem template; its `epsilon` is replaced by [`RunConfig::epsilon`].
    pub problem: ProblemSpec,
}

impl RunConfig {
    pub fn new(solver: Solver, epsilon: f64, k: usize) -> Self {
        RunConfig {
            solver,
            sampler: Scheme::Uniform,
            precision: Precision::Single,
            epsilon,
            k,
            base_seed: 0,
            repetition: 0,
            max_iters: None,
            problem: ProblemSpec::benchmark(epsilon),
        }
    }

    pub fn seed(&self) -> u64 {
        self.base_seed + self.repetition as u64
    }

    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec { epsilon: self.epsilon, ..self.problem }
    }

    pub fn run_id(&self) -> String {
        match self.solver {
            Solver::Fem => format!("fem-e{:e}-k{}", self.epsilon, self.k),
            Solver::Nn(m) => format!(
                "{}-{}-{}-e{:e}-k{}-s{}-r{}",
                m,
                self.sampler,
                self.precision,
                self.epsilon,
                self.k,
                self.base_seed,
                self.repetition
            ),
        }
    }

    fn lbfgs(&self) -> LbfgsConfig {
        let mut cfg = LbfgsConfig::for_precision(self.precision);
        if let Some(n) = self.max_iters {
            cfg.max_iterations = n;
        }
        cfg
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub method: String,
    pub sampler: String,
    pub precision: String,
    pub epsilon: f64,
    pub k_train: usize,
    pub seed: u64,
    pub repetition: u32,
    pub e_l2: f64,
    pub e_h1: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    pub status: StatusField,
}

impl RunRecord {
    pub fn to_row(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.method.clone(),
            self.sampler.clone(),
            self.precision.clone(),
            self.epsilon.to_string(),
            self.k_train.to_string(),
            self.seed.to_string(),
            self.repetition.to_string(),
            self.e_l2.to_string(),
            self.e_h1.to_string(),
            self.final_loss.to_string(),
            self.iterations.to_string(),
            self.runtime_ms.to_string(),
            self.status.to_string(),
        ]
    }

    pub fn from_row(row: &csv::StringRecord) -> Result<Self, RunnerError> {
        if row.len() != RUNS_HEADER.len() {
            return Err(RunnerError::Record(format!("expected {} fields, got {}", RUNS_HEADER.len(), row.len())));
        }
        fn parse<T: FromStr>(row: &csv::StringRecord, i: usize) -> Result<T, RunnerError> {
            row[i].parse().map_err(|_| RunnerError::Record(format!("bad {} `{}`", RUNS_HEADER[i], &row[i])))
        }
        Ok(RunRecord {
            run_id: row[0].to_string(),
            method: row[1].to_string(),
            sampler: row[2].to_string(),
            precision: row[3].to_string(),
            epsilon: parse(row, 4)?,
            k_train: parse(row, 5)?,
            seed: parse(row, 6)?,
            repetition: parse(row, 7)?,
            e_l2: parse(row, 8)?,
            e_h1: parse(row, 9)?,
            final_loss: parse(row, 10)?,
            iterations: parse(row, 11)?,
            runtime_ms: parse(row, 12)?,
            status: row[13].parse().map_err(RunnerError::Record)?,
        })
    }
}

/// What a run produced besides its record.
#[derive(Debug, Clone)]
pub enum Fitted {
    Network(TrainedModel),
    Fem(crate::fem::FemSystem),
    None,
}

impl Fitted {
    /// `(u, u')` of the fitted approximation at `x`.
    pub fn predict(&self, x: f64) -> Option<(f64, f64)> {
        let r = match self {
            Fitted::Network(m) => m.reconstruct(x).ok(),
            Fitted::Fem(s) => s.eval(x).ok(),
            Fitted::None => None,
        };
        r.filter(|(u, du)| u.is_finite() && du.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub fitted: Fitted,
}

fn record_for(cfg: &RunConfig) -> RunRecord {
    let (sampler, precision, repetition, seed) = match cfg.solver {
        Solver::Fem => ("-".to_string(), Precision::Double.tag().to_string(), 0, cfg.base_seed),
        Solver::Nn(_) => (cfg.sampler.tag().to_string(), cfg.precision.tag().to_string(), cfg.repetition, cfg.seed()),
    };
    RunRecord {
        run_id: cfg.run_id(),
        method: cfg.solver.tag().to_string(),
        sampler,
        precision,
        epsilon: cfg.epsilon,
        k_train: cfg.k,
        seed,
        repetition,
        e_l2: f64::INFINITY,
        e_h1: f64::INFINITY,
        final_loss: f64::NAN,
        iterations: 0,
        runtime_ms: 0.0,
        status: StatusField { status: RunStatus::Failed, underflow: false },
    }
}

fn run_fem(cfg: &RunConfig, mut record: RunRecord) -> RunOutcome {
    let spec = cfg.spec();
    let Ok(sol) = solve_analytic(&spec) else {
        return RunOutcome { record, fitted: Fitted::None };
    };
    let start = Instant::now();
    let fitted = solve_fem(&spec, cfg.k);
    record.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    match fitted {
        Ok(sys) => {
            let report = compute_errors(|x| sys.eval(x), &sol, cfg.k);
            record.e_l2 = report.e_l2;
            record.e_h1 = report.e_h1;
            record.final_loss = 0.0;
            record.iterations = 1;
            record.status.status = RunStatus::Converged;
            RunOutcome { record, fitted: Fitted::Fem(sys) }
        }
        Err(e) => {
            log::warn!("{}: {e}", record.run_id);
            RunOutcome { record, fitted: Fitted::None }
        }
    }
}

fn run_network(cfg: &RunConfig, method: Method, mut record: RunRecord) -> RunOutcome {
    let fail = |record: RunRecord, why: &dyn fmt::Display| {
        log::warn!("{}: {why}", record.run_id);
        RunOutcome { record, fitted: Fitted::None }
    };
    let spec = cfg.spec();
    let sol = match solve_analytic(&spec) {
        Ok(s) => s,
        Err(e) => return fail(record, &e),
    };
    let form = match Formulation::new(method, spec) {
        Ok(f) => f,
        Err(e) => return fail(record, &e),
    };
    let seed = cfg.seed();
    let rule = match cfg.sampler {
        Scheme::Uniform => uniform_rule(cfg.k, form.domain_end),
        Scheme::Random => random_rule(cfg.k, form.domain_end, seed),
        Scheme::Exponential => exponential_rule(cfg.k, cfg.k, &spec, seed),
    };
    let rule = match rule {
        Ok(r) => r,
        Err(e) => return fail(record, &e),
    };
    let arch = Architecture::standard();
    let init = init_params(&arch, seed, cfg.precision);
    let model = |params: NetworkParams| TrainedModel { formulation: form, arch: arch.clone(), params };

    let start = Instant::now();
    let mut objective = match Objective::new(&form, &arch, &rule, cfg.precision) {
        Ok(o) => o,
        Err(e) => {
            record.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            let status = match e {
                FormulationError::Overflow { .. } => RunStatus::Overflow,
                FormulationError::SamplerMismatch(_) => RunStatus::Failed,
                _ => RunStatus::Diverged,
            };
            record.status.status = status;
            log::info!("{}: {e}", record.run_id);
            let m = model(init);
            fill_errors(&mut record, &m, &sol, cfg.k);
            return RunOutcome { record, fitted: Fitted::Network(m) };
        }
    };
    let mut underflow = false;
    let mut last_error: Option<FormulationError> = None;
    let result = minimize(
        |theta| match objective.loss_grad(theta) {
            Ok((loss, grad)) => {
                underflow |= loss.underflow;
                Some((loss.total, grad))
            }
            Err(e) => {
                last_error = Some(e);
                None
            }
        },
        init.as_slice().to_vec(),
        &cfg.lbfgs(),
    );
    record.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut status = RunStatus::from(result.status);
    if status == RunStatus::Diverged && matches!(last_error, Some(FormulationError::Overflow { .. })) {
        status = RunStatus::Overflow;
    }
    record.status = StatusField { status, underflow };
    record.iterations = result.iterations;
    record.final_loss = result.final_loss;
    let params = NetworkParams::from_vec(&arch, result.final_params, cfg.precision).unwrap_or(init);
    let m = model(params);
    fill_errors(&mut record, &m, &sol, cfg.k);
    RunOutcome { record, fitted: Fitted::Network(m) }
}

fn fill_errors(record: &mut RunRecord, model: &TrainedModel, sol: &crate::problem::AnalyticSolution, k: usize) {
    let report = compute_errors(|x| model.reconstruct(x), sol, k);
    record.e_l2 = report.e_l2;
    record.e_h1 = report.e_h1;
}

/// Trains (or assembles) one grid point and evaluates its errors. Failures
/// are reported through the record's status, never as a panic or error.
pub fn run_single(cfg: &RunConfig) -> RunOutcome {
    let record = record_for(cfg);
    if cfg.k == 0 {
        return RunOutcome { record, fitted: Fitted::None };
    }
    match cfg.solver {
        Solver::Fem => run_fem(cfg, record),
        Solver::Nn(m) => run_network(cfg, m, record),
    }
}

/// Prediction rows of a fitted run on the `10 K` metric test points.
pub fn prediction_rows(outcome: &RunOutcome, sol: &crate::problem::AnalyticSolution) -> Vec<[f64; 5]> {
    test_points(TEST_OVERSAMPLING * outcome.record.k_train)
        .into_iter()
        .map(|x| {
            let (u, du) = outcome.fitted.predict(x).unwrap_or((f64::NAN, f64::NAN));
            let (ue, due) = sol.eval(x).unwrap_or((f64::NAN, f64::NAN));
            [x, u, du, ue, due]
        })
        .collect()
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub epsilon_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub methods: Vec<Solver>,
    pub samplers: Vec<Scheme>,
    pub precisions: Vec<Precision>,
    pub repetitions: u32,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub max_iters: Option<usize>,
    /// Worker threads; `None` uses all cores.
    pub threads: Option<usize>,
    pub problem: ProblemSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilon_grid: log_space(5e-3, 10.0, 20),
            k_grid: vec![10, 100, 1000, 10_000],
            methods: vec![
                Solver::Nn(Method::V),
                Solver::Nn(Method::Vz),
                Solver::Nn(Method::W),
                Solver::Nn(Method::Wz),
                Solver::Nn(Method::RWz),
                Solver::Fem,
            ],
            samplers: vec![Scheme::Uniform],
            precisions: vec![Precision::Single],
            repetitions: 10,
            base_seed: 0,
            output_dir: PathBuf::from("results"),
            max_iters: None,
            threads: None,
            problem: ProblemSpec::benchmark(1.0),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), RunnerError> {
        let err = |m: &str| Err(RunnerError::Config(m.to_string()));
        if self.epsilon_grid.is_empty() || self.epsilon_grid.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return err("epsilon grid must be nonempty and positive");
        }
        if self.k_grid.is_empty() || self.k_grid.contains(&0) {
            return err("K grid must be nonempty with K >= 1");
        }
        if self.methods.is_empty() || self.samplers.is_empty() || self.precisions.is_empty() {
            return err("method, sampler and precision sets must be nonempty");
        }
        if self.repetitions == 0 {
            return err("repetitions must be >= 1");
        }
        Ok(())
    }

    /// Every run of the sweep in grid order. FEM runs once per `(ε, K)`; the
    /// exponential sampler only pairs with `wz`.
    pub fn grid(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &solver in &self.methods {
            for &k in &self.k_grid {
                for &epsilon in &self.epsilon_grid {
                    let base = RunConfig {
                        solver,
                        sampler: Scheme::Uniform,
                        precision: Precision::Double,
                        epsilon,
                        k,
                        base_seed: self.base_seed,
                        repetition: 0,
                        max_iters: self.max_iters,
                        problem: self.problem,
                    };
                    match solver {
                        Solver::Fem => out.push(base),
                        Solver::Nn(m) => {
                            for &sampler in &self.samplers {
                                if sampler == Scheme::Exponential && m != Method::Wz {
                                    continue;
                                }
                                for &precision in &self.precisions {
                                    for repetition in 0..self.repetitions {
                                        out.push(RunConfig { sampler, precision, repetition, ..base.clone() });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Reads all rows of a `runs.csv`.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>, RunnerError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RUNS_HEADER.iter().copied()) {
        return Err(RunnerError::Record(format!("unexpected header {header:?}")));
    }
    reader.records().map(|r| RunRecord::from_row(&r?)).collect()
}

fn write_runs(path: &Path, records: &[RunRecord]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(RUNS_HEADER)?;
        for r in records {
            w.write_record(r.to_row())?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn params_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join("params").join(format!("{run_id}.csv"))
}

/// Result of [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepSummary {
    /// All rows of the sweep in grid order (including resumed ones).
    pub records: Vec<RunRecord>,
    /// Runs executed by this invocation.
    pub executed: usize,
    pub runs_csv: PathBuf,
    pub predictions_csv: PathBuf,
}

/// Runs every grid point not already present in `<output_dir>/runs.csv`.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepSummary, RunnerError> {
    cfg.validate()?;
    fs::create_dir_all(cfg.output_dir.join("params"))?;
    let runs_csv = cfg.output_dir.join("runs.csv");
    let existing = if runs_csv.exists() { read_runs(&runs_csv)? } else { Vec::new() };
    let done: HashSet<String> = existing.iter().map(|r| r.run_id.clone()).collect();
    let grid = cfg.grid();
    let todo: Vec<&RunConfig> = grid.iter().filter(|c| !done.contains(&c.run_id())).collect();

    let file = OpenOptions::new().create(true).append(true).open(&runs_csv)?;
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if existing.is_empty() {
        writer.write_record(RUNS_HEADER)?;
        writer.flush()?;
    }

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| RunnerError::Config(e.to_string()))?
    };
    let (tx, rx) = mpsc::channel::<RunOutcome>();
    let dir = cfg.output_dir.clone();
    let mut fresh = Vec::with_capacity(todo.len());
    std::thread::scope(|scope| -> Result<(), RunnerError> {
        scope.spawn(move || {
            pool.install(|| {
                todo.par_iter().for_each_with(tx, |tx, c| {
                    let _ = tx.send(run_single(c));
                });
            });
        });
        for outcome in rx {
            if let Fitted::Network(m) = &outcome.fitted {
                let f = File::create(params_path(&dir, &outcome.record.run_id))?;
                m.params.write_csv(&m.arch, BufWriter::new(f)).map_err(|e| RunnerError::Record(e.to_string()))?;
            }
            writer.write_record(outcome.record.to_row())?;
            writer.flush()?;
            log::info!("{} e_h1={} status={}", outcome.record.run_id, outcome.record.e_h1, outcome.record.status);
            fresh.push(outcome.record);
        }
        Ok(())
    })?;
    drop(writer);

    let executed = fresh.len();
    let mut by_id: BTreeMap<String, RunRecord> = existing.into_iter().map(|r| (r.run_id.clone(), r)).collect();
    by_id.extend(fresh.into_iter().map(|r| (r.run_id.clone(), r)));
    let records: Vec<RunRecord> = grid.iter().filter_map(|c| by_id.get(&c.run_id()).cloned()).collect();
    if records.len() == grid.len() {
        write_runs(&runs_csv, &records)?;
    }
    let predictions_csv = cfg.output_dir.join("predictions.csv");
    write_predictions(cfg, &grid, &records, &predictions_csv)?;
    Ok(SweepSummary { records, executed, runs_csv, predictions_csv })
}

/// (method, sampler, precision, ε, K)
type GroupKey = (String, String, String, String, usize);

/// Writes prediction traces of the best repetition (minimum `e_h1`) of each
/// `(method, sampler, precision, ε, K)` group.
fn write_predictions(
    cfg: &SweepConfig,
    grid: &[RunConfig],
    records: &[RunRecord],
    path: &Path,
) -> Result<(), RunnerError> {
    let configs: HashMap<String, &RunConfig> = grid.iter().map(|c| (c.run_id(), c)).collect();
    let mut best: BTreeMap<GroupKey, (&RunRecord, &RunConfig)> = BTreeMap::new();
    for rec in records {
        let Some(&rc) = configs.get(&rec.run_id) else { continue };
        if !rec.e_h1.is_finite() {
            continue;
        }
        let key = (rec.method.clone(), rec.sampler.clone(), rec.precision.clone(), format!("{:e}", rec.epsilon), rec.k_train);
        match best.get(&key) {
            Some((b, _)) if b.e_h1 <= rec.e_h1 => {}
            _ => {
                best.insert(key, (rec, rc));
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PREDICTIONS_HEADER)?;
    let arch = Architecture::standard();
    for (rec, rc) in best.values() {
        let spec = rc.spec();
        let Ok(sol) = solve_analytic(&spec) else { continue };
        let fitted = match rc.solver {
            Solver::Fem => match solve_fem(&spec, rc.k) {
                Ok(s) => Fitted::Fem(s),
                Err(_) => continue,
            },
            Solver::Nn(m) => {
                let file = match File::open(params_path(&cfg.output_dir, &rec.run_id)) {
                    Ok(f) => f,
                    Err(_) => continue,
                };
                let Ok(params) = NetworkParams::read_csv(&arch, BufReader::new(file), rc.precision) else { continue };
                let Ok(formulation) = Formulation::new(m, spec) else { continue };
                Fitted::Network(TrainedModel { formulation, arch: arch.clone(), params })
            }
        };
        let outcome = RunOutcome { record: (*rec).clone(), fitted };
        for row in prediction_rows(&outcome, &sol) {
            let mut fields = vec![rec.run_id.clone()];
            fields.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&fields)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_field_round_trip() {
        for s in ["converged", "overflow+underflow", "line_search_failure"] {
            assert_eq!(s.parse::<StatusField>().unwrap().to_string(), s);
        }
        assert!("nope".parse::<StatusField>().is_err());
    }

    #[test]
    fn log_space_endpoints() {
        let g = log_space(5e-3, 10.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 5e-3).abs() < 1e-15 && (g[19] - 10.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_counts() {
        let cfg = SweepConfig {
            methods: vec![Solver::Nn(Method::V), Solver::Fem],
            k_grid: vec![10, 100],
            ..Default::default()
        };
        assert_eq!(cfg.grid().len(), 20 * 2 * (10 + 1));
        let ids: HashSet<String> = cfg.grid().iter().map(RunConfig::run_id).collect();
        assert_eq!(ids.len(), cfg.grid().len());
    }

    #[test]
    fn exponential_sampler_only_for_wz() {
        let cfg = SweepConfig {
            methods: vec![Solver::Nn(Method::V), Solver::Nn(Method::Wz)],
            samplers: vec![Scheme::Uniform, Scheme::Exponential],
            epsilon_grid: vec![1.0],
            k_grid: vec![10],
            repetitions: 1,
            ..Default::default()
        };
        let tags: Vec<String> = cfg.grid().iter().map(RunConfig::run_id).collect();
        assert_eq!(tags.len(), 3);
        assert!(!tags.iter().any(|t| t.starts_with("v-e")));
    }

    #[test]
    fn invalid_sweeps() {
        let bad = SweepConfig { repetitions: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SweepConfig { k_grid: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn solver_parsing() {
        assert_eq!("fem".parse::<Solver>().unwrap(), Solver::Fem);
        assert_eq!("RWZ".parse::<Solver>().unwrap(), Solver::Nn(Method::RWz));
        assert!("x".parse::<Solver>().is_err());
    }

    #[test]
    fn fem_run_record() {
        let out = run_single(&RunConfig::new(Solver::Fem, 1.0, 100));
        assert_eq!(out.record.status.status, RunStatus::Converged);
        assert!(out.record.e_l2 <= 5e-4, "{}", out.record.e_l2);
        assert_eq!(out.record.sampler, "-");
    }

    #[test]
    fn sampler_mismatch_fails_cleanly() {
        let mut c = RunConfig::new(Solver::Nn(Method::V), 1.0, 10);
        c.sampler = Scheme::Exponential;
        let out = run_single(&c);
        assert_eq!(out.record.status.status, RunStatus::Failed);
    }
}
