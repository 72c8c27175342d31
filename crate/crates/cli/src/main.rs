use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use condiff::fem::solve_fem;
use condiff::runner::{log_space, prediction_rows, run_single, RunRecord, Solver, PREDICTIONS_HEADER, RUNS_HEADER};
use condiff::sampling::normalizing_constant;
use condiff::{run_sweep, solve_analytic, Precision, ProblemSpec, RunConfig, Scheme, SweepConfig};

#[derive(Parser, Debug)]
#[command(name = "condiff", version, about = "Neural and finite-element solvers for 1D convection-diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train or solve a single configuration and print its record.
    Solve(SolveArgs),
    /// Run a grid of configurations into runs.csv and predictions.csv.
    Sweep(SweepArgs),
    /// Print the closed-form solution on a uniform grid.
    Analytic(AnalyticArgs),
    /// Run quick numerical self-checks.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// v, vz, w, wz, rwz or fem
    #[arg(long)]
    method: Option<String>,
    /// u (uniform), r (random) or e (exponential)
    #[arg(long)]
    sampler: Option<String>,
    /// f16, f32 or f64
    #[arg(long)]
    precision: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Training points (FEM: nodes).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rep: Option<u32>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Directory for runs.csv and predictions.csv of this run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated methods.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated samplers.
    #[arg(long)]
    sampler: Option<String>,
    /// Comma-separated precisions.
    #[arg(long)]
    precision: Option<String>,
    /// Comma-separated ε values (default: 20 log-spaced values in [5e-3, 10]).
    #[arg(long)]
    epsilon: Option<String>,
    /// Comma-separated K values.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyticArgs {
    #[arg(long)]
    epsilon: f64,
    /// Number of grid points including both endpoints.
    #[arg(long, default_value_t = 101)]
    points: usize,
}

#[derive(Args, Debug)]
struct CheckArgs {}

/// Flat `key = value` settings with `#` comments.
fn read_config(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), n + 1);
        };
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

struct Settings(HashMap<String, String>);

impl Settings {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let map = match path {
            Some(p) => read_config(p)?,
            None => HashMap::new(),
        };
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            bail!("unknown config key `{k}`");
        }
        Ok(Settings(map))
    }

    fn pick<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow::anyhow!("config `{key}`: {e}")))
            .transpose()
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} `{t}`: {e}")))
        .collect()
}

fn write_csv_header(w: &mut csv::Writer<impl Write>, header: &[&str]) -> Result<()> {
    w.write_record(header)?;
    Ok(())
}

fn print_record(r: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout());
    write_csv_header(&mut w, &RUNS_HEADER)?;
    w.write_record(r.to_row())?;
    w.flush()?;
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let s = Settings::load(
        args.config.as_deref(),
        &["method", "sampler", "precision", "epsilon", "k", "seed", "rep", "max_iters", "out"],
    )?;
    let solver: Solver = s.pick(args.method.as_deref().map(str::to_string), "method")?.unwrap_or("v".into()).parse().map_err(anyhow::Error::msg)?;
    let sampler: Scheme = s.pick(args.sampler, "sampler")?.unwrap_or("u".into()).parse()?;
    let precision: Precision = s.pick(args.precision, "precision")?.unwrap_or("f32".into()).parse()?;
    let epsilon = s.pick(args.epsilon, "epsilon")?.context("--epsilon is required")?;
    let k = s.pick(args.k, "k")?.unwrap_or(100);
    let mut cfg = RunConfig::new(solver, epsilon, k);
    cfg.sampler = sampler;
    cfg.precision = precision;
    cfg.base_seed = s.pick(args.seed, "seed")?.unwrap_or(0);
    cfg.repetition = s.pick(args.rep, "rep")?.unwrap_or(0);
    cfg.max_iters = s.pick(args.max_iters, "max_iters")?;
    cfg.spec().validate()?;

    let outcome = run_single(&cfg);
    print_record(&outcome.record)?;
    if let Some(dir) = s.pick(args.out, "out")? {
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join("runs.csv"))?;
        write_csv_header(&mut w, &RUNS_HEADER)?;
        w.write_record(outcome.record.to_row())?;
        w.flush()?;
        let sol = solve_analytic(&cfg.spec())?;
        let mut w = csv::Writer::from_path(dir.join("predictions.csv"))?;
        write_csv_header(&mut w, &PREDICTIONS_HEADER)?;
        for row in prediction_rows(&outcome, &sol) {
            let mut fields = vec![outcome.record.run_id.clone()];
            fields.extend(row.iter().map(f64::to_string));
            w.write_record(&fields)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let s = Settings::load(
        args.config.as_deref(),
        &["method", "sampler", "precision", "epsilon", "k", "reps", "seed", "max_iters", "threads", "out"],
    )?;
    let mut cfg = SweepConfig::default();
    if let Some(m) = s.pick(args.method, "method")? {
        cfg.methods = m
            .split(',')
            .map(|t| t.trim().parse::<Solver>().map_err(anyhow::Error::msg))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = s.pick(args.sampler, "sampler")? {
        cfg.samplers = parse_list(&v, "sampler")?;
    }
    if let Some(v) = s.pick(args.precision, "precision")? {
        cfg.precisions = parse_list(&v, "precision")?;
    }
    if let Some(v) = s.pick(args.epsilon, "epsilon")? {
        cfg.epsilon_grid = parse_list(&v, "epsilon")?;
    }
    if let Some(v) = s.pick(args.k, "k")? {
        cfg.k_grid = parse_list(&v, "K")?;
    }
    if let Some(r) = s.pick(args.reps, "reps")? {
        cfg.repetitions = r;
    }
    if let Some(seed) = s.pick(args.seed, "seed")? {
        cfg.base_seed = seed;
    }
    cfg.max_iters = s.pick(args.max_iters, "max_iters")?;
    cfg.threads = s.pick(args.threads, "threads")?;
    if let Some(out) = s.pick(args.out, "out")? {
        cfg.output_dir = out;
    }
    let summary = run_sweep(&cfg)?;
    let blown = summary.records.iter().filter(|r| r.status.status.is_blow_up()).count();
    println!(
        "{} runs ({} executed, {} blown up) -> {}, {}",
        summary.records.len(),
        summary.executed,
        blown,
        summary.runs_csv.display(),
        summary.predictions_csv.display()
    );
    Ok(())
}

fn analytic(args: AnalyticArgs) -> Result<()> {
    if args.points < 2 {
        bail!("--points must be >= 2");
    }
    let sol = solve_analytic(&ProblemSpec::benchmark(args.epsilon))?;
    let mut w = csv::Writer::from_writer(io::stdout());
    w.write_record(["x", "u", "du"])?;
    for i in 0..args.points {
        let x = i as f64 / (args.points - 1) as f64;
        let (u, du) = sol.eval(x)?;
        w.write_record([x.to_string(), u.to_string(), du.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn check(_: CheckArgs) -> Result<()> {
    let mut failures = 0;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let mut worst: f64 = 0.0;
    for eps in log_space(5e-3, 10.0, 20) {
        let spec = ProblemSpec::benchmark(eps);
        let sol = solve_analytic(&spec)?;
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let (_, du) = sol.eval(x)?;
            let ddu = sol.second_derivative(x)?;
            let r = (-eps * ddu + spec.drift * du - spec.source).abs();
            let scale = (eps * ddu.abs()).max(spec.drift * du.abs()).max(spec.source.abs());
            worst = worst.max(r / scale);
        }
    }
    report("analytic residual", worst <= 1e-8, format!("max relative residual {worst:.2e}"));

    let sol = solve_analytic(&ProblemSpec::benchmark(1.0))?;
    let errs: Vec<f64> = [11, 101, 1001]
        .iter()
        .map(|&n| {
            let sys = solve_fem(&ProblemSpec::benchmark(1.0), n)?;
            Ok(condiff::compute_errors(|x| sys.eval(x), &sol, n).e_l2)
        })
        .collect::<Result<_>>()?;
    let slope = (errs[2] / errs[0]).log10() / 2.0;
    report("fem l2 rate", (slope + 2.0).abs() <= 0.3, format!("slope {slope:.3}"));

    let spec = ProblemSpec::benchmark(0.25);
    let z = normalizing_constant(&spec)?;
    let n = 1_000_000;
    let rate = -spec.drift / (2.0 * spec.epsilon);
    let quad = (0..n).map(|i| (rate * (i as f64 + 0.5) / n as f64).exp()).sum::<f64>() / n as f64;
    report("normalizing constant", ((quad - z) / z).abs() < 1e-8, format!("{z} vs {quad}"));

    if failures > 0 {
        bail!("{failures} check(s) failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Analytic(a) => analytic(a),
        Command::Check(a) => check(a),
    }
}
