//! Experiment runner behind the `actionspace` binary.
//!
//! Every subcommand reads one JSON config, writes its CSV table(s) and a
//! `summary.json` into the output directory, and maps failures to exit
//! codes: 2 for configuration problems, 3 for numerical failures.

use std::fs;
use std::path::{Path, PathBuf};

use actionspace::action_core::{check_axioms_with, check_axioms_exhaustive, AxiomCheckOptions, AxiomReport};
use actionspace::curves::{
    action_on_partition, density_profile_and_consistency, estimate_action, Partition, SampledCurve,
};
use actionspace::induced_metric::{induced_metric, induced_metric_bounds, InducedMetricQuery};
use actionspace::mm_solver::{mm_convergence_study, mm_solve, MmOptions, Reference};
use actionspace::schema::{CostSpec, EnergySpec};
use actionspace::state_space::lerp;
use actionspace::trajectory_opt::{dyadic_geodesic, geodesic_action_gap, GeodesicBudget, MidpointSearch, MinimizerConfig};
use actionspace::{LimitSchedule, Point};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] actionspace::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use actionspace::Error as E;
        match self {
            CliError::ReadConfig { .. } | CliError::Config(_) => EXIT_CONFIG,
            CliError::Write { .. } | CliError::Csv(_) => EXIT_IO,
            CliError::Core(e) => match e {
                E::DimensionMismatch { .. }
                | E::SpaceMismatch(_)
                | E::InvalidMetric(_)
                | E::InvalidArgument(_)
                | E::Domain(_)
                | E::Json(_) => EXIT_CONFIG,
                _ => EXIT_NUMERIC,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "actionspace", version, about = "Experiments with action costs on metric-like spaces")]
pub struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "ASK_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Io {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,

    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the cost axioms.
    CheckAxioms(Io),
    /// Induced metrics `d_lambda` between point pairs.
    Metric(Io),
    /// Refinement estimate of the action of a curve.
    Action(Io),
    /// Action density profile and its consistency with the action.
    Density(Io),
    /// Dyadic geodesic between two points.
    Geodesic {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        depth: Option<usize>,
    },
    /// Minimizing-movement time stepping.
    Mm(Io),
    /// Convergence study of minimizing movements over several steps.
    Study(Io),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckAxioms(_) => "check-axioms",
            Command::Metric(_) => "metric",
            Command::Action(_) => "action",
            Command::Density(_) => "density",
            Command::Geodesic { .. } => "geodesic",
            Command::Mm(_) => "mm",
            Command::Study(_) => "study",
        }
    }

    pub fn io(&self) -> &Io {
        match self {
            Command::CheckAxioms(io)
            | Command::Metric(io)
            | Command::Action(io)
            | Command::Density(io)
            | Command::Mm(io)
            | Command::Study(io) => io,
            Command::Geodesic { io, .. } => io,
        }
    }
}

/// Header plus rows of preformatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &'static str, header: &[&str]) -> Self {
        Self {
            file,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(dir.join(self.file))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|source| CliError::Write {
            path: dir.join(self.file),
            source,
        })?;
        Ok(())
    }
}

/// Shortest round-trip decimal, switching to exponent form for very large
/// or very small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let m = x.abs();
    if m == 0.0 || (1e-4..1e15).contains(&m) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

struct Outcome {
    result: Value,
    tables: Vec<Table>,
}

/// Runs the parsed command and returns the process exit code. A
/// `summary.json` is written whenever the output directory is usable.
pub fn execute(cli: &Cli) -> i32 {
    let io = cli.command.io();
    let outcome = configure_threads(cli.threads).and_then(|_| dispatch(&cli.command));
    let (code, summary) = match &outcome {
        Ok(o) => (
            EXIT_OK,
            json!({"subcommand": cli.command.name(), "status": "ok", "exit_code": EXIT_OK, "result": o.result}),
        ),
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            (
                code,
                json!({"subcommand": cli.command.name(), "status": "error", "exit_code": code, "error": e.to_string()}),
            )
        }
    };
    match write_outputs(&io.out, &summary, outcome.as_ref().map(|o| o.tables.as_slice()).unwrap_or(&[])) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if code == EXIT_OK {
                EXIT_IO
            } else {
                code
            }
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Config("--threads must be positive".into()));
    }
    // A second build in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn write_outputs(dir: &Path, summary: &Value, tables: &[Table]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    for t in tables {
        t.write(dir)?;
    }
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|source| CliError::Write { path, source })
}

fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::ReadConfig {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    let path = &cmd.io().config;
    match cmd {
        Command::CheckAxioms(_) => run_check_axioms(&load(path)?),
        Command::Metric(_) => run_metric(&load(path)?),
        Command::Action(_) => run_action(&load(path)?),
        Command::Density(_) => run_density(&load(path)?),
        Command::Geodesic { tau, eta, depth, .. } => {
            let mut c: GeodesicConfig = load(path)?;
            c.tau = tau.unwrap_or(c.tau);
            c.eta = eta.unwrap_or(c.eta);
            c.depth = depth.unwrap_or(c.depth);
            run_geodesic(&c)
        }
        Command::Mm(_) => run_mm(&load(path)?),
        Command::Study(_) => run_study(&load(path)?),
    }
}

fn default_samples() -> usize {
    10_000
}

fn default_tol() -> f64 {
    1e-9
}

fn default_tau_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxiomsConfig {
    pub cost: CostSpec,
    /// Points to sample from; finite spaces default to every state.
    #[serde(default)]
    pub corpus: Option<Vec<Point>>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tau_range: Option<(f64, f64)>,
    /// Time grid for the exhaustive check on finite spaces.
    #[serde(default = "default_tau_grid")]
    pub tau_grid: Vec<f64>,
}

fn run_check_axioms(c: &AxiomsConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    let (mode, report): (&str, AxiomReport) = match c.cost.cardinality()? {
        Some(n) => {
            let pts = c.corpus.clone().unwrap_or_else(|| (0..n).map(Point::finite).collect());
            ("exhaustive", check_axioms_exhaustive(&a, &pts, &c.tau_grid, c.tol)?)
        }
        None => {
            let corpus = c
                .corpus
                .as_ref()
                .ok_or_else(|| CliError::Config("Euclidean costs need a `corpus`".into()))?;
            let mut opts = AxiomCheckOptions {
                n_samples: c.samples,
                tol: c.tol,
                seed: c.seed,
                ..Default::default()
            };
            if let Some(r) = c.tau_range {
                opts.tau_range = r;
            }
            ("sampled", check_axioms_with(&a, corpus, &opts)?)
        }
    };
    let mut t = Table::new("axioms.csv", &["axiom", "worst_violation", "pass", "witness_lhs", "witness_rhs"]);
    for r in &report.results {
        let (lhs, rhs) = r
            .witness
            .as_ref()
            .map(|w| (fmt_f64(w.lhs), fmt_f64(w.rhs)))
            .unwrap_or_default();
        let axiom = serde_json::to_value(r.axiom).expect("axiom serializes");
        t.rows.push(vec![
            axiom.as_str().unwrap_or_default().to_string(),
            fmt_f64(r.worst_violation),
            r.pass.to_string(),
            lhs,
            rhs,
        ]);
    }
    Ok(Outcome {
        result: json!({"mode": mode, "all_pass": report.all_pass(), "report": report.to_json()}),
        tables: vec![t],
    })
}

fn default_bounds_grid() -> Vec<f64> {
    (0..=80).map(|k| 10f64.powf(-4.0 + 0.1 * k as f64)).collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub cost: CostSpec,
    pub points: Vec<Point>,
    pub lambdas: Vec<f64>,
    /// Time grid for the variational bounds.
    #[serde(default = "default_bounds_grid")]
    pub tau_grid: Vec<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
}

fn run_metric(c: &MetricConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    if c.points.len() < 2 {
        return Err(CliError::Config("`points` needs at least two entries".into()));
    }
    let mut jobs = Vec::new();
    for i in 0..c.points.len() {
        for j in i + 1..c.points.len() {
            for &lambda in &c.lambdas {
                jobs.push((i, j, lambda));
            }
        }
    }
    let rows: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|&(i, j, lambda)| -> Result<Vec<String>> {
            let mut q = InducedMetricQuery::new(lambda)?;
            if let Some(tol) = c.abs_tol {
                q = q.with_abs_tol(tol)?;
            }
            let (u, v) = (&c.points[i], &c.points[j]);
            let d = induced_metric(&a, &q, u, v)?;
            let (lo, hi) = induced_metric_bounds(&a, lambda, u, v, &c.tau_grid)?;
            let closed = match c.cost.closed_form_factor(lambda) {
                Some((m, k)) => fmt_f64(k * m.distance(u, v)?),
                None => String::new(),
            };
            Ok(vec![
                i.to_string(),
                j.to_string(),
                fmt_f64(lambda),
                fmt_f64(d),
                fmt_f64(lo),
                fmt_f64(hi),
                closed,
            ])
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(
        "metric.csv",
        &["u_id", "v_id", "lambda", "d_lambda", "lower", "upper", "closed_form"],
    );
    t.rows = rows;
    Ok(Outcome {
        result: json!({"pairs": jobs.len() / c.lambdas.len().max(1), "rows": t.rows.len()}),
        tables: vec![t],
    })
}

/// How a sampled curve is evaluated between its samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Straight segments between samples (Euclidean only).
    #[default]
    Linear,
    /// Hold the last sample; suits finite spaces.
    Step,
    /// Only the samples themselves are available.
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl CurveSpec {
    pub fn build(&self) -> Result<SampledCurve> {
        let curve = SampledCurve::from_samples(self.times.clone(), self.points.clone())?;
        let (ts, ps) = (self.times.clone(), self.points.clone());
        let locate = move |t: f64| ts.partition_point(|s| *s <= t).clamp(1, ts.len() - 1) - 1;
        Ok(match self.interpolation {
            Interpolation::None => curve,
            Interpolation::Step => curve.with_evaluator(move |t| ps[locate(t)].clone()),
            Interpolation::Linear => {
                if self.points.iter().any(Point::is_finite_space) {
                    return Err(CliError::Config("linear interpolation needs Euclidean points".into()));
                }
                let ts = self.times.clone();
                curve.with_evaluator(move |t| {
                    let k = locate(t);
                    let s = ((t - ts[k]) / (ts[k + 1] - ts[k])).clamp(0.0, 1.0);
                    let (x, y) = (ps[k].coords().unwrap_or(&[]), ps[k + 1].coords().unwrap_or(&[]));
                    Point::Euclidean(lerp(x, y, s))
                })
            }
        })
    }
}

fn default_depth() -> usize {
    12
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionConfig {
    pub cost: CostSpec,
    pub curve: CurveSpec,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
}

fn run_action(c: &ActionConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    let u = c.curve.build()?;
    let est = estimate_action(&a, &u, c.max_depth, c.rel_tol)?;
    let mut t = Table::new("action.csv", &["depth", "partition_size", "action_value"]);
    for s in &est.history {
        t.rows
            .push(vec![s.depth.to_string(), s.partition_size.to_string(), fmt_f64(s.value)]);
    }
    Ok(Outcome {
        result: json!({"value": est.value, "converged": est.converged, "depth_reached": est.depth_reached}),
        tables: vec![t],
    })
}

fn default_grid_n() -> usize {
    200
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub cost: CostSpec,
    pub curve: CurveSpec,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default)]
    pub schedule: LimitSchedule,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
}

fn run_density(c: &DensityConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    let u = c.curve.build()?;
    let r = density_profile_and_consistency(&a, &u, c.grid_n, &c.schedule, c.max_depth, c.rel_tol)?;
    let mut t = Table::new("density.csv", &["t", "density", "converged"]);
    for ((time, v), ok) in r.profile.times.iter().zip(&r.profile.values).zip(&r.profile.converged) {
        t.rows.push(vec![fmt_f64(*time), fmt_f64(*v), ok.to_string()]);
    }
    Ok(Outcome {
        result: json!({
            "integral": r.integral,
            "action": r.action.value,
            "action_converged": r.action.converged,
            "gap": r.gap,
            "unconverged_points": r.profile.failed(),
        }),
        tables: vec![t],
    })
}

fn one() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    1e-3
}

fn default_geodesic_depth() -> usize {
    6
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicConfig {
    pub cost: CostSpec,
    pub u0: Point,
    pub u1: Point,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_geodesic_depth")]
    pub depth: usize,
    #[serde(default)]
    pub search: MidpointSearch,
}

fn state_columns(p: &Point) -> Vec<String> {
    match p {
        Point::Euclidean(x) => (0..x.len()).map(|k| format!("x{k}")).collect(),
        Point::Finite(_) => vec!["state".into()],
    }
}

fn state_cells(p: &Point) -> Vec<String> {
    match p {
        Point::Euclidean(x) => x.iter().map(|v| fmt_f64(*v)).collect(),
        Point::Finite(i) => vec![i.to_string()],
    }
}

fn run_geodesic(c: &GeodesicConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    let mut search = c.search;
    if search.finite_size.is_none() {
        search.finite_size = c.cost.cardinality()?;
    }
    let budget = GeodesicBudget::new(c.eta, c.depth)?;
    let g = dyadic_geodesic(&a, c.tau, &c.u0, &c.u1, &budget, &search)?;
    let nodes = Partition::new(g.curve.times().to_vec())?;
    let var_on_grid = action_on_partition(&a, &g.curve, &nodes)?;
    let gap = geodesic_action_gap(&a, c.tau, &c.u0, &c.u1, &g.curve)?;

    let mut header = vec!["t".to_string()];
    header.extend(state_columns(&c.u0));
    header.push("level".into());
    let mut t = Table {
        file: "geodesic.csv",
        header,
        rows: Vec::new(),
    };
    for ((time, p), level) in g.curve.times().iter().zip(g.curve.points()).zip(&g.levels) {
        let mut row = vec![fmt_f64(*time)];
        row.extend(state_cells(p));
        row.push(level.to_string());
        t.rows.push(row);
    }
    Ok(Outcome {
        result: json!({"cost": g.cost, "var_on_grid": var_on_grid, "gap": gap, "level_sums": g.level_sums}),
        tables: vec![t],
    })
}

fn default_mm_minimizer() -> MinimizerConfig {
    MmOptions::default().minimizer
}

fn default_unbounded_at() -> f64 {
    MmOptions::default().unbounded_at
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmConfig {
    pub cost: CostSpec,
    pub energy: EnergySpec,
    pub tau: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub u0: Point,
    #[serde(default = "default_mm_minimizer")]
    pub minimizer: MinimizerConfig,
    #[serde(default = "default_unbounded_at")]
    pub unbounded_at: f64,
}

fn mm_options(cost: &CostSpec, energy: &EnergySpec, minimizer: MinimizerConfig, unbounded_at: f64) -> Result<MmOptions> {
    let finite_size = match (cost.cardinality()?, energy) {
        (Some(n), _) => Some(n),
        (None, EnergySpec::Table { values }) => Some(values.len()),
        (None, _) => None,
    };
    Ok(MmOptions {
        minimizer,
        finite_size,
        unbounded_at,
    })
}

fn run_mm(c: &MmConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    let e = c.energy.build()?;
    let opt = mm_options(&c.cost, &c.energy, c.minimizer, c.unbounded_at)?;
    let traj = mm_solve(&a, &e, c.tau, c.horizon, &c.u0, &opt)?;

    let mut header = vec!["n".to_string(), "t".to_string()];
    header.extend(state_columns(&c.u0));
    header.extend(["energy".to_string(), "step_cost".to_string()]);
    let mut t = Table {
        file: "mm.csv",
        header,
        rows: Vec::new(),
    };
    for (n, (v, energy)) in traj.values.iter().zip(&traj.energies).enumerate() {
        let mut row = vec![n.to_string(), fmt_f64(n as f64 * c.tau)];
        row.extend(state_cells(v));
        row.push(fmt_f64(*energy));
        row.push(if n == 0 { String::new() } else { fmt_f64(traj.step_costs[n - 1]) });
        t.rows.push(row);
    }
    Ok(Outcome {
        result: json!({
            "steps": traj.steps(),
            "total_cost": traj.total_cost(),
            "final_energy": traj.energies[traj.steps()],
            "optimality": traj.optimality,
        }),
        tables: vec![t],
    })
}

/// Reference solution for `study`.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Compare against the run with the smallest step.
    #[default]
    FinestRun,
    /// `u0 * exp(-rate * t)` for Euclidean `u0`.
    Exponential { rate: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub cost: CostSpec,
    pub energy: EnergySpec,
    pub taus: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub u0: Point,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default = "default_mm_minimizer")]
    pub minimizer: MinimizerConfig,
    #[serde(default = "default_unbounded_at")]
    pub unbounded_at: f64,
}

fn run_study(c: &StudyConfig) -> Result<Outcome> {
    let a = c.cost.build()?;
    let e = c.energy.build()?;
    let opt = mm_options(&c.cost, &c.energy, c.minimizer, c.unbounded_at)?;
    let reference = match &c.reference {
        ReferenceSpec::FinestRun => Reference::FinestRun,
        ReferenceSpec::Exponential { rate } => {
            let x0 = c.u0.require_coords()?.to_vec();
            let rate = *rate;
            Reference::Analytic(std::sync::Arc::new(move |t: f64| {
                Point::Euclidean(x0.iter().map(|x| x * (-rate * t).exp()).collect())
            }))
        }
    };
    let rows = mm_convergence_study(&a, &e, &c.u0, c.horizon, &c.taus, &reference, &opt)?;
    let mut t = Table::new("study.csv", &["tau", "error", "order"]);
    for r in &rows {
        t.rows.push(vec![
            fmt_f64(r.tau),
            fmt_f64(r.error),
            r.order.map(fmt_f64).unwrap_or_default(),
        ]);
    }
    Ok(Outcome {
        result: json!({"reference": c.reference, "rows": rows}),
        tables: vec![t],
    })
}
