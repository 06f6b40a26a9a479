//! Minimizing movements: `U^n in argmin_V a(tau, U^{n-1}, V) + E(n tau, V)`.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_core::ActionCost;
use crate::error::{Error, Result};
use crate::state_space::{l2, Point};
use crate::trajectory_opt::{armijo_descent, DescentInfo, MinimizerConfig};

type EnergyFn = dyn Fn(f64, &Point) -> f64 + Send + Sync;
type EnergyGrad = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// Driving energy `E(t, v)`.
#[derive(Clone)]
pub struct Energy {
    name: String,
    f: Arc<EnergyFn>,
    grad: Option<Arc<EnergyGrad>>,
    /// Declared lower bound, if known.
    pub lower_bound: Option<f64>,
}

impl fmt::Debug for Energy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Energy")
            .field("name", &self.name)
            .field("grad", &self.grad.is_some())
            .field("lower_bound", &self.lower_bound)
            .finish()
    }
}

impl Energy {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, &Point) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            f: Arc::new(f),
            grad: None,
            lower_bound: None,
        }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_lower_bound(mut self, b: f64) -> Self {
        self.lower_bound = Some(b);
        self
    }

    /// `weight / 2 * |v - center|^2`.
    pub fn quadratic(center: Vec<f64>, weight: f64) -> Self {
        let c2 = center.clone();
        Self::new("quadratic", move |_, v| match v.coords() {
            Some(x) => 0.5 * weight * x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            None => f64::NAN,
        })
        .with_gradient(move |_, x| x.iter().zip(&c2).map(|(a, b)| weight * (a - b)).collect())
        .with_lower_bound(0.0)
    }

    /// `|v - t * velocity|^2 / 2`, a well moving at constant speed.
    pub fn tracking(velocity: Vec<f64>) -> Self {
        let v2 = velocity.clone();
        Self::new("tracking", move |t, v| match v.coords() {
            Some(x) => 0.5 * x.iter().zip(&velocity).map(|(a, c)| (a - t * c).powi(2)).sum::<f64>(),
            None => f64::NAN,
        })
        .with_gradient(move |t, x| x.iter().zip(&v2).map(|(a, c)| a - t * c).collect())
        .with_lower_bound(0.0)
    }

    /// Time-independent energy on a finite space given by its values.
    pub fn table(values: Vec<f64>) -> Self {
        let lb = values.iter().copied().fold(f64::INFINITY, f64::min);
        Self::new("table", move |_, v| match v.index() {
            Some(i) if i < values.len() => values[i],
            _ => f64::NAN,
        })
        .with_lower_bound(lb)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, t: f64, v: &Point) -> Result<f64> {
        let e = (self.f)(t, v);
        if e.is_nan() {
            return Err(Error::SpaceMismatch(format!("energy {} undefined at {v:?}", self.name)));
        }
        Ok(e)
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(t, x))
    }
}

/// Options for the inner minimization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmOptions {
    pub minimizer: MinimizerConfig,
    /// Number of states when the space is finite.
    pub finite_size: Option<usize>,
    /// Objectives below `-unbounded_at` or iterates beyond it in norm are
    /// treated as divergence.
    pub unbounded_at: f64,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self {
            minimizer: MinimizerConfig {
                grad_tol: 1e-10,
                ..MinimizerConfig::default()
            },
            finite_size: None,
            unbounded_at: 1e15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimality {
    /// True argmin, found by enumeration.
    Global,
    /// Local minimizer from descent.
    Local,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MmStepResult {
    pub value: Point,
    pub objective: f64,
    pub optimality: Optimality,
    pub descent: Option<DescentInfo>,
}

fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            y[i] = x[i] + h;
            let fp = f(&y);
            y[i] = x[i] - h;
            let fm = f(&y);
            y[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// One step of the scheme at time `n tau` from `u_prev`.
pub fn mm_step(a: &ActionCost, e: &Energy, tau: f64, n: usize, u_prev: &Point, opt: &MmOptions) -> Result<MmStepResult> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!("tau = {tau} must be positive")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("steps are numbered from 1".into()));
    }
    let t = n as f64 * tau;
    match u_prev {
        Point::Finite(_) => {
            let size = opt
                .finite_size
                .ok_or_else(|| Error::InvalidArgument("finite space needs finite_size".into()))?;
            // start from the previous state so ties keep it
            let mut best = u_prev.clone();
            let mut best_val = e.eval(t, u_prev)?;
            for i in 0..size {
                let v = Point::Finite(i);
                let val = a.evaluate(tau, u_prev, &v)? + e.eval(t, &v)?;
                if val < best_val {
                    best = v;
                    best_val = val;
                }
            }
            Ok(MmStepResult {
                value: best,
                objective: best_val,
                optimality: Optimality::Global,
                descent: None,
            })
        }
        Point::Euclidean(prev) => {
            let objective_at = |x: &[f64]| -> Result<f64> {
                let v = Point::Euclidean(x.to_vec());
                Ok(a.evaluate(tau, u_prev, &v)? + e.eval(t, &v)?)
            };
            // errors inside the descent surface as non-finite values; the
            // extremes seen along the way expose divergence
            let lowest = Cell::new(f64::INFINITY);
            let farthest = Cell::new(0.0f64);
            let objective = |x: &[f64]| {
                let val = objective_at(x).unwrap_or(f64::NAN);
                if val < lowest.get() {
                    lowest.set(val);
                }
                farthest.set(x.iter().fold(farthest.get(), |m, c| m.max(c.abs())));
                val
            };
            let gradient = |x: &[f64]| -> Vec<f64> {
                match e.gradient(t, x) {
                    Some(ge) => {
                        let cost = |y: &[f64]| a.evaluate(tau, u_prev, &Point::Euclidean(y.to_vec())).unwrap_or(f64::NAN);
                        fd_grad(&cost, x).into_iter().zip(ge).map(|(p, q)| p + q).collect()
                    }
                    None => fd_grad(&objective, x),
                }
            };
            // diagonal Newton scaling from a second difference of the objective
            let precondition = |x: &[f64], g: &[f64]| -> Vec<f64> {
                let f0 = objective(x);
                let mut y = x.to_vec();
                (0..x.len())
                    .map(|i| {
                        let h = 1e-4 * (1.0 + x[i].abs());
                        y[i] = x[i] + h;
                        let fp = objective(&y);
                        y[i] = x[i] - h;
                        let fm = objective(&y);
                        y[i] = x[i];
                        let curv = (fp - 2.0 * f0 + fm) / (h * h);
                        if curv.is_finite() && curv > 1e-12 {
                            g[i] / curv
                        } else {
                            g[i]
                        }
                    })
                    .collect()
            };
            let start = objective_at(prev)?;
            let mut x = prev.clone();
            let outcome = armijo_descent(&mut x, &objective, &gradient, &precondition, &opt.minimizer);
            if lowest.get() < -opt.unbounded_at || farthest.get() > opt.unbounded_at {
                return Err(Error::EnergyUnbounded { value: lowest.get() });
            }
            let (fx, info) = outcome?;
            if info.stalled && !info.converged && fx > start {
                return Err(Error::Optimizer(format!("descent increased the objective ({start} to {fx})")));
            }
            Ok(MmStepResult {
                value: Point::Euclidean(x),
                objective: fx,
                optimality: Optimality::Local,
                descent: Some(info),
            })
        }
    }
}

/// Number of steps `N` with `(N - 1) tau < T <= N tau`.
pub fn step_count(tau: f64, horizon: f64) -> usize {
    let mut n = (horizon / tau).ceil().max(1.0) as usize;
    // guard against T / tau landing just above an integer by roundoff
    if n > 1 && (n - 1) as f64 * tau >= horizon * (1.0 - 4.0 * f64::EPSILON) {
        n -= 1;
    }
    n
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MmTrajectory {
    pub tau: f64,
    pub horizon: f64,
    pub values: Vec<Point>,
    /// `E(n tau, U^n)`; the first entry is `E(0, u0)`.
    pub energies: Vec<f64>,
    /// `a(tau, U^{n-1}, U^n)` for `n >= 1`.
    pub step_costs: Vec<f64>,
    pub optimality: Optimality,
}

impl MmTrajectory {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    /// Piecewise-constant interpolant: `U^n` on `((n-1) tau, n tau]`, `U^0` at `t <= 0`.
    pub fn interpolant(&self, t: f64) -> &Point {
        if t <= 0.0 {
            return &self.values[0];
        }
        let mut n = (t / self.tau).ceil() as usize;
        if n > 1 && (n - 1) as f64 * self.tau >= t * (1.0 - 4.0 * f64::EPSILON) {
            n -= 1;
        }
        &self.values[n.clamp(1, self.steps())]
    }

    pub fn total_cost(&self) -> f64 {
        self.step_costs.iter().sum()
    }
}

pub fn mm_solve(a: &ActionCost, e: &Energy, tau: f64, horizon: f64, u0: &Point, opt: &MmOptions) -> Result<MmTrajectory> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!("tau = {tau} must be positive")));
    }
    let steps = step_count(tau, horizon);
    let mut values = vec![u0.clone()];
    let mut energies = vec![e.eval(0.0, u0)?];
    let mut step_costs = Vec::with_capacity(steps);
    let mut optimality = Optimality::Global;
    for n in 1..=steps {
        let prev = &values[n - 1];
        let r = mm_step(a, e, tau, n, prev, opt).map_err(|err| Error::MmStep {
            step: n,
            source: Box::new(err),
        })?;
        if r.optimality == Optimality::Local {
            optimality = Optimality::Local;
        }
        let cost = a.evaluate(tau, prev, &r.value)?;
        energies.push(e.eval(n as f64 * tau, &r.value)?);
        step_costs.push(cost);
        values.push(r.value);
    }
    Ok(MmTrajectory {
        tau,
        horizon,
        values,
        energies,
        step_costs,
        optimality,
    })
}

/// Reference solution for a convergence study.
#[derive(Clone)]
pub enum Reference {
    Analytic(Arc<dyn Fn(f64) -> Point + Send + Sync>),
    /// The run with the smallest step.
    FinestRun,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub tau: f64,
    pub error: f64,
    pub order: Option<f64>,
}

fn point_distance(p: &Point, q: &Point) -> f64 {
    match (p, q) {
        (Point::Euclidean(x), Point::Euclidean(y)) => l2(x, y),
        _ => {
            if p == q {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Sup-norm error of each interpolant against the reference on the grid
/// `n tau_max`, `n = 1..N`, shared by all runs when the steps are nested,
/// with observed orders between consecutive rows.
pub fn mm_convergence_study(
    a: &ActionCost,
    e: &Energy,
    u0: &Point,
    horizon: f64,
    taus: &[f64],
    reference: &Reference,
    opt: &MmOptions,
) -> Result<Vec<StudyRow>> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("empty step list".into()));
    }
    if taus.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("step list must be decreasing".into()));
    }
    let runs: Vec<MmTrajectory> = taus
        .par_iter()
        .map(|&tau| mm_solve(a, e, tau, horizon, u0, opt))
        .collect::<Result<_>>()?;
    let finest = &runs[runs.len() - 1];
    let coarsest = &runs[0];
    let grid: Vec<f64> = (1..=coarsest.steps())
        .map(|n| (n as f64 * coarsest.tau).min(horizon))
        .collect();
    let rows_from = match reference {
        Reference::Analytic(_) => runs.len(),
        Reference::FinestRun => runs.len() - 1,
    };
    let mut rows: Vec<StudyRow> = Vec::with_capacity(rows_from);
    for run in &runs[..rows_from] {
        let mut error: f64 = 0.0;
        for &t in &grid {
            let r = match reference {
                Reference::Analytic(f) => f(t),
                Reference::FinestRun => finest.interpolant(t).clone(),
            };
            error = error.max(point_distance(run.interpolant(t), &r));
        }
        let order = rows.last().map(|prev: &StudyRow| (prev.error / error).ln() / (prev.tau / run.tau).ln());
        rows.push(StudyRow {
            tau: run.tau,
            error,
            order: order.filter(|o| o.is_finite()),
        });
    }
    Ok(rows)
}
