//! The metric `d_lambda` induced by an action cost, its variational
//! bounds, and the neighborhood and Cauchy diagnostics of the induced
//! uniform structure.

use serde::{Deserialize, Serialize};

use crate::action_core::ActionCost;
use crate::error::{Error, Result};
use crate::state_space::Point;

/// Parameters for evaluating `d_lambda(u, v) = inf { s >= 0 : a(s / lambda, u, v) <= s }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InducedMetricQuery {
    pub lambda: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_growth")]
    pub bracket_growth: f64,
    #[serde(default = "default_doublings")]
    pub max_doublings: usize,
}

fn default_abs_tol() -> f64 {
    1e-10
}
fn default_growth() -> f64 {
    2.0
}
fn default_doublings() -> usize {
    80
}

impl InducedMetricQuery {
    pub fn new(lambda: f64) -> Result<Self> {
        let q = Self {
            lambda,
            abs_tol: default_abs_tol(),
            bracket_growth: default_growth(),
            max_doublings: default_doublings(),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Result<Self> {
        self.abs_tol = abs_tol;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda = {} must be positive", self.lambda)));
        }
        if !(self.abs_tol.is_finite() && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("abs_tol must be positive".into()));
        }
        if !(self.bracket_growth.is_finite() && self.bracket_growth > 1.0) {
            return Err(Error::InvalidArgument("bracket_growth must exceed 1".into()));
        }
        Ok(())
    }
}

/// Bisection on the non-increasing map `s -> a(s / lambda, u, v) - s`.
///
/// For discontinuous costs this finds the crossing of the closure; use
/// [`induced_metric_bounds`] for a certificate.
pub fn induced_metric(a: &ActionCost, q: &InducedMetricQuery, u: &Point, v: &Point) -> Result<f64> {
    q.validate()?;
    if u == v {
        // still type-check the pair
        a.evaluate(1.0, u, v)?;
        return Ok(0.0);
    }
    let lambda = q.lambda;
    let below = |s: f64| -> Result<bool> { Ok(a.evaluate(s / lambda, u, v)? <= s) };

    let mut lo = 0.0;
    let mut hi = lambda;
    let mut doublings = 0;
    while !below(hi)? {
        if doublings >= q.max_doublings || !hi.is_finite() {
            return Err(Error::Unbracketed {
                last_s: hi,
                doublings,
            });
        }
        lo = hi;
        hi *= q.bracket_growth;
        doublings += 1;
    }
    // shrink from below too so small distances resolve quickly
    if lo == 0.0 {
        let mut s = hi;
        for _ in 0..2000 {
            let next = s / q.bracket_growth;
            if next <= 0.0 || next < q.abs_tol {
                break;
            }
            if below(next)? {
                s = next;
            } else {
                lo = next;
                break;
            }
        }
        hi = s;
    }
    while hi - lo > q.abs_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Grid relaxations of the two variational formulas:
/// `max_tau min(a(tau), lambda tau) <= d_lambda <= min_tau max(a(tau), lambda tau)`.
pub fn induced_metric_bounds(
    a: &ActionCost,
    lambda: f64,
    u: &Point,
    v: &Point,
    tau_grid: &[f64],
) -> Result<(f64, f64)> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidArgument("empty tau grid".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
    }
    let mut lower: f64 = 0.0;
    let mut upper = f64::INFINITY;
    for &tau in tau_grid {
        let x = a.evaluate(tau, u, v)?;
        lower = lower.max(x.min(lambda * tau));
        upper = upper.min(x.max(lambda * tau));
    }
    Ok((lower, upper))
}

/// `d_lambda` for `tau * psi(d / tau)` with invertible `psi`: `lambda / psi^{-1}(lambda) * d`.
pub fn closed_form_from_metric(psi_inverse_at_lambda: f64, lambda: f64, d: f64) -> f64 {
    lambda / psi_inverse_at_lambda * d
}

/// Basic entourage `{ (u, v) : a(tau, u, v) < c }`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entourage {
    pub tau: f64,
    pub c: f64,
}

impl Entourage {
    pub fn new(tau: f64, c: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0 && c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("entourage ({tau}, {c}) must be positive")));
        }
        Ok(Self { tau, c })
    }
}

pub fn neighborhood_contains(a: &ActionCost, u: &Point, v: &Point, e: &Entourage) -> Result<bool> {
    Ok(a.evaluate(e.tau, u, v)? < e.c)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CauchyRow {
    pub tau: f64,
    pub max_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CauchyReport {
    pub tail: usize,
    pub tol: f64,
    pub rows: Vec<CauchyRow>,
    pub cauchy: bool,
}

/// For each `tau`, the largest `a(tau, u_m, u_n)` over the last `tail` terms.
pub fn cauchy_diagnostic(
    a: &ActionCost,
    seq: &[Point],
    tau_grid: &[f64],
    tail: usize,
    tol: f64,
) -> Result<CauchyReport> {
    if tail < 2 || seq.len() <= tail {
        return Err(Error::InvalidArgument(format!(
            "need sequence length {} > tail {} >= 2",
            seq.len(),
            tail
        )));
    }
    if tau_grid.is_empty() {
        return Err(Error::InvalidArgument("empty tau grid".into()));
    }
    let last = &seq[seq.len() - tail..];
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let mut max_cost: f64 = 0.0;
        for (m, um) in last.iter().enumerate() {
            for un in &last[m + 1..] {
                max_cost = max_cost.max(a.evaluate(tau, um, un)?);
            }
        }
        rows.push(CauchyRow { tau, max_cost });
    }
    let cauchy = rows.iter().all(|r| r.max_cost < tol);
    Ok(CauchyReport {
        tail,
        tol,
        rows,
        cauchy,
    })
}
