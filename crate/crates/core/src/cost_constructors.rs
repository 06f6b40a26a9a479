//! Combinators that build action costs from metrics and from other costs.
//!
//! Every constructor here preserves the action-cost axioms when its inputs
//! satisfy them: the convex construction `tau * psi(b / tau)`, rescaling in
//! time and value, positive linear combinations, concave compositions, and
//! the supremum of truncated metrics over a finite increasing family.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action_core::{ActionCost, Claims, Growth};
use crate::error::{Error, Result};
use crate::state_space::Metric;

/// Convex gauge `psi: [0, inf) -> [0, inf)` with `psi(0) = 0` and `psi(r) > 0` for `r > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexGauge {
    /// `r^p`, `p >= 1`.
    Power { p: f64 },
    /// `r`.
    Linear,
    /// Convex piecewise-linear interpolant through `knots`, extended past
    /// the last knot with the last slope.
    TableSpline { knots: Vec<(f64, f64)> },
}

impl ConvexGauge {
    pub fn power(p: f64) -> Result<Self> {
        let g = ConvexGauge::Power { p };
        g.validate()?;
        Ok(g)
    }

    /// Certifies convexity of a spline by checking that slopes are
    /// positive and nondecreasing.
    pub fn table_spline(knots: Vec<(f64, f64)>) -> Result<Self> {
        let g = ConvexGauge::TableSpline { knots };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexGauge::Power { p } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return Err(Error::InvalidArgument(format!("power gauge needs p >= 1, got {p}")));
                }
            }
            ConvexGauge::Linear => {}
            ConvexGauge::TableSpline { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidArgument("spline needs at least two knots".into()));
                }
                if knots[0] != (0.0, 0.0) {
                    return Err(Error::InvalidArgument("spline must start at (0, 0)".into()));
                }
                let mut last_slope = 0.0;
                for w in knots.windows(2) {
                    let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                    if !(x1.is_finite() && y1.is_finite()) || x1 <= x0 {
                        return Err(Error::InvalidArgument(
                            "spline knots must be finite with increasing abscissae".into(),
                        ));
                    }
                    let slope = (y1 - y0) / (x1 - x0);
                    if !(slope > 0.0) || slope < last_slope {
                        return Err(Error::InvalidArgument(format!(
                            "spline is not convex and increasing at x = {x0}"
                        )));
                    }
                    last_slope = slope;
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            ConvexGauge::Power { p } => {
                if *p == 2.0 {
                    r * r
                } else if *p == 1.0 {
                    r
                } else {
                    r.powf(*p)
                }
            }
            ConvexGauge::Linear => r,
            ConvexGauge::TableSpline { knots } => {
                let i = knots.partition_point(|&(x, _)| x <= r).clamp(1, knots.len() - 1);
                let ((x0, y0), (x1, y1)) = (knots[i - 1], knots[i]);
                y0 + (y1 - y0) / (x1 - x0) * (r - x0)
            }
        }
    }

    /// `psi^{-1}(y)` for `y >= 0`: analytic for powers, bisection for splines.
    pub fn inverse(&self, y: f64) -> f64 {
        match self {
            ConvexGauge::Power { p } => {
                if *p == 2.0 {
                    y.sqrt()
                } else {
                    y.powf(1.0 / p)
                }
            }
            ConvexGauge::Linear => y,
            ConvexGauge::TableSpline { .. } => {
                if y <= 0.0 {
                    return 0.0;
                }
                let mut hi = 1.0;
                while self.eval(hi) < y {
                    hi *= 2.0;
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.eval(mid) < y {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Recession slope `lim psi(r) / r`; `None` when infinite (superlinear).
    pub fn recession_slope(&self) -> Option<f64> {
        match self {
            ConvexGauge::Power { p } if *p > 1.0 => None,
            ConvexGauge::Power { .. } | ConvexGauge::Linear => Some(1.0),
            ConvexGauge::TableSpline { knots } => {
                let n = knots.len();
                let ((x0, y0), (x1, y1)) = (knots[n - 2], knots[n - 1]);
                Some((y1 - y0) / (x1 - x0))
            }
        }
    }
}

type Combiner = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// Concave `h(tau, a_1, .., a_I)`, nondecreasing in each `a_i`, with
/// `h(tau, 0) = 0` and `h > 0` off zero. These properties are the caller's
/// responsibility.
///
/// Concavity alone does not make the composition an action cost when `h`
/// grows with `tau`: composing with a cost that vanishes on the diagonal
/// forces `tau -> h(tau, a)` to be nonincreasing. The `tau`-free presets
/// are safe; [`ConcaveCombiner::truncation`] is not.
#[derive(Clone)]
pub struct ConcaveCombiner {
    name: String,
    arity: usize,
    f: Arc<Combiner>,
}

impl fmt::Debug for ConcaveCombiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConcaveCombiner")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .finish()
    }
}

impl ConcaveCombiner {
    pub fn new<F>(name: impl Into<String>, arity: usize, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            arity,
            f: Arc::new(f),
        }
    }

    /// `h(tau, a) = sqrt(a)`.
    pub fn sqrt() -> Self {
        Self::new("sqrt", 1, |_, a| a[0].sqrt())
    }

    /// `h(tau, a) = a^q`, `0 < q <= 1`.
    pub fn root(q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!("root exponent {q} must lie in (0, 1]")));
        }
        Ok(Self::new(format!("root({q})"), 1, move |_, a| a[0].powf(q)))
    }

    /// `h(tau, a) = min(a, lambda * tau)`.
    ///
    /// Increasing in `tau` wherever `lambda * tau < a`, so the composed
    /// cost fails the concatenation inequality for `u_1 = u_2`.
    pub fn truncation(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("truncation level {lambda} must be positive")));
        }
        Ok(Self::new(format!("min(a,{lambda}tau)"), 1, move |tau, a| {
            a[0].min(lambda * tau)
        }))
    }

    /// `h(tau, a) = sum_i sqrt(a_i)`.
    pub fn sum_of_roots(arity: usize) -> Self {
        Self::new("sum_sqrt", arity, |_, a| a.iter().map(|x| x.sqrt()).sum())
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply(&self, tau: f64, a: &[f64]) -> f64 {
        (self.f)(tau, a)
    }
}

/// Finite increasing family of metrics indexed by an increasing `lambda` grid.
#[derive(Clone, Debug)]
pub struct MetricFamily {
    entries: Vec<(f64, Metric)>,
}

impl MetricFamily {
    /// Validates that the grid is strictly increasing and that the metrics
    /// are pointwise nondecreasing in `lambda`. Tables are compared entrywise;
    /// Euclidean members must share the exponent `p` and have nondecreasing weights.
    pub fn new(entries: Vec<(f64, Metric)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("empty metric family".into()));
        }
        for w in entries.windows(2) {
            let ((l0, m0), (l1, m1)) = (&w[0], &w[1]);
            if !(l0.is_finite() && *l0 > 0.0 && l1 > l0) {
                return Err(Error::InvalidArgument(format!(
                    "lambda grid must be positive and strictly increasing ({l0}, {l1})"
                )));
            }
            let increasing = match (m0, m1) {
                (
                    Metric::EuclideanNorm { p: p0, weight: w0 },
                    Metric::EuclideanNorm { p: p1, weight: w1 },
                ) => p0 == p1 && w0 <= w1,
                (Metric::WeightedTable(t0), Metric::WeightedTable(t1)) => {
                    t0.len() == t1.len()
                        && (0..t0.len())
                            .all(|i| (0..t0.len()).all(|j| t0.get(i, j) <= t1.get(i, j)))
                }
                _ => false,
            };
            if !increasing {
                return Err(Error::InvalidArgument(format!(
                    "metric family is not pointwise increasing between lambda = {l0} and {l1}"
                )));
            }
        }
        if !(entries[0].0 > 0.0) {
            return Err(Error::InvalidArgument("lambda grid must be positive".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, Metric)] {
        &self.entries
    }
}

/// `a(tau, u, v) = tau * psi(d(u, v) / tau)`.
pub fn from_metric(d: Metric, psi: ConvexGauge) -> Result<ActionCost> {
    psi.validate()?;
    let growth = match psi.recession_slope() {
        Some(_) => Growth::MetricLike,
        None => Growth::Superlinear,
    };
    let claims = Claims {
        symmetric: true,
        continuous: true,
        growth,
    };
    let name = format!("from_metric({psi:?})");
    Ok(ActionCost::new(name, claims, move |tau, u, v| {
        let r = d.distance(u, v)?;
        Ok(tau * psi.eval(r / tau))
    }))
}

/// `a(tau, u, v) = tau * psi(b(tau, u, v) / tau)`. The linear gauge returns `b` itself.
pub fn convex_transform(b: &ActionCost, psi: ConvexGauge) -> Result<ActionCost> {
    psi.validate()?;
    if psi == ConvexGauge::Linear {
        return Ok(b.clone());
    }
    let base = b.claims();
    let growth = match (psi.recession_slope(), base.growth) {
        (None, Growth::Superlinear | Growth::MetricLike) => Growth::Superlinear,
        (Some(_), g) => g,
        (None, Growth::Unknown) => Growth::Unknown,
    };
    let claims = Claims {
        symmetric: base.symmetric,
        continuous: base.continuous,
        growth,
    };
    let name = format!("convex({}, {psi:?})", b.name());
    let b = b.clone();
    Ok(ActionCost::new(name, claims, move |tau, u, v| {
        let x = b.evaluate(tau, u, v)?;
        Ok(tau * psi.eval(x / tau))
    }))
}

/// `a(tau, u, v) = theta * b(tau / lambda, u, v)`.
pub fn rescale(b: &ActionCost, lambda: f64, theta: f64) -> Result<ActionCost> {
    for (label, x) in [("lambda", lambda), ("theta", theta)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidArgument(format!("{label} = {x} must be positive")));
        }
    }
    let name = format!("rescale({}, {lambda}, {theta})", b.name());
    let claims = b.claims();
    let b = b.clone();
    Ok(ActionCost::new(name, claims, move |tau, u, v| {
        Ok(theta * b.evaluate(tau / lambda, u, v)?)
    }))
}

/// `a = sum_i theta_i * a_i` with positive weights.
pub fn linear_combination(terms: Vec<(f64, ActionCost)>) -> Result<ActionCost> {
    if terms.is_empty() {
        return Err(Error::InvalidArgument("empty linear combination".into()));
    }
    if let Some((t, _)) = terms.iter().find(|(t, _)| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::InvalidArgument(format!("weight {t} must be positive")));
    }
    let growths: Vec<Growth> = terms.iter().map(|(_, a)| a.claims().growth).collect();
    let growth = if growths.contains(&Growth::Superlinear) {
        Growth::Superlinear
    } else if growths.iter().all(|g| *g == Growth::MetricLike) {
        Growth::MetricLike
    } else {
        Growth::Unknown
    };
    let claims = Claims {
        symmetric: terms.iter().all(|(_, a)| a.claims().symmetric),
        continuous: terms.iter().all(|(_, a)| a.claims().continuous),
        growth,
    };
    let name = format!(
        "sum[{}]",
        terms
            .iter()
            .map(|(t, a)| format!("{t}*{}", a.name()))
            .collect::<Vec<_>>()
            .join(" + ")
    );
    Ok(ActionCost::new(name, claims, move |tau, u, v| {
        terms
            .iter()
            .map(|(theta, a)| Ok(theta * a.evaluate(tau, u, v)?))
            .sum()
    }))
}

/// `a(tau, u, v) = h(tau, a_1(tau, u, v), .., a_I(tau, u, v))`.
pub fn concave_compose(h: ConcaveCombiner, costs: Vec<ActionCost>) -> Result<ActionCost> {
    if costs.len() != h.arity() {
        return Err(Error::InvalidArgument(format!(
            "combiner {} expects {} costs, got {}",
            h.name(),
            h.arity(),
            costs.len()
        )));
    }
    let claims = Claims {
        symmetric: costs.iter().all(|a| a.claims().symmetric),
        continuous: costs.iter().all(|a| a.claims().continuous),
        growth: Growth::Unknown,
    };
    let name = format!(
        "{}({})",
        h.name(),
        costs.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
    );
    Ok(ActionCost::new(name, claims, move |tau, u, v| {
        let values = costs
            .iter()
            .map(|a| a.evaluate(tau, u, v))
            .collect::<Result<Vec<f64>>>()?;
        Ok(h.apply(tau, &values))
    }))
}

/// `a(tau, u, v) = max_lambda min(d_lambda(u, v), lambda * tau)` over the family grid.
pub fn truncated_metric_sup(fam: MetricFamily) -> ActionCost {
    let claims = Claims {
        symmetric: true,
        continuous: true,
        growth: Growth::MetricLike,
    };
    let name = format!("truncated_sup({} levels)", fam.entries.len());
    ActionCost::new(name, claims, move |tau, u, v| {
        let mut best: f64 = 0.0;
        for (lambda, d) in &fam.entries {
            best = best.max(d.distance(u, v)?.min(lambda * tau));
        }
        Ok(best)
    })
}
