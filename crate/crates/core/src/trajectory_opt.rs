//! Action-integral costs by direct transcription, approximate midpoints,
//! and geodesics built by dyadic midpoint insertion.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_core::{ActionCost, Claims, Growth};
use crate::curves::{action_on_partition, Partition, SampledCurve};
use crate::error::{Error, Result};
use crate::state_space::{l2, lerp, Point};

type ScalarFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Lagrangian `R(theta, zeta) >= 0`, convex and even in the velocity `zeta`,
/// with `R(theta, 0) = 0`.
#[derive(Clone)]
pub struct Integrand {
    name: String,
    f: Arc<ScalarFn>,
    grad_theta: Option<Arc<GradFn>>,
    grad_zeta: Option<Arc<GradFn>>,
}

impl fmt::Debug for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Integrand")
            .field("name", &self.name)
            .field("grad_theta", &self.grad_theta.is_some())
            .field("grad_zeta", &self.grad_zeta.is_some())
            .finish()
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
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

impl Integrand {
    /// Integrand without analytic gradients; central differences are used.
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            f: Arc::new(f),
            grad_theta: None,
            grad_zeta: None,
        }
    }

    pub fn with_gradients<G, H>(mut self, grad_theta: G, grad_zeta: H) -> Self
    where
        G: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        H: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad_theta = Some(Arc::new(grad_theta));
        self.grad_zeta = Some(Arc::new(grad_zeta));
        self
    }

    /// `|zeta|^2 / 2`.
    pub fn quadratic() -> Self {
        Self::new("quadratic", |_, z| 0.5 * z.iter().map(|x| x * x).sum::<f64>())
            .with_gradients(|t, _| vec![0.0; t.len()], |_, z| z.to_vec())
    }

    /// `(1 + theta_1^2) |zeta|^2 / 2`.
    pub fn weighted_quadratic() -> Self {
        Self::new("weighted_quadratic", |t, z| {
            (1.0 + t[0] * t[0]) * 0.5 * z.iter().map(|x| x * x).sum::<f64>()
        })
        .with_gradients(
            |t, z| {
                let mut g = vec![0.0; t.len()];
                g[0] = t[0] * z.iter().map(|x| x * x).sum::<f64>();
                g
            },
            |t, z| z.iter().map(|x| (1.0 + t[0] * t[0]) * x).collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, theta: &[f64], zeta: &[f64]) -> f64 {
        (self.f)(theta, zeta)
    }

    pub fn grad_theta(&self, theta: &[f64], zeta: &[f64]) -> Vec<f64> {
        match &self.grad_theta {
            Some(g) => g(theta, zeta),
            None => central_diff(|t| self.eval(t, zeta), theta),
        }
    }

    pub fn grad_zeta(&self, theta: &[f64], zeta: &[f64]) -> Vec<f64> {
        match &self.grad_zeta {
            Some(g) => g(theta, zeta),
            None => central_diff(|z| self.eval(theta, z), zeta),
        }
    }
}

/// Settings for the Armijo gradient descent used by the transcription and
/// the Euclidean minimizing-movement steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizerConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 10_000,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

impl MinimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidArgument("grad_tol and armijo_c must be positive, armijo_c < 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidArgument("backtrack factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Termination data of a descent run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DescentInfo {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub stalled: bool,
}

/// Maps `(x, g)` to `P^{-1} g`.
pub(crate) type Preconditioner<'a> = dyn Fn(&[f64], &[f64]) -> Vec<f64> + 'a;

/// Armijo descent along `-P^{-1} g`, where `precondition(x, g)` applies `P^{-1}` at `x`.
pub(crate) fn armijo_descent(
    x: &mut [f64],
    objective: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> Vec<f64>,
    precondition: &Preconditioner<'_>,
    cfg: &MinimizerConfig,
) -> Result<(f64, DescentInfo)> {
    cfg.validate()?;
    let mut fx = objective(x);
    if !fx.is_finite() {
        return Err(Error::NonFinite(format!("objective at the initial point is {fx}")));
    }
    let mut info = DescentInfo {
        iterations: 0,
        grad_norm: 0.0,
        converged: false,
        stalled: false,
    };
    let mut trial = vec![0.0; x.len()];
    for it in 0..=cfg.max_iters {
        let g = gradient(x);
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        info.iterations = it;
        info.grad_norm = gn;
        if !gn.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        if gn <= cfg.grad_tol {
            info.converged = true;
            break;
        }
        if it == cfg.max_iters {
            break;
        }
        let mut d: Vec<f64> = precondition(x, &g).into_iter().map(|v| -v).collect();
        let mut slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            for i in 0..x.len() {
                trial[i] = x[i] + alpha * d[i];
            }
            let ft = objective(&trial);
            if ft.is_finite() && ft <= fx + cfg.armijo_c * alpha * slope {
                x.copy_from_slice(&trial);
                fx = ft;
                accepted = true;
                break;
            }
            alpha *= cfg.backtrack;
        }
        if !accepted {
            info.stalled = true;
            break;
        }
    }
    Ok((fx, info))
}

/// Discrete path `Theta^0 = u, .., Theta^M = v` on `[0, tau]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transcription {
    pub segments: usize,
    pub tau: f64,
    pub knots: Vec<Vec<f64>>,
    pub descent: DescentInfo,
}

impl Transcription {
    pub fn into_curve(self) -> Result<SampledCurve> {
        let m = self.segments;
        let times = (0..=m)
            .map(|i| if i == m { self.tau } else { self.tau * i as f64 / m as f64 })
            .collect();
        SampledCurve::from_samples(times, self.knots.into_iter().map(Point::Euclidean).collect())
    }
}

/// Solves `(1/dt) tridiag(-1, 2, -1) y = g` per coordinate over interior knots.
fn laplacian_solve(g: &[f64], dim: usize, dt: f64) -> Vec<f64> {
    let n = g.len() / dim;
    let mut out = vec![0.0; g.len()];
    let mut c = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..dim {
        // Thomas algorithm with diagonal 2, off-diagonals -1
        let mut denom = 2.0;
        c[0] = -1.0 / denom;
        rhs[0] = g[k] * dt / denom;
        for i in 1..n {
            denom = 2.0 + c[i - 1];
            c[i] = -1.0 / denom;
            rhs[i] = (g[i * dim + k] * dt + rhs[i - 1]) / denom;
        }
        out[(n - 1) * dim + k] = rhs[n - 1];
        for i in (0..n - 1).rev() {
            out[i * dim + k] = rhs[i] - c[i] * out[(i + 1) * dim + k];
        }
    }
    out
}

/// Minimizes the midpoint-rule transcription
/// `sum_i dt R((Theta^i + Theta^{i+1}) / 2, (Theta^{i+1} - Theta^i) / dt)`
/// over interior knots, starting from the straight line.
///
/// Descent directions are preconditioned by the discrete Laplacian, which
/// is the exact Hessian for the quadratic integrand.
///
/// The value is not a one-sided estimate of the continuous cost when the
/// integrand depends on `theta`; see `refinement_direction_follows_weight_curvature`.
pub fn action_integral_cost(
    r: &Integrand,
    tau: f64,
    u: &Point,
    v: &Point,
    segments: usize,
    cfg: &MinimizerConfig,
) -> Result<(f64, Transcription)> {
    if segments == 0 {
        return Err(Error::InvalidArgument("transcription needs at least one segment".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!("tau = {tau} must be positive")));
    }
    let (uc, vc) = (u.require_coords()?, v.require_coords()?);
    if uc.len() != vc.len() {
        return Err(Error::DimensionMismatch {
            left: uc.len(),
            right: vc.len(),
        });
    }
    let dim = uc.len();
    let m = segments;
    let dt = tau / m as f64;
    let knot = |x: &[f64], i: usize| -> Vec<f64> {
        if i == 0 {
            uc.to_vec()
        } else if i == m {
            vc.to_vec()
        } else {
            x[(i - 1) * dim..i * dim].to_vec()
        }
    };
    let segment = |a: &[f64], b: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mid: Vec<f64> = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
        let vel: Vec<f64> = a.iter().zip(b).map(|(p, q)| (q - p) / dt).collect();
        (mid, vel)
    };
    let objective = |x: &[f64]| -> f64 {
        (0..m)
            .map(|i| {
                let (mid, vel) = segment(&knot(x, i), &knot(x, i + 1));
                dt * r.eval(&mid, &vel)
            })
            .sum()
    };
    let gradient = |x: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for i in 0..m {
            let (mid, vel) = segment(&knot(x, i), &knot(x, i + 1));
            let gt = r.grad_theta(&mid, &vel);
            let gz = r.grad_zeta(&mid, &vel);
            // d/dTheta^i and d/dTheta^{i+1} of dt R(mid, vel)
            if i >= 1 {
                for k in 0..dim {
                    g[(i - 1) * dim + k] += 0.5 * dt * gt[k] - gz[k];
                }
            }
            if i + 1 < m {
                for k in 0..dim {
                    g[i * dim + k] += 0.5 * dt * gt[k] + gz[k];
                }
            }
        }
        g
    };
    let mut x: Vec<f64> = (1..m).flat_map(|i| lerp(uc, vc, i as f64 / m as f64)).collect();
    let (value, descent) = if x.is_empty() {
        let v = objective(&x);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("transcription objective {v}")));
        }
        (
            v,
            DescentInfo {
                iterations: 0,
                grad_norm: 0.0,
                converged: true,
                stalled: false,
            },
        )
    } else {
        let precondition = |_: &[f64], g: &[f64]| laplacian_solve(g, dim, dt);
        armijo_descent(&mut x, &objective, &gradient, &precondition, cfg)?
    };
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::NonFinite(format!("transcription objective {value}")));
    }
    let knots = (0..=m).map(|i| knot(&x, i)).collect();
    Ok((
        value,
        Transcription {
            segments: m,
            tau,
            knots,
            descent,
        },
    ))
}

/// The transcription with `segments` pieces as an action cost.
pub fn wrap_as_action_cost(r: Integrand, segments: usize, cfg: MinimizerConfig) -> Result<ActionCost> {
    if segments == 0 {
        return Err(Error::InvalidArgument("transcription needs at least one segment".into()));
    }
    cfg.validate()?;
    let claims = Claims {
        symmetric: true,
        continuous: true,
        growth: Growth::Superlinear,
    };
    let name = format!("action_integral({}, M={segments})", r.name());
    Ok(ActionCost::new(name, claims, move |tau, u, v| {
        Ok(action_integral_cost(&r, tau, u, v, segments, &cfg)?.0)
    }))
}

/// Budget for the midpoint search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MidpointSearch {
    pub max_evals: usize,
    /// Initial compass step; defaults to half the Euclidean distance of the endpoints.
    pub initial_step: Option<f64>,
    pub min_step: f64,
    /// Number of states when searching a finite space.
    pub finite_size: Option<usize>,
}

impl Default for MidpointSearch {
    fn default() -> Self {
        Self {
            max_evals: 200,
            initial_step: None,
            min_step: 1e-12,
            finite_size: None,
        }
    }
}

/// Finds `w` with `a(rho/2, u, w) + a(rho/2, w, v) <= a(rho, u, v) + eps`.
///
/// Finite spaces are searched exhaustively; ties go to the smaller larger
/// leg, then to the lower index. Euclidean spaces use compass search from
/// the chord midpoint.
pub fn find_midpoint(a: &ActionCost, rho: f64, u: &Point, v: &Point, eps: f64, search: &MidpointSearch) -> Result<Point> {
    if !(rho.is_finite() && rho > 0.0 && eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} and eps = {eps} must be positive")));
    }
    let full = a.evaluate(rho, u, v)?;
    if u == v {
        return Ok(u.clone());
    }
    let target = full + eps;
    let legs = |w: &Point| -> Result<(f64, f64)> {
        Ok((a.evaluate(0.5 * rho, u, w)?, a.evaluate(0.5 * rho, w, v)?))
    };
    match (u, v) {
        (Point::Finite(_), Point::Finite(_)) => {
            let n = search.finite_size.ok_or_else(|| {
                Error::InvalidArgument("finite midpoint search needs finite_size".into())
            })?;
            let mut best: Option<(f64, f64, usize)> = None;
            for i in 0..n {
                let (l, r) = legs(&Point::Finite(i))?;
                let key = (l + r, l.max(r), i);
                let better = match best {
                    None => true,
                    Some(b) => key.0 < b.0 || (key.0 == b.0 && key.1 < b.1),
                };
                if better {
                    best = Some(key);
                }
            }
            let (sum, _, i) = best.ok_or_else(|| Error::InvalidArgument("empty finite space".into()))?;
            if sum <= target {
                Ok(Point::Finite(i))
            } else {
                Err(Error::MidpointNotFound {
                    best: Point::Finite(i),
                    excess: sum - target,
                })
            }
        }
        (Point::Euclidean(uc), Point::Euclidean(vc)) => {
            if uc.len() != vc.len() {
                return Err(Error::DimensionMismatch {
                    left: uc.len(),
                    right: vc.len(),
                });
            }
            let mut w = lerp(uc, vc, 0.5);
            let f = |w: &[f64]| -> Result<f64> {
                let (l, r) = legs(&Point::Euclidean(w.to_vec()))?;
                Ok(l + r)
            };
            let mut fw = f(&w)?;
            let mut evals = 1;
            let mut step = search.initial_step.unwrap_or(0.5 * l2(uc, vc));
            let mut trial = w.clone();
            while fw > target && evals < search.max_evals && step >= search.min_step {
                let mut improved = false;
                'dirs: for k in 0..w.len() {
                    for sign in [1.0, -1.0] {
                        trial.copy_from_slice(&w);
                        trial[k] += sign * step;
                        let ft = f(&trial)?;
                        evals += 1;
                        if ft < fw {
                            w.copy_from_slice(&trial);
                            fw = ft;
                            improved = true;
                            break 'dirs;
                        }
                        if evals >= search.max_evals {
                            break 'dirs;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if fw <= target {
                Ok(Point::Euclidean(w))
            } else {
                Err(Error::MidpointNotFound {
                    best: Point::Euclidean(w),
                    excess: fw - target,
                })
            }
        }
        _ => Err(Error::SpaceMismatch("midpoint endpoints live in different spaces".into())),
    }
}

/// Total slack `eta` split over levels as `eta * 4^{-n} / 2` per pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicBudget {
    pub eta: f64,
    pub depth: usize,
}

impl GeodesicBudget {
    pub fn new(eta: f64, depth: usize) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::InvalidArgument(format!("eta = {eta} must be positive")));
        }
        if depth > 24 {
            return Err(Error::InvalidArgument(format!("depth {depth} exceeds 24")));
        }
        Ok(Self { eta, depth })
    }

    /// Slack per pair at level `n`.
    pub fn level_slack(&self, n: usize) -> f64 {
        self.eta * 0.25f64.powi(n as i32) / 2.0
    }

    /// `sum_{j <= n} 2^j * level_slack(j)`.
    pub fn spent_through(&self, n: usize) -> f64 {
        (0..=n).map(|j| (1u64 << j) as f64 * self.level_slack(j)).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Geodesic {
    #[serde(skip)]
    pub curve: SampledCurve,
    /// Insertion level per node; endpoints are 0, level-`n` midpoints are `n + 1`.
    pub levels: Vec<usize>,
    /// Partition sum after each level of insertions.
    pub level_sums: Vec<f64>,
    pub cost: f64,
}

/// Absolute tolerance for the per-level budget check.
const LEVEL_CHECK_TOL: f64 = 1e-9;

/// Dyadic curve on `[0, tau]` obtained by inserting approximate midpoints
/// level by level; each level is checked against the running budget.
pub fn dyadic_geodesic(
    a: &ActionCost,
    tau: f64,
    u0: &Point,
    u1: &Point,
    budget: &GeodesicBudget,
    search: &MidpointSearch,
) -> Result<Geodesic> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!("tau = {tau} must be positive")));
    }
    let cost = a.evaluate(tau, u0, u1)?;
    let mut pts = vec![u0.clone(), u1.clone()];
    let mut levels = vec![0, 0];
    let mut level_sums = Vec::with_capacity(budget.depth);
    let partial = |pts: &[Point]| -> Box<SampledCurve> {
        let m = pts.len() - 1;
        let times = (0..=m).map(|i| tau * i as f64 / m as f64).collect();
        Box::new(SampledCurve::from_samples(times, pts.to_vec()).expect("valid dyadic grid"))
    };
    for n in 0..budget.depth {
        let rho = tau / (1u64 << n) as f64;
        let eps = budget.level_slack(n);
        let mids: Vec<Result<Point>> = pts
            .par_windows(2)
            .map(|w| find_midpoint(a, rho, &w[0], &w[1], eps, search))
            .collect();
        let mut next = Vec::with_capacity(2 * pts.len() - 1);
        let mut next_levels = Vec::with_capacity(next.capacity());
        for (i, m) in mids.into_iter().enumerate() {
            let m = match m {
                Ok(m) => m,
                Err(e) => {
                    return Err(Error::GeodesicAborted {
                        level: n,
                        partial: partial(&pts),
                        reason: Box::new(e),
                    })
                }
            };
            next.push(pts[i].clone());
            next_levels.push(levels[i]);
            next.push(m);
            next_levels.push(n + 1);
        }
        next.push(pts[pts.len() - 1].clone());
        next_levels.push(levels[levels.len() - 1]);
        pts = next;
        levels = next_levels;

        let half = 0.5 * rho;
        let mut sum = 0.0;
        for w in pts.windows(2) {
            sum += a.evaluate(half, &w[0], &w[1])?;
        }
        let allowed = cost + budget.spent_through(n) + LEVEL_CHECK_TOL * cost.max(1.0);
        if sum > allowed {
            return Err(Error::GeodesicAborted {
                level: n,
                partial: partial(&pts),
                reason: Box::new(Error::Optimizer(format!(
                    "level sum {sum} exceeds budget {allowed}"
                ))),
            });
        }
        level_sums.push(sum);
    }
    Ok(Geodesic {
        curve: *partial(&pts),
        levels,
        level_sums,
        cost,
    })
}

/// Action of `omega` on its own sample grid minus `a(tau, u0, u1)`.
pub fn geodesic_action_gap(a: &ActionCost, tau: f64, u0: &Point, u1: &Point, omega: &SampledCurve) -> Result<f64> {
    let n = omega.points().len();
    if &omega.points()[0] != u0 || &omega.points()[n - 1] != u1 {
        return Err(Error::InvalidArgument("curve endpoints do not match".into()));
    }
    if omega.start() != 0.0 || (omega.end() - tau).abs() > 1e-12 * tau.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "curve interval [{}, {}] is not [0, {tau}]",
            omega.start(),
            omega.end()
        )));
    }
    let p = Partition::new(omega.times().to_vec())?;
    Ok(action_on_partition(a, omega, &p)? - a.evaluate(tau, u0, u1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_core::{check_axioms, classify_growth, GrowthClass, LimitSchedule};
    use crate::cost_constructors::{from_metric, rescale, ConvexGauge};
    use crate::state_space::Metric;

    fn p(x: f64) -> Point {
        Point::scalar(x)
    }

    fn quad_metric_cost() -> ActionCost {
        from_metric(Metric::euclidean(2.0).unwrap(), ConvexGauge::power(2.0).unwrap()).unwrap()
    }

    #[test]
    fn quadratic_transcription_is_exact() {
        let r = Integrand::quadratic();
        for m in [1, 2, 4, 64] {
            let (v, tr) = action_integral_cost(&r, 1.0, &p(0.0), &p(2.0), m, &MinimizerConfig::default()).unwrap();
            assert!((v - 2.0).abs() < 1e-12, "{m}: {v}");
            assert_eq!(tr.knots.len(), m + 1);
            assert_eq!(tr.knots[m], vec![2.0]);
        }
        let (v, tr) = action_integral_cost(&r, 2.0, &p(1.0), &p(1.0), 8, &MinimizerConfig::default()).unwrap();
        assert_eq!(v, 0.0);
        assert!(tr.knots.iter().all(|k| k == &vec![1.0]));
    }

    #[test]
    fn descent_recovers_from_a_bad_start() {
        let r = Integrand::quadratic();
        let mut x = vec![3.0, -1.0, 5.0];
        let dt = 0.25;
        let u = 0.0;
        let v = 2.0;
        let obj = |x: &[f64]| {
            let k = [u, x[0], x[1], x[2], v];
            k.windows(2).map(|w| dt * r.eval(&[0.0], &[(w[1] - w[0]) / dt])).sum::<f64>()
        };
        let grad = |x: &[f64]| central_diff(obj, x);
        let (fx, info) = armijo_descent(&mut x, &obj, &grad, &|_: &[f64], g: &[f64]| laplacian_solve(g, 1, dt), &MinimizerConfig {
            grad_tol: 1e-7,
            ..Default::default()
        })
        .unwrap();
        assert!(info.converged, "{info:?}");
        assert!((fx - 2.0).abs() < 1e-10);
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - 0.5 * (i + 1) as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn fd_gradients_match_analytic() {
        let r = Integrand::weighted_quadratic();
        let fd = Integrand::new("fd", |t: &[f64], z: &[f64]| (1.0 + t[0] * t[0]) * 0.5 * z[0] * z[0]);
        for (t, z) in [(0.3, 1.2), (-1.0, 0.5), (2.0, -3.0)] {
            let (ga, gf) = (r.grad_theta(&[t], &[z]), fd.grad_theta(&[t], &[z]));
            assert!((ga[0] - gf[0]).abs() < 1e-6 * (1.0 + ga[0].abs()));
            let (ga, gf) = (r.grad_zeta(&[t], &[z]), fd.grad_zeta(&[t], &[z]));
            assert!((ga[0] - gf[0]).abs() < 1e-6 * (1.0 + ga[0].abs()));
        }
    }

    #[test]
    fn weighted_transcription_self_converges() {
        let r = Integrand::weighted_quadratic();
        let cfg = MinimizerConfig::default();
        let (v64, t64) = action_integral_cost(&r, 1.0, &p(0.0), &p(1.0), 64, &cfg).unwrap();
        let (v512, _) = action_integral_cost(&r, 1.0, &p(0.0), &p(1.0), 512, &cfg).unwrap();
        assert!(t64.descent.converged, "{:?}", t64.descent);
        assert!((v64 - v512).abs() < 1e-3 * v512);
        // the weight pulls the path toward 0, so the value beats the straight line
        let straight = (0..64)
            .map(|i| {
                let m = (i as f64 + 0.5) / 64.0;
                (1.0 + m * m) * 0.5 / 64.0
            })
            .sum::<f64>();
        assert!(v64 < straight);
    }

    #[test]
    fn refinement_direction_follows_weight_curvature() {
        // Doubling M moves the midpoint-rule quadrature nodes, so nested
        // knots do not give monotone values: a weight convex in theta
        // increases with M, a concave one decreases.
        let cfg = MinimizerConfig {
            grad_tol: 1e-12,
            ..Default::default()
        };
        let concave = Integrand::new("concave", |t: &[f64], z: &[f64]| (2.0 + t[0].sin()) * 0.5 * z[0] * z[0]);
        let run = |r: &Integrand| -> Vec<f64> {
            [1, 2, 4, 8, 16, 32]
                .iter()
                .map(|&m| action_integral_cost(r, 1.0, &p(0.0), &p(1.0), m, &cfg).unwrap().0)
                .collect()
        };
        let convex = run(&Integrand::weighted_quadratic());
        assert!(convex.windows(2).all(|w| w[1] > w[0]), "{convex:?}");
        let length = (2f64.sqrt() + 1f64.asinh()) / 2.0;
        assert!(convex[5] < length * length / 2.0);
        let conc = run(&concave);
        assert!(conc.windows(2).all(|w| w[1] < w[0]), "{conc:?}");
        let quad = run(&Integrand::quadratic());
        assert!(quad.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn wrapped_quadratic_matches_closed_form() {
        let wrapped = wrap_as_action_cost(Integrand::quadratic(), 4, MinimizerConfig::default()).unwrap();
        let half = rescale(&quad_metric_cost(), 1.0, 0.5).unwrap();
        for (tau, x, y) in [(0.3, 0.0, 1.0), (2.0, -1.0, 4.0), (1.0, 0.5, 0.5)] {
            let w = wrapped.evaluate(tau, &p(x), &p(y)).unwrap();
            let c = half.evaluate(tau, &p(x), &p(y)).unwrap();
            assert!((w - c).abs() < 1e-6 * c.max(1.0));
        }
        let corpus: Vec<Point> = (0..12).map(|i| Point::Euclidean(vec![i as f64 * 0.7 - 3.0, (i * i) as f64 * 0.1])).collect();
        let rep = check_axioms(&wrapped, &corpus, 500, 1e-6, 2).unwrap();
        assert!(rep.all_pass(), "{rep:#?}");
        let sched = LimitSchedule::new(1.0, 0.5, 60, 1e-12).unwrap();
        assert_eq!(
            classify_growth(&wrapped, &p(0.0), &p(1.0), &sched, 1e8).unwrap(),
            GrowthClass::Diverging
        );
    }

    #[test]
    fn midpoints() {
        let a = quad_metric_cost();
        let s = MidpointSearch::default();
        let w = find_midpoint(&a, 1.0, &p(0.0), &p(2.0), 1e-9, &s).unwrap();
        assert_eq!(w, p(1.0));
        // both halves cost 0.5 * (1 / 0.5)^2 = 2, summing to a(1, 0, 2) = 4
        assert_eq!(a.evaluate(0.5, &p(0.0), &w).unwrap() + a.evaluate(0.5, &w, &p(2.0)).unwrap(), 4.0);
        assert_eq!(find_midpoint(&a, 1.0, &p(3.0), &p(3.0), 1e-9, &s).unwrap(), p(3.0));
        assert!(find_midpoint(&a, 0.0, &p(0.0), &p(1.0), 1e-9, &s).is_err());
    }

    #[test]
    fn compass_search_moves_off_the_chord() {
        // travel is cheap near the line y = 1, so optimal paths bow upward
        // and the chord midpoint is not an approximate midpoint
        let r = Integrand::new("valley", |t: &[f64], z: &[f64]| {
            let w = 1.0 + 4.0 * (t[1] - 1.0).powi(2);
            0.5 * w * (z[0] * z[0] + z[1] * z[1])
        });
        let a = wrap_as_action_cost(r, 4, MinimizerConfig::default()).unwrap();
        let u = Point::Euclidean(vec![0.0, 0.0]);
        let v = Point::Euclidean(vec![2.0, 0.0]);
        let full = a.evaluate(1.0, &u, &v).unwrap();
        let legs = |w: &Point| a.evaluate(0.5, &u, w).unwrap() + a.evaluate(0.5, w, &v).unwrap();
        let eps = 1e-2;
        assert!(legs(&Point::Euclidean(vec![1.0, 0.0])) > full + eps);
        let w = find_midpoint(&a, 1.0, &u, &v, eps, &MidpointSearch::default()).unwrap();
        assert!(legs(&w) <= full + eps);
        assert!(w.coords().unwrap()[1] > 0.0);
    }

    #[test]
    fn midpoint_not_found_carries_best() {
        // a metric cost with no metric midpoints: the discrete two-point space
        let a = from_metric(Metric::table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), ConvexGauge::power(2.0).unwrap())
            .unwrap();
        let s = MidpointSearch {
            finite_size: Some(2),
            ..Default::default()
        };
        let err = find_midpoint(&a, 1.0, &Point::finite(0), &Point::finite(1), 1e-6, &s).unwrap_err();
        match err {
            Error::MidpointNotFound { excess, .. } => assert!((excess - (2.0 - 1.0 - 1e-6)).abs() < 1e-12),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn finite_path_graph_midpoint() {
        let d = Metric::table(vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]]).unwrap();
        let a = from_metric(d, ConvexGauge::Linear).unwrap();
        let s = MidpointSearch {
            finite_size: Some(3),
            ..Default::default()
        };
        let w = find_midpoint(&a, 1.0, &Point::finite(0), &Point::finite(2), 1e-9, &s).unwrap();
        assert_eq!(w, Point::finite(1));
        let g = dyadic_geodesic(&a, 1.0, &Point::finite(0), &Point::finite(2), &GeodesicBudget::new(1e-3, 1).unwrap(), &s)
            .unwrap();
        assert_eq!(g.curve.points()[1], Point::finite(1));
        assert_eq!(g.level_sums, vec![2.0]);
        assert_eq!(g.levels, vec![0, 1, 0]);
    }

    #[test]
    fn budget_identity() {
        let b = GeodesicBudget::new(1e-3, 6).unwrap();
        assert!((b.spent_through(60) - 1e-3).abs() < 1e-18);
        assert!(b.spent_through(5) < 1e-3);
        assert!(GeodesicBudget::new(0.0, 3).is_err());
    }

    #[test]
    fn quadratic_geodesic_is_the_line() {
        let a = quad_metric_cost();
        let budget = GeodesicBudget::new(1e-3, 6).unwrap();
        let g = dyadic_geodesic(&a, 1.0, &p(0.0), &p(1.0), &budget, &MidpointSearch::default()).unwrap();
        assert_eq!(g.curve.points().len(), 65);
        for (k, w) in g.curve.points().iter().enumerate() {
            assert!((w.coords().unwrap()[0] - k as f64 / 64.0).abs() < 1e-6);
        }
        let gap = geodesic_action_gap(&a, 1.0, &p(0.0), &p(1.0), &g.curve).unwrap();
        assert!((-1e-9..=1e-3).contains(&gap), "{gap}");
        assert_eq!(g.levels[32], 1);
        assert_eq!(g.levels[1], 6);

        let flat = dyadic_geodesic(&a, 1.0, &p(0.5), &p(0.5), &budget, &MidpointSearch::default()).unwrap();
        assert!(flat.curve.points().iter().all(|w| w == &p(0.5)));
        assert_eq!(*flat.level_sums.last().unwrap(), 0.0);
    }

    #[test]
    fn gap_of_detour_and_line() {
        let a = quad_metric_cost();
        let line = SampledCurve::from_fn(0.0, 1.0, 9, Point::scalar).unwrap();
        assert!(geodesic_action_gap(&a, 1.0, &p(0.0), &p(1.0), &line).unwrap().abs() < 1e-12);
        let detour = SampledCurve::from_fn(0.0, 1.0, 9, |t| Point::scalar(t + 10.0 * (std::f64::consts::PI * t).sin().powi(2)))
            .unwrap();
        assert!(geodesic_action_gap(&a, 1.0, &p(0.0), &p(1.0), &detour).unwrap() > 100.0);
        assert!(geodesic_action_gap(&a, 1.0, &p(0.0), &p(2.0), &line).is_err());
    }

    #[test]
    fn failed_level_aborts_with_partial_curve() {
        let a = from_metric(Metric::table(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), ConvexGauge::power(2.0).unwrap())
            .unwrap();
        let s = MidpointSearch {
            finite_size: Some(2),
            ..Default::default()
        };
        let err = dyadic_geodesic(&a, 1.0, &Point::finite(0), &Point::finite(1), &GeodesicBudget::new(1e-3, 3).unwrap(), &s)
            .unwrap_err();
        match err {
            Error::GeodesicAborted { level, partial, .. } => {
                assert_eq!(level, 0);
                assert_eq!(partial.points().len(), 2);
            }
            e => panic!("{e:?}"),
        }
    }
}
