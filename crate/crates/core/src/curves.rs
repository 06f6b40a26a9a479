//! Sampled curves, the action of a curve over partitions, the action
//! density, and absolute-continuity diagnostics.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::action_core::{ActionCost, LimitSchedule};
use crate::error::{Error, Result};
use crate::induced_metric::{induced_metric, InducedMetricQuery};
use crate::state_space::Point;

type Evaluator = dyn Fn(f64) -> Point + Send + Sync;

/// A curve `u: [a, b] -> X` known at finitely many times, optionally backed
/// by an evaluator for off-grid queries.
#[derive(Clone)]
pub struct SampledCurve {
    times: Vec<f64>,
    points: Vec<Point>,
    evaluator: Option<Arc<Evaluator>>,
}

impl fmt::Debug for SampledCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SampledCurve")
            .field("times", &self.times)
            .field("points", &self.points)
            .field("evaluator", &self.evaluator.is_some())
            .finish()
    }
}

impl SampledCurve {
    pub fn from_samples(times: Vec<f64>, points: Vec<Point>) -> Result<Self> {
        if times.len() != points.len() {
            return Err(Error::DimensionMismatch {
                left: times.len(),
                right: points.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::InvalidArgument("a curve needs at least two samples".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("curve time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("curve times must be strictly increasing".into()));
        }
        for p in &points {
            p.check_finite_coords()?;
        }
        Ok(Self {
            times,
            points,
            evaluator: None,
        })
    }

    /// Samples `f` at `n` uniform times on `[a, b]` and keeps it as the evaluator.
    pub fn from_fn<F>(a: f64, b: f64, n: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Point + Send + Sync + 'static,
    {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}]")));
        }
        let n = n.max(2);
        let times: Vec<f64> = (0..n)
            .map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 })
            .collect();
        let points = times.iter().map(|&t| f(t)).collect();
        let mut c = Self::from_samples(times, points)?;
        c.evaluator = Some(Arc::new(f));
        Ok(c)
    }

    pub fn with_evaluator<F>(mut self, f: F) -> Self
    where
        F: Fn(f64) -> Point + Send + Sync + 'static,
    {
        self.evaluator = Some(Arc::new(f));
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn has_evaluator(&self) -> bool {
        self.evaluator.is_some()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn snap_tol(&self) -> f64 {
        1e-12 * (self.end() - self.start()).max(1.0)
    }

    fn sample_index(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t);
        let tol = self.snap_tol();
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < self.times.len())
            .find(|&j| (self.times[j] - t).abs() <= tol)
    }

    /// `u(t)`: a stored sample when `t` matches a sample time, else the evaluator.
    pub fn point_at(&self, t: f64) -> Result<Point> {
        let tol = self.snap_tol();
        if !(t >= self.start() - tol && t <= self.end() + tol) {
            return Err(Error::Domain(format!(
                "t = {t} outside [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        if let Some(i) = self.sample_index(t) {
            return Ok(self.points[i].clone());
        }
        match &self.evaluator {
            Some(f) => {
                let p = f(t);
                p.check_finite_coords()?;
                Ok(p)
            }
            None => Err(Error::NodeUnresolvable(t)),
        }
    }
}

/// Finite partition `a = t0 < t1 < .. < tM = b`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Partition {
    nodes: Vec<f64>,
}

impl Partition {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("a partition needs at least two nodes".into()));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("partition nodes must be finite and increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// `m` equal pieces; the last node is pinned to `b` exactly.
    pub fn uniform(a: f64, b: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("partition needs at least one piece".into()));
        }
        Self::new(
            (0..=m)
                .map(|j| if j == m { b } else { a + (b - a) * j as f64 / m as f64 })
                .collect(),
        )
    }

    pub fn dyadic(a: f64, b: f64, depth: u32) -> Result<Self> {
        Self::uniform(a, b, 1usize << depth)
    }

    /// Partition of `u`'s domain; checks the endpoints match.
    pub fn for_curve(u: &SampledCurve, nodes: Vec<f64>) -> Result<Self> {
        let p = Self::new(nodes)?;
        p.check_pinned(u)?;
        Ok(p)
    }

    fn check_pinned(&self, u: &SampledCurve) -> Result<()> {
        let tol = u.snap_tol();
        if (self.nodes[0] - u.start()).abs() > tol || (self.nodes[self.nodes.len() - 1] - u.end()).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "partition [{}, {}] does not match curve interval [{}, {}]",
                self.nodes[0],
                self.nodes[self.nodes.len() - 1],
                u.start(),
                u.end()
            )));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn pieces(&self) -> usize {
        self.nodes.len() - 1
    }
}

fn resolve(u: &SampledCurve, nodes: &[f64]) -> Result<Vec<Point>> {
    nodes.iter().map(|&t| u.point_at(t)).collect()
}

fn sum_over(a: &ActionCost, nodes: &[f64], pts: &[Point]) -> Result<f64> {
    let mut total = 0.0;
    for j in 1..nodes.len() {
        total += a.evaluate(nodes[j] - nodes[j - 1], &pts[j - 1], &pts[j])?;
    }
    Ok(total)
}

/// `sum_j a(t_j - t_{j-1}, u(t_{j-1}), u(t_j))`.
pub fn action_on_partition(a: &ActionCost, u: &SampledCurve, p: &Partition) -> Result<f64> {
    p.check_pinned(u)?;
    let pts = resolve(u, &p.nodes)?;
    sum_over(a, &p.nodes, &pts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementStep {
    pub depth: usize,
    pub partition_size: usize,
    pub value: f64,
}

/// Lower estimate of the action of a curve from nested refinements.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionEstimate {
    pub value: f64,
    pub depth_reached: usize,
    pub converged: bool,
    pub history: Vec<RefinementStep>,
}

fn sample_level_nodes(u: &SampledCurve, k: usize, top: usize) -> Vec<f64> {
    let last = u.times.len() - 1;
    let stride = 1usize << (top - k);
    let mut idx: Vec<usize> = (0..last).step_by(stride).collect();
    idx.push(last);
    idx.into_iter().map(|i| u.times[i]).collect()
}

/// Nested refinement sums, stopped once the relative increment drops below
/// `rel_tol` or the depth budget is spent.
///
/// With an evaluator, depth `k` is the uniform partition into `2^k` pieces;
/// without one, refinement runs through nested index strides of the samples
/// and stops at the sample grid.
pub fn estimate_action(a: &ActionCost, u: &SampledCurve, max_depth: usize, rel_tol: f64) -> Result<ActionEstimate> {
    if !(rel_tol.is_finite() && rel_tol > 0.0) {
        return Err(Error::InvalidArgument("rel_tol must be positive".into()));
    }
    // without an evaluator, level k keeps every 2^(full - k)-th sample
    let full = if u.has_evaluator() {
        0
    } else {
        (usize::BITS - (u.times.len() - 2).leading_zeros()) as usize
    };
    let top = if u.has_evaluator() { max_depth.min(40) } else { max_depth.min(full) };
    let mut history = Vec::new();
    let mut converged = false;
    for k in 0..=top {
        let nodes = if u.has_evaluator() {
            Partition::dyadic(u.start(), u.end(), k as u32)?.nodes
        } else {
            sample_level_nodes(u, k, full)
        };
        let pts = resolve(u, &nodes)?;
        let value = sum_over(a, &nodes, &pts)?;
        let size = nodes.len() - 1;
        if let Some(prev) = history.last().map(|s: &RefinementStep| s.value) {
            if (value - prev).abs() <= rel_tol * value.abs().max(f64::MIN_POSITIVE) {
                converged = true;
            }
        }
        history.push(RefinementStep {
            depth: k,
            partition_size: size,
            value,
        });
        if converged {
            break;
        }
    }
    let last = history.last().expect("at least one level");
    Ok(ActionEstimate {
        value: last.value,
        depth_reached: last.depth,
        converged,
        history,
    })
}

/// `sum_j d_lambda(u(t_{j-1}), u(t_j))` over the partition.
pub fn metric_variation(a: &ActionCost, q: &InducedMetricQuery, u: &SampledCurve, p: &Partition) -> Result<f64> {
    p.check_pinned(u)?;
    let pts = resolve(u, &p.nodes)?;
    let mut total = 0.0;
    for j in 1..pts.len() {
        total += induced_metric(a, q, &pts[j - 1], &pts[j])?;
    }
    Ok(total)
}

/// Symmetric difference quotient
/// `[a(h, u(t-h), u(t)) + a(h, u(t), u(t+h))] / (2h)` along the schedule.
pub fn action_density(a: &ActionCost, u: &SampledCurve, t: f64, sched: &LimitSchedule) -> Result<f64> {
    sched.validate()?;
    let room = (t - u.start()).min(u.end() - t);
    if !(room > 0.0) {
        return Err(Error::Domain(format!(
            "density needs an interior time, got {t} on [{}, {}]",
            u.start(),
            u.end()
        )));
    }
    let here = u.point_at(t)?;
    let h0 = sched.tau0.min(room);
    let at = |k: usize| -> Result<f64> {
        let h = h0 * sched.factor.powi(k as i32);
        let left = a.evaluate(h, &u.point_at(t - h)?, &here)?;
        let right = a.evaluate(h, &here, &u.point_at(t + h)?)?;
        Ok((left + right) / (2.0 * h))
    };
    let mut prev = at(0)?;
    for k in 1..sched.max_steps {
        let cur = at(k)?;
        if sched.is_stable(prev, cur) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NotConverged {
        last: at(sched.max_steps)?,
        previous: prev,
        steps: sched.max_steps,
    })
}

/// Density values on interior times. Each time owns the cell between the
/// midpoints to its neighbors (the first and last cells extend to the
/// interval ends), so the profile is a piecewise-constant function on `[a, b]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityProfile {
    pub start: f64,
    pub end: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub converged: Vec<bool>,
    pub schedule: Option<LimitSchedule>,
}

impl DensityProfile {
    /// A user-supplied profile `g`; every value counts as converged.
    pub fn from_values(start: f64, end: f64, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::InvalidArgument("profile needs matching nonempty times and values".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= start || times[times.len() - 1] >= end {
            return Err(Error::InvalidArgument("profile times must be interior and increasing".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("profile values must be finite and nonnegative".into()));
        }
        let n = times.len();
        Ok(Self {
            start,
            end,
            times,
            values,
            converged: vec![true; n],
            schedule: None,
        })
    }

    /// Cell-centered grid `a + (b - a)(i + 1/2) / n`.
    pub fn cell_centers(start: f64, end: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| start + (end - start) * (i as f64 + 0.5) / n as f64)
            .collect()
    }

    fn cell(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 {
            self.start
        } else {
            0.5 * (self.times[i - 1] + self.times[i])
        };
        let hi = if i + 1 == self.times.len() {
            self.end
        } else {
            0.5 * (self.times[i] + self.times[i + 1])
        };
        (lo, hi)
    }

    /// Integral of the profile over `[s, t]`, skipping unconverged cells.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.times.len() {
            if !self.converged[i] {
                continue;
            }
            let (lo, hi) = self.cell(i);
            let overlap = hi.min(t) - lo.max(s);
            if overlap > 0.0 {
                total += overlap * self.values[i];
            }
        }
        total
    }

    pub fn total(&self) -> f64 {
        self.integral(self.start, self.end)
    }

    pub fn failed(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Consistency {
    pub profile: DensityProfile,
    pub integral: f64,
    pub action: ActionEstimate,
    pub gap: f64,
}

/// Fraction of unconverged grid points above which the profile is rejected.
pub const MAX_UNCONVERGED_FRACTION: f64 = 0.2;

/// Density profile on `grid_n` cell centers, estimated in parallel.
pub fn density_profile(a: &ActionCost, u: &SampledCurve, grid_n: usize, sched: &LimitSchedule) -> Result<DensityProfile> {
    if grid_n == 0 {
        return Err(Error::InvalidArgument("grid_n must be positive".into()));
    }
    sched.validate()?;
    let times = DensityProfile::cell_centers(u.start(), u.end(), grid_n);
    let results: Vec<Result<Option<f64>>> = times
        .par_iter()
        .map(|&t| match action_density(a, u, t, sched) {
            Ok(v) => Ok(Some(v)),
            Err(Error::NotConverged { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut values = Vec::with_capacity(grid_n);
    let mut converged = Vec::with_capacity(grid_n);
    for r in results {
        match r? {
            Some(v) => {
                values.push(v);
                converged.push(true);
            }
            None => {
                values.push(0.0);
                converged.push(false);
            }
        }
    }
    Ok(DensityProfile {
        start: u.start(),
        end: u.end(),
        times,
        values,
        converged,
        schedule: Some(*sched),
    })
}

/// Density profile, its integral, the refinement estimate of the action,
/// and their gap.
pub fn density_profile_and_consistency(
    a: &ActionCost,
    u: &SampledCurve,
    grid_n: usize,
    sched: &LimitSchedule,
    max_depth: usize,
    rel_tol: f64,
) -> Result<Consistency> {
    let profile = density_profile(a, u, grid_n, sched)?;
    let failed = profile.failed();
    if failed as f64 > MAX_UNCONVERGED_FRACTION * grid_n as f64 {
        return Err(Error::DensityDiagnostic {
            failed,
            total: grid_n,
        });
    }
    let integral = profile.total();
    let action = estimate_action(a, u, max_depth, rel_tol)?;
    let gap = (integral - action.value).abs();
    Ok(Consistency {
        profile,
        integral,
        action,
        gap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcWitness {
    pub s: f64,
    pub t: f64,
    pub cost: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcReport {
    pub pairs_checked: usize,
    pub worst_excess: f64,
    pub witness: Option<AcWitness>,
    pub bound_pass: bool,
    pub minimality_checked: usize,
    pub minimality_worst: f64,
    pub minimality_pass: bool,
}

impl AcReport {
    pub fn pass(&self) -> bool {
        self.bound_pass && self.minimality_pass
    }
}

/// Checks `a(t - s, u(s), u(t)) <= int_s^t g + tol` on evenly spaced pairs,
/// and that the curve's own density does not exceed `g` at `g`'s grid times.
pub fn check_absolute_continuity(
    a: &ActionCost,
    u: &SampledCurve,
    g: &DensityProfile,
    sample_pairs: usize,
    tol: f64,
) -> Result<AcReport> {
    if sample_pairs == 0 {
        return Err(Error::InvalidArgument("sample_pairs must be positive".into()));
    }
    let snap = u.snap_tol();
    if (g.start - u.start()).abs() > snap || (g.end - u.end()).abs() > snap {
        return Err(Error::InvalidArgument("profile and curve intervals differ".into()));
    }
    // m nodes give m(m-1)/2 pairs
    let mut m = 2;
    while m * (m - 1) / 2 < sample_pairs {
        m += 1;
    }
    let nodes = Partition::uniform(u.start(), u.end(), m - 1)?.nodes;
    let pts = resolve(u, &nodes)?;
    let mut pairs = Vec::new();
    'outer: for i in 0..m {
        for j in i + 1..m {
            if pairs.len() == sample_pairs {
                break 'outer;
            }
            pairs.push((i, j));
        }
    }
    let mut worst_excess = f64::NEG_INFINITY;
    let mut witness = None;
    for &(i, j) in &pairs {
        let (s, t) = (nodes[i], nodes[j]);
        let cost = a.evaluate(t - s, &pts[i], &pts[j])?;
        let bound = g.integral(s, t);
        let excess = cost - bound;
        if excess > worst_excess {
            worst_excess = excess;
            witness = Some(AcWitness { s, t, cost, bound });
        }
    }
    let sched = g.schedule.unwrap_or_default();
    let own: Vec<Result<f64>> = g
        .times
        .par_iter()
        .map(|&t| action_density(a, u, t, &sched))
        .collect();
    let mut minimality_checked = 0;
    let mut minimality_worst = f64::NEG_INFINITY;
    for (i, r) in own.into_iter().enumerate() {
        match r {
            Ok(d) if g.converged[i] => {
                minimality_checked += 1;
                minimality_worst = minimality_worst.max(d - g.values[i]);
            }
            Ok(_) | Err(Error::NotConverged { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(AcReport {
        pairs_checked: pairs.len(),
        worst_excess,
        witness,
        bound_pass: worst_excess <= tol,
        minimality_checked,
        minimality_worst,
        minimality_pass: minimality_worst <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_constructors::{from_metric, linear_combination, ConvexGauge};
    use crate::state_space::Metric;
    use proptest::prelude::*;

    fn quad() -> ActionCost {
        from_metric(Metric::euclidean(2.0).unwrap(), ConvexGauge::power(2.0).unwrap()).unwrap()
    }

    fn square() -> SampledCurve {
        SampledCurve::from_fn(0.0, 1.0, 3, |t| Point::scalar(t * t)).unwrap()
    }

    fn line() -> SampledCurve {
        SampledCurve::from_fn(0.0, 1.0, 3, Point::scalar).unwrap()
    }

    fn constant() -> SampledCurve {
        SampledCurve::from_fn(0.0, 1.0, 3, |_| Point::scalar(0.4)).unwrap()
    }

    /// Brute-force `sum_j dt ((t_j^2 - t_{j-1}^2) / dt)^2` on the uniform grid.
    fn square_sum_oracle(m: usize) -> f64 {
        let dt = 1.0 / m as f64;
        (1..=m)
            .map(|j| {
                let (s, t) = ((j - 1) as f64 * dt, j as f64 * dt);
                (t * t - s * s).powi(2) / dt
            })
            .sum()
    }

    #[test]
    fn curve_construction_errors() {
        assert!(SampledCurve::from_samples(vec![0.0], vec![Point::scalar(0.0)]).is_err());
        assert!(SampledCurve::from_samples(vec![0.0, 0.0], vec![Point::scalar(0.0); 2]).is_err());
        assert!(SampledCurve::from_samples(vec![0.0, 1.0], vec![Point::scalar(0.0)]).is_err());
        let c = SampledCurve::from_samples(vec![0.0, 1.0], vec![Point::scalar(0.0), Point::scalar(1.0)]).unwrap();
        assert!(matches!(c.point_at(0.5), Err(Error::NodeUnresolvable(_))));
        assert!(c.point_at(2.0).is_err());
        assert_eq!(c.point_at(1.0).unwrap(), Point::scalar(1.0));
    }

    #[test]
    fn partition_sums() {
        let a = quad();
        for m in [1, 2, 5, 16, 100] {
            let p = Partition::uniform(0.0, 1.0, m).unwrap();
            let v = action_on_partition(&a, &line(), &p).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{m}: {v}");
            assert_eq!(action_on_partition(&a, &constant(), &p).unwrap(), 0.0);
        }
        let v4 = action_on_partition(&a, &square(), &Partition::uniform(0.0, 1.0, 4).unwrap()).unwrap();
        assert!((v4 - square_sum_oracle(4)).abs() < 1e-14);
        assert!((v4 - 1.3125).abs() < 1e-14);
        assert!(v4 < 4.0 / 3.0);
        let wrong = Partition::uniform(0.0, 2.0, 4).unwrap();
        assert!(action_on_partition(&a, &square(), &wrong).is_err());
    }

    #[test]
    fn estimate_square_curve() {
        let a = quad();
        let est = estimate_action(&a, &square(), 30, 1e-9).unwrap();
        assert!(est.converged);
        assert!((est.value - 4.0 / 3.0).abs() < 1e-6, "{}", est.value);
        for w in est.history.windows(2) {
            assert!(w[1].value >= w[0].value - 1e-12);
        }
        let line_est = estimate_action(&a, &line(), 30, 1e-9).unwrap();
        assert_eq!(line_est.depth_reached, 1);
        assert!((line_est.history[0].value - 1.0).abs() < 1e-15);
        let zero = estimate_action(&a, &constant(), 30, 1e-9).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(zero.converged);
    }

    #[test]
    fn estimate_from_samples_stops_at_grid() {
        let a = quad();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let pts = times.iter().map(|t| Point::scalar(t * t)).collect();
        let c = SampledCurve::from_samples(times, pts).unwrap();
        let est = estimate_action(&a, &c, 50, 1e-15).unwrap();
        assert!(!est.converged);
        let last = est.history.last().unwrap();
        assert_eq!(last.partition_size, 10);
        assert!((last.value - square_sum_oracle(10)).abs() < 1e-13);
        for w in est.history.windows(2) {
            assert!(w[1].value >= w[0].value - 1e-12);
        }
    }

    #[test]
    fn variation_examples() {
        let a = quad();
        let q = InducedMetricQuery::new(1.0).unwrap();
        let p = Partition::uniform(0.0, 1.0, 8).unwrap();
        let v = metric_variation(&a, &q, &line(), &p).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        assert!(metric_variation(&a, &q, &constant(), &p).unwrap() < 1e-15);
        let v = metric_variation(&a, &q, &square(), &p).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        let act = action_on_partition(&a, &square(), &p).unwrap();
        assert!(v <= 1.0 + act + 8.0 * 3.0 * q.abs_tol);
    }

    #[test]
    fn densities() {
        let a = quad();
        let sched = LimitSchedule::default();
        assert!((action_density(&a, &line(), 0.3, &sched).unwrap() - 1.0).abs() < 1e-12);
        assert!((action_density(&a, &square(), 0.5, &sched).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(action_density(&a, &constant(), 0.5, &sched).unwrap(), 0.0);
        assert!(action_density(&a, &line(), 0.0, &sched).is_err());
        // symmetric quotient for t^2 is 4 t^2 + h^2
        let coarse = LimitSchedule::new(0.1, 0.5, 2, 1e-30).unwrap();
        let err = action_density(&a, &square(), 0.5, &coarse).unwrap_err();
        match err {
            Error::NotConverged { previous, .. } => assert!((previous - (1.0 + 0.0025)).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_metric_density() {
        let e = Metric::euclidean(2.0).unwrap();
        let a = linear_combination(vec![
            (1.0, from_metric(e.clone(), ConvexGauge::power(2.0).unwrap()).unwrap()),
            (1.0, from_metric(e, ConvexGauge::power(4.0).unwrap()).unwrap()),
        ])
        .unwrap();
        let prof = density_profile(&a, &line(), 50, &LimitSchedule::default()).unwrap();
        assert!(prof.values.iter().all(|v| (v - 2.0).abs() < 1e-5));
    }

    #[test]
    fn consistency_square() {
        let a = quad();
        let c = density_profile_and_consistency(&a, &square(), 400, &LimitSchedule::default(), 30, 1e-9).unwrap();
        assert!((c.integral - 4.0 / 3.0).abs() < 1e-4);
        assert!(c.gap < 1e-4);
        for (t, v) in c.profile.times.iter().zip(&c.profile.values) {
            assert!((v - 4.0 * t * t).abs() < 1e-5);
        }
        let z = density_profile_and_consistency(&a, &constant(), 20, &LimitSchedule::default(), 10, 1e-9).unwrap();
        assert_eq!(z.integral, 0.0);
    }

    #[test]
    fn unconverged_profile_rejected() {
        let a = quad();
        let sched = LimitSchedule::new(0.1, 0.5, 2, 1e-30).unwrap();
        let err = density_profile_and_consistency(&a, &square(), 10, &sched, 5, 1e-9).unwrap_err();
        assert!(matches!(err, Error::DensityDiagnostic { .. }));
    }

    #[test]
    fn absolute_continuity_checks() {
        let a = quad();
        let u = square();
        let own = density_profile(&a, &u, 200, &LimitSchedule::default()).unwrap();
        let rep = check_absolute_continuity(&a, &u, &own, 100, 1e-6).unwrap();
        assert!(rep.pass(), "{rep:?}");
        assert_eq!(rep.pairs_checked, 100);

        let zero = DensityProfile::from_values(0.0, 1.0, own.times.clone(), vec![0.0; 200]).unwrap();
        let rep = check_absolute_continuity(&a, &u, &zero, 20, 1e-6).unwrap();
        assert!(!rep.bound_pass);
        let w = rep.witness.unwrap();
        assert!(w.cost > 0.0 && w.bound == 0.0);

        let plus = DensityProfile::from_values(0.0, 1.0, own.times.clone(), own.values.iter().map(|v| v + 0.1).collect())
            .unwrap();
        let rep = check_absolute_continuity(&a, &u, &plus, 100, 1e-6).unwrap();
        assert!(rep.pass());
        assert!(rep.worst_excess < -0.005);
    }

    #[test]
    fn pointwise_ac_bound_slack() {
        // a(t - s, s^2, t^2) = (t + s)^2 (t - s) vs. int_s^t 4 r^2 dr; slack (t - s)^3 / 3
        let a = quad();
        let u = square();
        for (s, t) in [(0.0, 1.0), (0.2, 0.7), (0.5, 0.51)] {
            let lhs = a.evaluate(t - s, &u.point_at(s).unwrap(), &u.point_at(t).unwrap()).unwrap();
            let rhs = 4.0 * (t * t * t - s * s * s) / 3.0;
            assert!((rhs - lhs - (t - s) * (t - s) * (t - s) / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_derivative_bound() {
        let a = quad();
        let u = square();
        let sched = LimitSchedule::default();
        for lambda in [0.5, 1.0, 3.0] {
            let q = InducedMetricQuery::new(lambda).unwrap();
            for t in [0.2, 0.5, 0.8] {
                let dens = action_density(&a, &u, t, &sched).unwrap();
                let h = 1e-4;
                let (l, r) = (u.point_at(t - h).unwrap(), u.point_at(t + h).unwrap());
                let quot = induced_metric(&a, &q, &l, &r).unwrap() / (2.0 * h);
                assert!(quot <= lambda.max(dens) + 1e-5, "{lambda} {t} {quot} {dens}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn refinement_is_monotone(
            mut cuts in proptest::collection::vec(0.001f64..0.999, 1..8),
            extra in proptest::collection::vec(0.001f64..0.999, 1..8),
            w in 0.5f64..6.0,
        ) {
            let a = quad();
            let u = SampledCurve::from_fn(0.0, 1.0, 2, move |t| Point::scalar((w * t).sin())).unwrap();
            let build = |c: &[f64]| {
                let mut n = vec![0.0, 1.0];
                n.extend_from_slice(c);
                n.sort_by(f64::total_cmp);
                n.dedup();
                Partition::new(n).unwrap()
            };
            let coarse = build(&cuts);
            cuts.extend_from_slice(&extra);
            let fine = build(&cuts);
            let vc = action_on_partition(&a, &u, &coarse).unwrap();
            let vf = action_on_partition(&a, &u, &fine).unwrap();
            prop_assert!(vc <= vf + 1e-12);

            for lambda in [0.5, 2.0] {
                let q = InducedMetricQuery::new(lambda).unwrap();
                let mv = metric_variation(&a, &q, &u, &fine).unwrap();
                prop_assert!(mv <= lambda + vf + fine.pieces() as f64 * 3.0 * q.abs_tol);
            }
        }
    }
}
