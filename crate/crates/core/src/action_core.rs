//! The action cost abstraction and sampling-based axiom verification.
//!
//! An action cost assigns to every time span `tau > 0` and pair of points the
//! price of moving between them in that time. A valid cost vanishes exactly on
//! the diagonal, is symmetric, and satisfies the concatenation inequality
//! `a(t1 + t2, u1, u3) <= a(t1, u1, u2) + a(t2, u2, u3)`, which forces
//! `tau -> a(tau, u, v)` to be non-increasing.
//!
//! The axioms quantify over uncountable sets, so [`check_axioms`] can only
//! certify that no violation was found on a seeded sample at a tolerance.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::state_space::Point;

type Evaluator = dyn Fn(f64, &Point, &Point) -> Result<f64> + Send + Sync;

/// Declared growth of `a(tau, u, v)` as `tau -> 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    MetricLike,
    Superlinear,
    Unknown,
}

/// Structural claims attached to a cost. They are declarations, not proofs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Claims {
    pub symmetric: bool,
    pub continuous: bool,
    pub growth: Growth,
}

impl Default for Claims {
    fn default() -> Self {
        Self {
            symmetric: true,
            continuous: false,
            growth: Growth::Unknown,
        }
    }
}

/// A cost `(tau, u, v) -> [0, inf)` together with its declared claims.
///
/// Cloning is cheap: the evaluator is shared. Evaluators must be pure.
#[derive(Clone)]
pub struct ActionCost {
    name: String,
    claims: Claims,
    eval: Arc<Evaluator>,
}

impl fmt::Debug for ActionCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActionCost")
            .field("name", &self.name)
            .field("claims", &self.claims)
            .finish()
    }
}

impl ActionCost {
    pub fn new<F>(name: impl Into<String>, claims: Claims, f: F) -> Self
    where
        F: Fn(f64, &Point, &Point) -> Result<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            claims,
            eval: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn claims(&self) -> Claims {
        self.claims
    }

    pub fn with_claims(mut self, claims: Claims) -> Self {
        self.claims = claims;
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Evaluates `a(tau, u, v)`. Rejects non-positive `tau` and any
    /// non-finite or negative evaluator output.
    pub fn evaluate(&self, tau: f64, u: &Point, v: &Point) -> Result<f64> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Domain(format!("time span tau = {tau} must be positive")));
        }
        let value = (self.eval)(tau, u, v)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{} returned {value}", self.name)));
        }
        if value < 0.0 {
            return Err(Error::Domain(format!("{} returned negative value {value}", self.name)));
        }
        Ok(value)
    }
}

/// Geometric schedule `h_k = tau0 * factor^k` used for one-sided limits.
///
/// A sequence is considered stable once two successive values differ by at
/// most `rel_tol * max(1, |value|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSchedule {
    pub tau0: f64,
    pub factor: f64,
    pub max_steps: usize,
    pub rel_tol: f64,
}

impl Default for LimitSchedule {
    fn default() -> Self {
        Self {
            tau0: 0.1,
            factor: 0.5,
            max_steps: 60,
            rel_tol: 1e-9,
        }
    }
}

impl LimitSchedule {
    pub fn new(tau0: f64, factor: f64, max_steps: usize, rel_tol: f64) -> Result<Self> {
        let s = Self {
            tau0,
            factor,
            max_steps,
            rel_tol,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0.is_finite() && self.tau0 > 0.0) {
            return Err(Error::InvalidArgument(format!("tau0 = {} must be positive", self.tau0)));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "factor = {} must lie in (0, 1)",
                self.factor
            )));
        }
        if self.max_steps < 2 {
            return Err(Error::InvalidArgument("max_steps must be at least 2".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn step(&self, k: usize) -> f64 {
        self.tau0 * self.factor.powi(k as i32)
    }

    pub(crate) fn is_stable(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() <= self.rel_tol * cur.abs().max(prev.abs()).max(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Limit from below, `tau' -> tau-`; dominates `a(tau)`.
    Plus,
    /// Limit from above, `tau'' -> tau+`; dominated by `a(tau)`.
    Minus,
}

/// Estimates `a_+(tau, u, v)` or `a_-(tau, u, v)` along the schedule offsets.
pub fn one_sided_limit(
    a: &ActionCost,
    side: Side,
    tau: f64,
    u: &Point,
    v: &Point,
    sched: &LimitSchedule,
) -> Result<f64> {
    sched.validate()?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!("tau = {tau} must be positive")));
    }
    if side == Side::Plus && sched.tau0 >= tau {
        return Err(Error::InvalidArgument(format!(
            "left limit needs tau0 < tau (tau0 = {}, tau = {tau})",
            sched.tau0
        )));
    }
    let at = |k: usize| {
        let h = sched.step(k);
        match side {
            Side::Plus => a.evaluate(tau - h, u, v),
            Side::Minus => a.evaluate(tau + h, u, v),
        }
    };
    let mut prev = at(0)?;
    for k in 1..sched.max_steps {
        let cur = at(k)?;
        if sched.is_stable(prev, cur) {
            return Ok(cur);
        }
        prev = cur;
    }
    let last = at(sched.max_steps)?;
    Err(Error::NotConverged {
        last,
        previous: prev,
        steps: sched.max_steps,
    })
}

/// Builds the empirical `a_+` or `a_-` as a cost in its own right.
pub fn one_sided_cost(a: &ActionCost, side: Side, sched: LimitSchedule) -> ActionCost {
    let base = a.clone();
    let name = format!("{}_{}", a.name(), if side == Side::Plus { "plus" } else { "minus" });
    ActionCost::new(name, a.claims(), move |tau, u, v| {
        let mut s = sched;
        // keep the left offsets inside (0, tau)
        if side == Side::Plus && s.tau0 >= tau {
            s.tau0 = 0.5 * tau;
        }
        one_sided_limit(&base, side, tau, u, v, &s)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    /// Finite `a_sup(u, v)`, with the estimate.
    MetricLike(f64),
    Diverging,
}

/// Probes `a_sup(u, v) = lim_{tau -> 0} a(tau, u, v)` along `tau_k = tau0 * factor^k`.
pub fn classify_growth(
    a: &ActionCost,
    u: &Point,
    v: &Point,
    sched: &LimitSchedule,
    cap: f64,
) -> Result<GrowthClass> {
    sched.validate()?;
    if u == v {
        return Err(Error::InvalidArgument(
            "growth is undefined on the diagonal (the limit is 0)".into(),
        ));
    }
    if !(cap > 0.0) {
        return Err(Error::InvalidArgument("cap must be positive".into()));
    }
    let mut prev = a.evaluate(sched.step(0), u, v)?;
    if prev > cap {
        return Ok(GrowthClass::Diverging);
    }
    for k in 1..sched.max_steps {
        let cur = a.evaluate(sched.step(k), u, v)?;
        if cur > cap {
            return Ok(GrowthClass::Diverging);
        }
        if sched.is_stable(prev, cur) {
            return Ok(GrowthClass::MetricLike(cur));
        }
        prev = cur;
    }
    Err(Error::NotConverged {
        last: prev,
        previous: prev,
        steps: sched.max_steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    /// `a(tau, u, v) = 0` iff `u = v`.
    Positivity,
    Symmetry,
    Concatenation,
    /// `tau -> a(tau, u, v)` non-increasing.
    Monotonicity,
}

pub const AXIOMS: [Axiom; 4] = [
    Axiom::Positivity,
    Axiom::Symmetry,
    Axiom::Concatenation,
    Axiom::Monotonicity,
];

/// Evaluation that produced a violation; `lhs` should not exceed `rhs`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub taus: Vec<f64>,
    pub points: Vec<Point>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomResult {
    pub axiom: Axiom,
    /// `max(0, lhs - rhs) / (1 + max(|lhs|, |rhs|))`; an off-diagonal zero counts as 1.
    pub worst_violation: f64,
    pub witness: Option<Witness>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AxiomReport {
    pub cost: String,
    pub tol: f64,
    pub samples: usize,
    pub results: Vec<AxiomResult>,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, axiom: Axiom) -> &AxiomResult {
        self.results
            .iter()
            .find(|r| r.axiom == axiom)
            .expect("every axiom is reported")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Sampler configuration. `tau_range` bounds the log-uniform draw of the
/// total time span.
#[derive(Clone, Debug)]
pub struct AxiomCheckOptions {
    pub n_samples: usize,
    pub tol: f64,
    pub seed: u64,
    pub tau_range: (f64, f64),
}

impl Default for AxiomCheckOptions {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            tol: 1e-9,
            seed: 0,
            tau_range: (0.05, 20.0),
        }
    }
}

#[derive(Clone, Debug)]
struct Finding {
    violation: f64,
    index: usize,
    witness: Witness,
}

#[derive(Clone, Debug, Default)]
struct Worst([Option<Finding>; 4]);

impl Worst {
    fn slot(axiom: Axiom) -> usize {
        match axiom {
            Axiom::Positivity => 0,
            Axiom::Symmetry => 1,
            Axiom::Concatenation => 2,
            Axiom::Monotonicity => 3,
        }
    }

    fn offer(&mut self, axiom: Axiom, f: Finding) {
        let slot = &mut self.0[Self::slot(axiom)];
        let replace = match slot {
            None => true,
            Some(cur) => {
                f.violation > cur.violation || (f.violation == cur.violation && f.index < cur.index)
            }
        };
        if replace {
            *slot = Some(f);
        }
    }

    fn merge(mut self, other: Worst) -> Worst {
        for (axiom, f) in AXIOMS.iter().zip(other.0) {
            if let Some(f) = f {
                self.offer(*axiom, f);
            }
        }
        self
    }
}

fn normalized_excess(lhs: f64, rhs: f64) -> f64 {
    ((lhs - rhs) / (1.0 + lhs.abs().max(rhs.abs()))).max(0.0)
}

struct Probe<'a> {
    a: &'a ActionCost,
    index: usize,
    worst: Worst,
}

impl Probe<'_> {
    fn positivity(&mut self, tau: f64, u: &Point, v: &Point, value: f64) {
        let violation = if u == v {
            normalized_excess(value, 0.0)
        } else if value <= 0.0 {
            1.0
        } else {
            return;
        };
        self.push(Axiom::Positivity, violation, vec![tau], vec![u.clone(), v.clone()], value, 0.0);
    }

    fn compare(&mut self, axiom: Axiom, taus: Vec<f64>, points: Vec<Point>, lhs: f64, rhs: f64) {
        let violation = normalized_excess(lhs, rhs);
        self.push(axiom, violation, taus, points, lhs, rhs);
    }

    fn push(
        &mut self,
        axiom: Axiom,
        violation: f64,
        taus: Vec<f64>,
        points: Vec<Point>,
        lhs: f64,
        rhs: f64,
    ) {
        self.worst.offer(
            axiom,
            Finding {
                violation,
                index: self.index,
                witness: Witness {
                    taus,
                    points,
                    lhs,
                    rhs,
                },
            },
        );
    }

    fn eval(&self, tau: f64, u: &Point, v: &Point) -> Result<f64> {
        self.a.evaluate(tau, u, v)
    }
}

fn distinct_points(corpus: &[Point]) -> bool {
    corpus.iter().any(|p| p != &corpus[0])
}

fn sample_once(a: &ActionCost, corpus: &[Point], opts: &AxiomCheckOptions, index: usize) -> Result<Worst> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let (lo, hi) = opts.tau_range;
    let tau = (rng.gen_range(lo.ln()..=hi.ln())).exp();
    let s: f64 = rng.gen_range(0.1..0.9);
    let n = corpus.len();
    let u1 = &corpus[rng.gen_range(0..n)];
    let u2 = &corpus[rng.gen_range(0..n)];
    let u3 = &corpus[rng.gen_range(0..n)];
    let tau1 = s * tau;
    let tau2 = tau - tau1;

    let mut probe = Probe {
        a,
        index,
        worst: Worst::default(),
    };
    let diag = probe.eval(tau, u1, u1)?;
    probe.positivity(tau, u1, u1, diag);

    let a13 = probe.eval(tau, u1, u3)?;
    probe.positivity(tau, u1, u3, a13);
    let a31 = probe.eval(tau, u3, u1)?;
    probe.compare(
        Axiom::Symmetry,
        vec![tau],
        vec![u1.clone(), u3.clone()],
        a13.max(a31),
        a13.min(a31),
    );

    let a12 = probe.eval(tau1, u1, u2)?;
    let a23 = probe.eval(tau2, u2, u3)?;
    probe.compare(
        Axiom::Concatenation,
        vec![tau1, tau2],
        vec![u1.clone(), u2.clone(), u3.clone()],
        a13,
        a12 + a23,
    );

    let a13_short = probe.eval(tau1, u1, u3)?;
    probe.compare(
        Axiom::Monotonicity,
        vec![tau1, tau],
        vec![u1.clone(), u3.clone()],
        a13,
        a13_short,
    );
    Ok(probe.worst)
}

fn finish(a: &ActionCost, tol: f64, samples: usize, worst: Worst) -> AxiomReport {
    let results = AXIOMS
        .iter()
        .zip(worst.0)
        .map(|(axiom, f)| {
            let (worst_violation, witness) = match f {
                Some(f) => (f.violation, Some(f.witness)),
                None => (0.0, None),
            };
            AxiomResult {
                axiom: *axiom,
                worst_violation,
                pass: worst_violation <= tol,
                // witnesses are only interesting when something is off
                witness: witness.filter(|_| worst_violation > 0.0),
            }
        })
        .collect();
    AxiomReport {
        cost: a.name().to_string(),
        tol,
        samples,
        results,
    }
}

/// Seeded sampling check of the four axioms. Each sample draws its own RNG
/// stream, so the report does not depend on the worker count.
pub fn check_axioms(
    a: &ActionCost,
    corpus: &[Point],
    n_samples: usize,
    tol: f64,
    rng_seed: u64,
) -> Result<AxiomReport> {
    check_axioms_with(
        a,
        corpus,
        &AxiomCheckOptions {
            n_samples,
            tol,
            seed: rng_seed,
            ..Default::default()
        },
    )
}

pub fn check_axioms_with(a: &ActionCost, corpus: &[Point], opts: &AxiomCheckOptions) -> Result<AxiomReport> {
    if corpus.len() < 2 || !distinct_points(corpus) {
        return Err(Error::InvalidArgument(
            "axiom corpus needs at least two distinct points".into(),
        ));
    }
    let (lo, hi) = opts.tau_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument("invalid tau range".into()));
    }
    let worst = (0..opts.n_samples)
        .into_par_iter()
        .map(|i| sample_once(a, corpus, opts, i))
        .try_reduce(Worst::default, |x, y| Ok(x.merge(y)))?;
    Ok(finish(a, opts.tol, opts.n_samples, worst))
}

/// Exhaustive check over all point triples of `points` and all pairs drawn
/// from `tau_grid`. Intended for finite spaces.
pub fn check_axioms_exhaustive(
    a: &ActionCost,
    points: &[Point],
    tau_grid: &[f64],
    tol: f64,
) -> Result<AxiomReport> {
    if points.len() < 2 || !distinct_points(points) {
        return Err(Error::InvalidArgument(
            "axiom corpus needs at least two distinct points".into(),
        ));
    }
    if tau_grid.is_empty() {
        return Err(Error::InvalidArgument("empty tau grid".into()));
    }
    let mut taus = tau_grid.to_vec();
    taus.sort_by(f64::total_cmp);
    let n = points.len();
    let worst = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Worst> {
            let mut probe = Probe {
                a,
                index: i,
                worst: Worst::default(),
            };
            let u = &points[i];
            for (ti, &t) in taus.iter().enumerate() {
                for v in points {
                    let auv = probe.eval(t, u, v)?;
                    probe.positivity(t, u, v, auv);
                    let avu = probe.eval(t, v, u)?;
                    probe.compare(
                        Axiom::Symmetry,
                        vec![t],
                        vec![u.clone(), v.clone()],
                        auv.max(avu),
                        auv.min(avu),
                    );
                    if let Some(&t_next) = taus.get(ti + 1) {
                        let longer = probe.eval(t_next, u, v)?;
                        probe.compare(
                            Axiom::Monotonicity,
                            vec![t, t_next],
                            vec![u.clone(), v.clone()],
                            longer,
                            auv,
                        );
                    }
                    for &t2 in &taus {
                        for w in points {
                            let whole = probe.eval(t + t2, u, w)?;
                            let split = auv + probe.eval(t2, v, w)?;
                            probe.compare(
                                Axiom::Concatenation,
                                vec![t, t2],
                                vec![u.clone(), v.clone(), w.clone()],
                                whole,
                                split,
                            );
                        }
                    }
                }
            }
            Ok(probe.worst)
        })
        .try_reduce(Worst::default, |x, y| Ok(x.merge(y)))?;
    let count = n * n * n * taus.len() * taus.len();
    Ok(finish(a, tol, count, worst))
}
