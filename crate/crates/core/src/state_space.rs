//! State spaces and the metrics every cost is built on.
//!
//! Two kinds of points are supported: Euclidean coordinate vectors and
//! indices into a finite space whose metric is given by a distance table.
//! Inputs are validated once at construction so that downstream bisection
//! and optimization code only ever sees finite, totally ordered values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An element of the state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Point {
    Euclidean(Vec<f64>),
    Finite(usize),
}

impl Point {
    pub fn euclidean(coords: Vec<f64>) -> Result<Self> {
        if let Some(x) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {x}")));
        }
        Ok(Point::Euclidean(coords))
    }

    /// One-dimensional Euclidean point. Panics on non-finite input.
    pub fn scalar(x: f64) -> Self {
        assert!(x.is_finite(), "scalar point must be finite");
        Point::Euclidean(vec![x])
    }

    pub fn finite(index: usize) -> Self {
        Point::Finite(index)
    }

    pub fn coords(&self) -> Option<&[f64]> {
        match self {
            Point::Euclidean(c) => Some(c),
            Point::Finite(_) => None,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Point::Finite(i) => Some(*i),
            Point::Euclidean(_) => None,
        }
    }

    pub fn is_finite_space(&self) -> bool {
        matches!(self, Point::Finite(_))
    }

    pub(crate) fn check_finite_coords(&self) -> Result<()> {
        if let Point::Euclidean(c) = self {
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("point coordinate".into()));
            }
        }
        Ok(())
    }

    /// Coordinates of a Euclidean point, or a typed error for finite points.
    pub fn require_coords(&self) -> Result<&[f64]> {
        self.coords()
            .ok_or_else(|| Error::SpaceMismatch("expected a Euclidean point".into()))
    }
}

/// Coordinate-wise affine combination `(1 - s) * u + s * v`.
pub fn lerp(u: &[f64], v: &[f64], s: f64) -> Vec<f64> {
    u.iter().zip(v).map(|(a, b)| a + s * (b - a)).collect()
}

/// Euclidean (l2) distance between two coordinate vectors.
pub fn l2(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// A validated, symmetric distance table on `{0, .., n-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    n: usize,
    d: Vec<f64>,
}

impl DistanceTable {
    /// Builds the table and validates the metric axioms exhaustively (O(n^3)).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let table = Self::from_rows_unchecked(rows)?;
        let report = validate_table(&table);
        if !report.is_valid() {
            return Err(Error::InvalidMetric(report.summary()));
        }
        Ok(table.symmetrized())
    }

    /// Builds a table checking only shape and finiteness. Intended for
    /// diagnostics on candidate tables that may violate the axioms.
    pub fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidMetric("empty table".into()));
        }
        let mut d = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    left: n,
                    right: row.len(),
                });
            }
            for x in row {
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("table entry {x}")));
                }
                d.push(x);
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.d.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    // Mirror the upper triangle so lookups are bit-identical under swap.
    fn symmetrized(mut self) -> Self {
        for i in 0..self.n {
            for j in 0..i {
                self.d[i * self.n + j] = self.d[j * self.n + i];
            }
        }
        self
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            d: self.d.iter().map(|x| x * c).collect(),
        }
    }
}

/// Document format for finite spaces: `{"n": int, "d": [[...]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSpaceDoc {
    pub n: usize,
    pub d: Vec<Vec<f64>>,
}

impl FiniteSpaceDoc {
    pub fn into_metric(self) -> Result<Metric> {
        if self.d.len() != self.n {
            return Err(Error::DimensionMismatch {
                left: self.n,
                right: self.d.len(),
            });
        }
        Ok(Metric::WeightedTable(DistanceTable::new(self.d)?))
    }
}

/// A metric on Euclidean space or on a finite space.
#[derive(Clone, Debug, PartialEq)]
pub enum Metric {
    /// `weight * ||u - v||_p`
    EuclideanNorm { p: f64, weight: f64 },
    WeightedTable(DistanceTable),
}

impl Metric {
    pub fn euclidean(p: f64) -> Result<Self> {
        Self::weighted_euclidean(p, 1.0)
    }

    pub fn weighted_euclidean(p: f64, weight: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::InvalidMetric(format!("norm exponent p = {p} must be >= 1")));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidMetric(format!("weight {weight} must be positive")));
        }
        Ok(Metric::EuclideanNorm { p, weight })
    }

    pub fn table(rows: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Metric::WeightedTable(DistanceTable::new(rows)?))
    }

    /// Skips axiom validation; only for feeding [`validate_metric`].
    pub fn table_unchecked(rows: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Metric::WeightedTable(DistanceTable::from_rows_unchecked(rows)?))
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let doc: FiniteSpaceDoc = serde_json::from_str(doc)?;
        doc.into_metric()
    }

    /// Cardinality of a finite space, `None` for Euclidean metrics.
    pub fn cardinality(&self) -> Option<usize> {
        match self {
            Metric::WeightedTable(t) => Some(t.len()),
            Metric::EuclideanNorm { .. } => None,
        }
    }

    /// The metric multiplied by a positive constant.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("scale {c} must be positive")));
        }
        Ok(match self {
            Metric::EuclideanNorm { p, weight } => Metric::EuclideanNorm {
                p: *p,
                weight: weight * c,
            },
            Metric::WeightedTable(t) => Metric::WeightedTable(t.scaled(c)),
        })
    }

    pub fn distance(&self, u: &Point, v: &Point) -> Result<f64> {
        match (self, u, v) {
            (Metric::EuclideanNorm { p, weight }, Point::Euclidean(a), Point::Euclidean(b)) => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch {
                        left: a.len(),
                        right: b.len(),
                    });
                }
                let norm = if *p == 2.0 {
                    l2(a, b)
                } else if *p == 1.0 {
                    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
                } else {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y).abs().powf(*p))
                        .sum::<f64>()
                        .powf(1.0 / p)
                };
                if !norm.is_finite() {
                    return Err(Error::NonFinite("distance".into()));
                }
                Ok(weight * norm)
            }
            (Metric::WeightedTable(t), Point::Finite(i), Point::Finite(j)) => {
                if *i >= t.len() || *j >= t.len() {
                    return Err(Error::SpaceMismatch(format!(
                        "index {} out of range for a space with {} points",
                        i.max(j),
                        t.len()
                    )));
                }
                Ok(t.get(*i, *j))
            }
            _ => Err(Error::SpaceMismatch(
                "point kind does not match the metric".into(),
            )),
        }
    }
}

/// Which metric axiom a violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricAxiom {
    Symmetry,
    ZeroDiagonal,
    Positivity,
    Triangle,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricViolation {
    pub axiom: MetricAxiom,
    pub magnitude: f64,
    pub points: Vec<Point>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    /// Worst violation per axiom, at most one entry per axiom.
    pub violations: Vec<MetricViolation>,
    pub checked: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn worst(&self, axiom: MetricAxiom) -> Option<&MetricViolation> {
        self.violations.iter().find(|v| v.axiom == axiom)
    }

    pub fn summary(&self) -> String {
        if self.violations.is_empty() {
            return "no violations".into();
        }
        self.violations
            .iter()
            .map(|v| format!("{:?} by {:e} at {:?}", v.axiom, v.magnitude, v.points))
            .collect::<Vec<_>>()
            .join("; ")
    }

    fn record(&mut self, axiom: MetricAxiom, magnitude: f64, points: Vec<Point>) {
        match self.violations.iter_mut().find(|v| v.axiom == axiom) {
            Some(v) if v.magnitude >= magnitude => {}
            Some(v) => {
                v.magnitude = magnitude;
                v.points = points;
            }
            None => self.violations.push(MetricViolation {
                axiom,
                magnitude,
                points,
            }),
        }
    }
}

const TRIANGLE_SLACK: f64 = 1e-12;

/// Exhaustive axiom check of a distance table over all pairs and triples.
pub fn validate_table(t: &DistanceTable) -> ValidationReport {
    let n = t.len();
    let mut report = ValidationReport::default();
    let pt = Point::Finite;
    for i in 0..n {
        let dii = t.get(i, i);
        if dii != 0.0 {
            report.record(MetricAxiom::ZeroDiagonal, dii.abs(), vec![pt(i)]);
        }
        for j in 0..n {
            let (dij, dji) = (t.get(i, j), t.get(j, i));
            let asym = (dij - dji).abs();
            if asym > TRIANGLE_SLACK * (1.0 + dij.abs().max(dji.abs())) {
                report.record(MetricAxiom::Symmetry, asym, vec![pt(i), pt(j)]);
            }
            if i != j && dij <= 0.0 {
                report.record(MetricAxiom::Positivity, -dij, vec![pt(i), pt(j)]);
            }
            for k in 0..n {
                let excess = t.get(i, k) - t.get(i, j) - t.get(j, k);
                if excess > TRIANGLE_SLACK {
                    report.record(MetricAxiom::Triangle, excess, vec![pt(i), pt(j), pt(k)]);
                }
            }
        }
    }
    report.checked = n * n * n;
    report
}

/// Checks symmetry, zero diagonal, positivity and the triangle inequality
/// on the supplied triples `(u, v, w)`.
pub fn validate_metric(m: &Metric, samples: &[(Point, Point, Point)]) -> Result<ValidationReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    let mut report = ValidationReport::default();
    for (u, v, w) in samples {
        for x in [u, v, w] {
            let dxx = m.distance(x, x)?;
            if dxx != 0.0 {
                report.record(MetricAxiom::ZeroDiagonal, dxx.abs(), vec![x.clone()]);
            }
        }
        let duv = m.distance(u, v)?;
        let dvu = m.distance(v, u)?;
        let asym = (duv - dvu).abs();
        if asym > 1e-15 * (1.0 + duv.abs()) {
            report.record(MetricAxiom::Symmetry, asym, vec![u.clone(), v.clone()]);
        }
        if u != v && duv <= 0.0 {
            report.record(MetricAxiom::Positivity, -duv, vec![u.clone(), v.clone()]);
        }
        let rhs = duv + m.distance(v, w)?;
        let excess = m.distance(u, w)? - rhs;
        if excess > TRIANGLE_SLACK * rhs.max(1.0) {
            report.record(
                MetricAxiom::Triangle,
                excess,
                vec![u.clone(), v.clone(), w.clone()],
            );
        }
    }
    report.checked = samples.len();
    Ok(report)
}
