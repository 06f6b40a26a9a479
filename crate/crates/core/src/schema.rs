//! JSON descriptions of metrics, costs, integrands and energies.
//!
//! ```json
//! {"kind": "from_metric", "metric": {"kind": "euclidean", "p": 2}, "psi": {"kind": "power", "p": 2}}
//! ```

use serde::{Deserialize, Serialize};

use crate::action_core::ActionCost;
use crate::cost_constructors::{
    concave_compose, convex_transform, from_metric, linear_combination, rescale, truncated_metric_sup,
    ConcaveCombiner, ConvexGauge, MetricFamily,
};
use crate::error::{Error, Result};
use crate::mm_solver::Energy;
use crate::state_space::{FiniteSpaceDoc, Metric};
use crate::trajectory_opt::{wrap_as_action_cost, Integrand, MinimizerConfig};

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean {
        p: f64,
        #[serde(default = "one")]
        weight: f64,
    },
    Table {
        n: usize,
        d: Vec<Vec<f64>>,
    },
}

impl MetricSpec {
    pub fn build(&self) -> Result<Metric> {
        match self {
            MetricSpec::Euclidean { p, weight } => Metric::weighted_euclidean(*p, *weight),
            MetricSpec::Table { n, d } => FiniteSpaceDoc { n: *n, d: d.clone() }.into_metric(),
        }
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self {
            MetricSpec::Table { n, .. } => Some(*n),
            MetricSpec::Euclidean { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CombinerSpec {
    Sqrt,
    Root { q: f64 },
    Truncation { lambda: f64 },
    SumOfRoots { arity: usize },
}

impl CombinerSpec {
    pub fn build(&self) -> Result<ConcaveCombiner> {
        match self {
            CombinerSpec::Sqrt => Ok(ConcaveCombiner::sqrt()),
            CombinerSpec::Root { q } => ConcaveCombiner::root(*q),
            CombinerSpec::Truncation { lambda } => ConcaveCombiner::truncation(*lambda),
            CombinerSpec::SumOfRoots { arity } => Ok(ConcaveCombiner::sum_of_roots(*arity)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntegrandSpec {
    Quadratic,
    WeightedQuadratic,
}

impl IntegrandSpec {
    pub fn build(&self) -> Integrand {
        match self {
            IntegrandSpec::Quadratic => Integrand::quadratic(),
            IntegrandSpec::WeightedQuadratic => Integrand::weighted_quadratic(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedCost {
    pub theta: f64,
    pub cost: CostSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyMember {
    pub lambda: f64,
    pub metric: MetricSpec,
}

/// A cost expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    FromMetric {
        metric: MetricSpec,
        psi: ConvexGauge,
    },
    ConvexTransform {
        base: Box<CostSpec>,
        psi: ConvexGauge,
    },
    Rescale {
        base: Box<CostSpec>,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        theta: f64,
    },
    LinearCombination {
        terms: Vec<WeightedCost>,
    },
    ConcaveCompose {
        combiner: CombinerSpec,
        costs: Vec<CostSpec>,
    },
    TruncatedMetricSup {
        family: Vec<FamilyMember>,
    },
    ActionIntegral {
        integrand: IntegrandSpec,
        segments: usize,
        #[serde(default)]
        minimizer: MinimizerConfig,
    },
}

impl CostSpec {
    pub fn from_json(doc: &str) -> Result<Self> {
        Ok(serde_json::from_str(doc)?)
    }

    pub fn build(&self) -> Result<ActionCost> {
        match self {
            CostSpec::FromMetric { metric, psi } => from_metric(metric.build()?, psi.clone()),
            CostSpec::ConvexTransform { base, psi } => convex_transform(&base.build()?, psi.clone()),
            CostSpec::Rescale { base, lambda, theta } => rescale(&base.build()?, *lambda, *theta),
            CostSpec::LinearCombination { terms } => linear_combination(
                terms
                    .iter()
                    .map(|t| Ok((t.theta, t.cost.build()?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            CostSpec::ConcaveCompose { combiner, costs } => concave_compose(
                combiner.build()?,
                costs.iter().map(|c| c.build()).collect::<Result<Vec<_>>>()?,
            ),
            CostSpec::TruncatedMetricSup { family } => Ok(truncated_metric_sup(MetricFamily::new(
                family
                    .iter()
                    .map(|m| Ok((m.lambda, m.metric.build()?)))
                    .collect::<Result<Vec<_>>>()?,
            )?)),
            CostSpec::ActionIntegral {
                integrand,
                segments,
                minimizer,
            } => wrap_as_action_cost(integrand.build(), *segments, *minimizer),
        }
    }

    /// Number of states when every metric in the tree is a finite table of
    /// one common size; `None` for Euclidean trees.
    pub fn cardinality(&self) -> Result<Option<usize>> {
        let mut found: Vec<Option<usize>> = Vec::new();
        self.collect_cardinalities(&mut found);
        let first = found.first().copied().flatten();
        if found.iter().any(|c| *c != first) {
            return Err(Error::SpaceMismatch("cost mixes different state spaces".into()));
        }
        Ok(first)
    }

    fn collect_cardinalities(&self, out: &mut Vec<Option<usize>>) {
        match self {
            CostSpec::FromMetric { metric, .. } => out.push(metric.cardinality()),
            CostSpec::ConvexTransform { base, .. } | CostSpec::Rescale { base, .. } => base.collect_cardinalities(out),
            CostSpec::LinearCombination { terms } => terms.iter().for_each(|t| t.cost.collect_cardinalities(out)),
            CostSpec::ConcaveCompose { costs, .. } => costs.iter().for_each(|c| c.collect_cardinalities(out)),
            CostSpec::TruncatedMetricSup { family } => family.iter().for_each(|m| out.push(m.metric.cardinality())),
            CostSpec::ActionIntegral { .. } => out.push(None),
        }
    }

    /// Closed form of `d_lambda(u, v)` as a multiple of `d(u, v)` for
    /// `from_metric` costs: `lambda / psi^{-1}(lambda)`.
    pub fn closed_form_factor(&self, lambda: f64) -> Option<(Metric, f64)> {
        match self {
            CostSpec::FromMetric { metric, psi } => {
                let m = metric.build().ok()?;
                let inv = psi.inverse(lambda);
                (inv > 0.0).then(|| (m, lambda / inv))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergySpec {
    Quadratic {
        center: Vec<f64>,
        #[serde(default = "one")]
        weight: f64,
    },
    Tracking {
        velocity: Vec<f64>,
    },
    Table {
        values: Vec<f64>,
    },
}

impl EnergySpec {
    pub fn build(&self) -> Result<Energy> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            EnergySpec::Quadratic { center, weight } => {
                if !finite(center) || !(weight.is_finite() && *weight > 0.0) {
                    return Err(Error::InvalidArgument("quadratic energy needs finite center and positive weight".into()));
                }
                Ok(Energy::quadratic(center.clone(), *weight))
            }
            EnergySpec::Tracking { velocity } => {
                if !finite(velocity) {
                    return Err(Error::NonFinite("tracking velocity".into()));
                }
                Ok(Energy::tracking(velocity.clone()))
            }
            EnergySpec::Table { values } => {
                if !finite(values) || values.is_empty() {
                    return Err(Error::InvalidArgument("table energy needs finite values".into()));
                }
                Ok(Energy::table(values.clone()))
            }
        }
    }
}
