//! Brute-force and exact reference estimators.
//!
//! These deliberately share no mathematics with the engine: the discrete
//! oracle rolls back a full decision tree by enumeration, the quadrature
//! oracle integrates the conditional-optimum surface directly, and the
//! nested Monte Carlo oracle simulates the observe-then-decide process at
//! two levels. Their whole purpose is to catch errors in the fast
//! linear-approximation path, so they favor transparency over speed and
//! refuse inputs big enough to make brute force dishonest.

use crate::engine::{EngineError, EviPipeline, EvidenceSpec};
use crate::expr::{EvalError, SliceLookup};
use crate::model::{probit, DecisionModel, Decision, Distribution};
use crate::sampling::{open_unit, substream, SampleConfig};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use thiserror::Error;

/// Enumeration guard: the discrete tree may not exceed this many leaves.
pub const MAX_TREE_LEAVES: f64 = 1e7;
/// Tensor-quadrature guard: at most this many state variables.
pub const MAX_QUADRATURE_VARS: usize = 4;
/// Tensor-quadrature guard: total value evaluations across both passes.
pub const MAX_QUADRATURE_EVALS: f64 = 1e8;

/// A finite-outcome analog of [`DecisionModel`] for exact tree rollback.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub variables: Vec<DiscreteVariable>,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone)]
pub struct DiscreteVariable {
    pub name: String,
    /// (value, probability) pairs; probabilities sum to 1.
    pub outcomes: Vec<(f64, f64)>,
}

/// Result of one oracle computation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEstimate {
    pub value: f64,
    /// Zero for exact methods.
    pub standard_error: f64,
    pub method: OracleMethod,
    /// Instrumented count of value-function evaluations.
    pub cost: u64,
    /// |value − value at half resolution| where the method refines a grid.
    pub convergence_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    DiscreteTree,
    Quadrature,
    NestedMc,
}

impl fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMethod::DiscreteTree => "discrete-tree",
            OracleMethod::Quadrature => "quadrature",
            OracleMethod::NestedMc => "nested-mc",
        })
    }
}

#[derive(Debug, Clone, Error)]
pub enum OracleError {
    #[error("discrete tree has {leaves:.3e} leaves, above the {MAX_TREE_LEAVES:.0e} guard")]
    StateSpaceTooLarge { leaves: f64 },
    #[error("variable '{variable}': {reason}")]
    BadProbabilities { variable: String, reason: String },
    #[error("quadrature oracle needs a normal prior on every variable; '{variable}' is not normal")]
    NonNormalPrior { variable: String },
    #[error("nested Monte Carlo needs a normal prior on observed variable '{variable}'")]
    NonNormalObserved { variable: String },
    #[error("quadrature oracle handles at most {MAX_QUADRATURE_VARS} variables, got {n}")]
    TooManyVariables { n: usize },
    #[error("quadrature needs at least 16 nodes, got {nodes}")]
    TooFewNodes { nodes: usize },
    #[error(
        "quadrature would need {evaluations:.3e} value evaluations, above the {MAX_QUADRATURE_EVALS:.0e} guard; reduce nodes"
    )]
    QuadratureWorkTooLarge { evaluations: f64 },
    #[error("{which} iteration count must be at least 100, got {got}")]
    TooFewIterations { which: &'static str, got: usize },
    #[error("unknown variable '{name}'")]
    UnknownVariable { name: String },
    #[error("evaluating decision '{decision}': {source}")]
    Evaluation {
        decision: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl DiscreteModel {
    /// Validates outcome probabilities (nonnegative, summing to 1).
    pub fn validate(&self) -> Result<(), OracleError> {
        for v in &self.variables {
            if v.outcomes.is_empty() {
                return Err(OracleError::BadProbabilities {
                    variable: v.name.clone(),
                    reason: "no outcomes".into(),
                });
            }
            let mut total = 0.0;
            for &(_, p) in &v.outcomes {
                if p < 0.0 {
                    return Err(OracleError::BadProbabilities {
                        variable: v.name.clone(),
                        reason: format!("negative probability {p}"),
                    });
                }
                total += p;
            }
            if (total - 1.0).abs() > 1e-12 {
                return Err(OracleError::BadProbabilities {
                    variable: v.name.clone(),
                    reason: format!("probabilities sum to {total}, not 1"),
                });
            }
        }
        Ok(())
    }

    fn leaf_count(&self) -> f64 {
        self.variables
            .iter()
            .map(|v| v.outcomes.len() as f64)
            .product()
    }
}

/// Exact EVPI on a finite tree by full enumeration:
/// E over observed outcomes of [max_d E(v | observed)] minus max_d E(v).
///
/// Every leaf is visited once; the reported cost is exactly
/// m · Π_i k_i value evaluations.
pub fn discrete_tree_evpi(
    dm: &DiscreteModel,
    observed: &[&str],
) -> Result<OracleEstimate, OracleError> {
    dm.validate()?;
    let leaves = dm.leaf_count();
    if leaves > MAX_TREE_LEAVES {
        return Err(OracleError::StateSpaceTooLarge { leaves });
    }
    let names: Vec<String> = dm.variables.iter().map(|v| v.name.clone()).collect();
    let observed_idx: Vec<usize> = observed
        .iter()
        .map(|o| {
            names
                .iter()
                .position(|n| n == o)
                .ok_or_else(|| OracleError::UnknownVariable {
                    name: o.to_string(),
                })
        })
        .collect::<Result<Vec<usize>, OracleError>>()?;

    let n = dm.variables.len();
    let m = dm.decisions.len();
    let radices: Vec<usize> = dm.variables.iter().map(|v| v.outcomes.len()).collect();

    let mut cost: u64 = 0;
    let mut prior_ev = vec![0.0f64; m];
    // probability-weighted value sums per observed-outcome group
    let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();

    let mut idx = vec![0usize; n];
    let mut row = vec![0.0f64; n];
    loop {
        let mut p = 1.0;
        for i in 0..n {
            let (value, prob) = dm.variables[i].outcomes[idx[i]];
            row[i] = value;
            p *= prob;
        }
        let lookup = SliceLookup {
            names: &names,
            values: &row,
        };
        let key: Vec<usize> = observed_idx.iter().map(|&i| idx[i]).collect();
        let group = groups.entry(key).or_insert_with(|| vec![0.0; m]);
        for (j, d) in dm.decisions.iter().enumerate() {
            let v = d
                .value
                .evaluate(&lookup)
                .map_err(|source| OracleError::Evaluation {
                    decision: d.name.clone(),
                    source,
                })?;
            cost += 1;
            prior_ev[j] += p * v;
            group[j] += p * v;
        }

        // mixed-radix increment over all leaves
        let mut carry = true;
        for i in (0..n).rev() {
            if carry {
                idx[i] += 1;
                if idx[i] == radices[i] {
                    idx[i] = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }

    // max of probability-weighted sums = group probability times the max
    // conditional mean, so the group probabilities never need dividing out
    let informed: f64 = groups
        .values()
        .map(|evs| evs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    let uninformed = prior_ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    Ok(OracleEstimate {
        value: informed - uninformed,
        standard_error: 0.0,
        method: OracleMethod::DiscreteTree,
        cost,
        convergence_gap: None,
    })
}

/// 16-point Gauss-Legendre nodes and weights on [-1, 1], by Newton
/// iteration on the Legendre recurrence.
fn gauss_legendre_16() -> ([f64; 16], [f64; 16]) {
    const N: usize = 16;
    let mut nodes = [0.0; N];
    let mut weights = [0.0; N];
    for i in 0..N {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence up to P_16 and its derivative at x
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 1..N {
                let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Probability-weighted quadrature grid for one normal variable: composite
/// 16-point Gauss-Legendre panels across ±12 standard deviations, with the
/// weights renormalized to sum to exactly one.
fn normal_grid(mean: f64, sd: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = nodes.div_ceil(16);
    let (gx, gw) = gauss_legendre_16();
    let lo = -12.0f64;
    let hi = 12.0f64;
    let h = (hi - lo) / panels as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut points = Vec::with_capacity(panels * 16);
    let mut weights = Vec::with_capacity(panels * 16);
    for p in 0..panels {
        let a = lo + p as f64 * h;
        for k in 0..16 {
            let u = a + (gx[k] + 1.0) * 0.5 * h;
            points.push(mean + sd * u);
            weights.push(gw[k] * 0.5 * h * norm * (-0.5 * u * u).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    (points, weights)
}

/// Exact-in-the-limit EVPI for perfect information on one variable of an
/// all-normal model, by direct numerical integration: an outer grid over
/// the observed variable, a tensor grid over the rest.
pub fn quadrature_evpi(
    model: &DecisionModel,
    variable: &str,
    nodes: usize,
) -> Result<OracleEstimate, OracleError> {
    let n = model.variables.len();
    if n > MAX_QUADRATURE_VARS {
        return Err(OracleError::TooManyVariables { n });
    }
    if nodes < 16 {
        return Err(OracleError::TooFewNodes { nodes });
    }
    for v in &model.variables {
        if !matches!(v.distribution, Distribution::Normal { .. }) {
            return Err(OracleError::NonNormalPrior {
                variable: v.name.clone(),
            });
        }
    }
    let target = model
        .variable_index(variable)
        .ok_or_else(|| OracleError::UnknownVariable {
            name: variable.to_string(),
        })?;

    let m = model.decisions.len() as f64;
    let full_points = (nodes.div_ceil(16) * 16) as f64;
    let half_points = ((nodes / 2).max(16).div_ceil(16) * 16) as f64;
    let work = m * (full_points.powi(n as i32) + half_points.powi(n as i32));
    if work > MAX_QUADRATURE_EVALS {
        return Err(OracleError::QuadratureWorkTooLarge { evaluations: work });
    }

    let mut cost = 0u64;
    let half = quadrature_pass(model, target, (nodes / 2).max(16), &mut cost)?;
    let full = quadrature_pass(model, target, nodes, &mut cost)?;
    Ok(OracleEstimate {
        value: full,
        standard_error: 0.0,
        method: OracleMethod::Quadrature,
        cost,
        convergence_gap: Some((full - half).abs()),
    })
}

fn quadrature_pass(
    model: &DecisionModel,
    target: usize,
    nodes: usize,
    cost: &mut u64,
) -> Result<f64, OracleError> {
    let n = model.variables.len();
    let m = model.decisions.len();
    let names = model.variable_names();

    let grids: Vec<(Vec<f64>, Vec<f64>)> = model
        .variables
        .iter()
        .map(|v| match v.distribution {
            Distribution::Normal { mean, sd } => normal_grid(mean, sd, nodes),
            _ => unreachable!("normality checked by caller"),
        })
        .collect();

    let inner_dims: Vec<usize> = (0..n).filter(|&i| i != target).collect();
    let inner_total: usize = inner_dims.iter().map(|&i| grids[i].0.len()).product();

    let (outer_points, outer_weights) = &grids[target];
    let mut expected_conditional_max = 0.0; // Σ_o w_o · max_d E[v_d | x_o]
    let mut prior_ev = vec![0.0f64; m]; // Σ_o w_o · E[v_d | x_o]
    let mut row = vec![0.0f64; n];

    for (xo, wo) in outer_points.iter().zip(outer_weights) {
        row[target] = *xo;
        let mut cond_ev = vec![0.0f64; m];
        for flat in 0..inner_total {
            let mut rem = flat;
            let mut w_inner = 1.0;
            for &dim in &inner_dims {
                let k = grids[dim].0.len();
                let at = rem % k;
                rem /= k;
                row[dim] = grids[dim].0[at];
                w_inner *= grids[dim].1[at];
            }
            let lookup = SliceLookup {
                names: &names,
                values: &row,
            };
            for (j, d) in model.decisions.iter().enumerate() {
                let v = d
                    .value
                    .evaluate(&lookup)
                    .map_err(|source| OracleError::Evaluation {
                        decision: d.name.clone(),
                        source,
                    })?;
                *cost += 1;
                cond_ev[j] += w_inner * v;
            }
        }
        let best = cond_ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        expected_conditional_max += wo * best;
        for j in 0..m {
            prior_ev[j] += wo * cond_ev[j];
        }
    }

    let uninformed = prior_ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(expected_conditional_max - uninformed)
}

/// Two-level Monte Carlo estimate of EVI under an [`EvidenceSpec`].
///
/// Outer loop: draw what the evidence could reveal — the posterior mean of
/// each observed variable, from a normal with variance σ'²·(r−1)/r (all of
/// σ'² for perfect information). Inner loop: estimate each decision's
/// conditional expected value given that revelation, drawing observed
/// variables from their residual posterior (variance σ'²/r, zero when
/// perfect) and untouched variables from their full prior.
pub fn nested_mc_evi(
    model: &DecisionModel,
    evidence: &EvidenceSpec,
    outer: usize,
    inner: usize,
    seed: u64,
) -> Result<OracleEstimate, OracleError> {
    if outer < 100 {
        return Err(OracleError::TooFewIterations {
            which: "outer",
            got: outer,
        });
    }
    if inner < 100 {
        return Err(OracleError::TooFewIterations {
            which: "inner",
            got: inner,
        });
    }
    let names = model.variable_names();
    evidence.check(&names)?;

    // per-variable sampling plan: (posterior-mean sd, residual sd) for
    // observed variables, full-prior passthrough for the rest
    enum Plan {
        Prior(Distribution),
        Observed {
            mean: f64,
            outer_sd: f64,
            residual_sd: f64,
        },
    }
    let plans: Vec<Plan> = model
        .variables
        .iter()
        .map(|v| {
            let r = if v.distribution.variance() == 0.0 {
                None
            } else if evidence.perfect.contains(&v.name) {
                Some(f64::INFINITY)
            } else {
                evidence.partial.get(&v.name).copied()
            };
            match r {
                None => Ok(Plan::Prior(v.distribution.clone())),
                Some(r) => match v.distribution {
                    Distribution::Normal { mean, sd } => {
                        let (outer_sd, residual_sd) = if r.is_infinite() {
                            (sd, 0.0)
                        } else {
                            (sd * ((r - 1.0) / r).sqrt(), sd / r.sqrt())
                        };
                        Ok(Plan::Observed {
                            mean,
                            outer_sd,
                            residual_sd,
                        })
                    }
                    _ => Err(OracleError::NonNormalObserved {
                        variable: v.name.clone(),
                    }),
                },
            }
        })
        .collect::<Result<Vec<Plan>, OracleError>>()?;

    let m = model.decisions.len();
    let n = model.variables.len();

    // one independent substream per outer iteration: parallel execution
    // cannot reorder anything observable
    let per_outer: Vec<Result<Vec<f64>, OracleError>> = (0..outer)
        .into_par_iter()
        .map(|o| {
            let mut rng = substream(seed, &format!("nested-mc:{o}"));
            // what the evidence reveals this iteration
            let revealed: Vec<Option<f64>> = plans
                .iter()
                .map(|p| match p {
                    Plan::Prior(_) => None,
                    Plan::Observed { mean, outer_sd, .. } => {
                        Some(mean + outer_sd * probit(open_unit(&mut rng)))
                    }
                })
                .collect();
            let mut sums = vec![0.0f64; m];
            let mut row = vec![0.0f64; n];
            for _ in 0..inner {
                for i in 0..n {
                    row[i] = match (&plans[i], revealed[i]) {
                        (Plan::Prior(dist), _) => dist.quantile(open_unit(&mut rng)),
                        (Plan::Observed { residual_sd, .. }, Some(center)) => {
                            if *residual_sd == 0.0 {
                                center
                            } else {
                                center + residual_sd * probit(open_unit(&mut rng))
                            }
                        }
                        (Plan::Observed { .. }, None) => unreachable!(),
                    };
                }
                let lookup = SliceLookup {
                    names: &names,
                    values: &row,
                };
                for (j, d) in model.decisions.iter().enumerate() {
                    let v = d.value.evaluate(&lookup).map_err(|source| {
                        OracleError::Evaluation {
                            decision: d.name.clone(),
                            source,
                        }
                    })?;
                    sums[j] += v;
                }
            }
            for s in &mut sums {
                *s /= inner as f64;
            }
            Ok(sums)
        })
        .collect();

    let mut conditional_means = Vec::with_capacity(outer);
    for r in per_outer {
        conditional_means.push(r?);
    }

    let outer_f = outer as f64;
    let best_given: Vec<f64> = conditional_means
        .iter()
        .map(|evs| evs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let informed = best_given.iter().sum::<f64>() / outer_f;
    let mut prior_ev = vec![0.0f64; m];
    for evs in &conditional_means {
        for j in 0..m {
            prior_ev[j] += evs[j];
        }
    }
    let uninformed = prior_ev
        .iter()
        .map(|s| s / outer_f)
        .fold(f64::NEG_INFINITY, f64::max);

    let var_best = best_given
        .iter()
        .map(|b| (b - informed).powi(2))
        .sum::<f64>()
        / (outer_f - 1.0);

    Ok(OracleEstimate {
        value: informed - uninformed,
        standard_error: (var_best / outer_f).sqrt(),
        method: OracleMethod::NestedMc,
        cost: (outer * inner * m) as u64,
        convergence_gap: None,
    })
}

/// One row of the additivity report.
#[derive(Debug, Clone, Serialize)]
pub struct AdditivityRow {
    pub label: String,
    pub evi_engine: f64,
    pub evi_oracle: f64,
    pub oracle_se: f64,
}

/// Per-variable EVI next to its nested-MC cross-check, with a sum row and
/// an all-variables row. Records the numbers; asserts nothing about how
/// they relate — per-variable values need not add up to the joint value.
#[derive(Debug, Clone, Serialize)]
pub struct AdditivityReport {
    pub rows: Vec<AdditivityRow>,
    pub outer: usize,
    pub inner: usize,
}

impl AdditivityReport {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "variable,evi_engine,evi_oracle,oracle_se")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e}",
                row.label, row.evi_engine, row.evi_oracle, row.oracle_se
            )?;
        }
        Ok(())
    }
}

/// Runs the engine once, then per-variable perfect-information queries with
/// nested-MC cross-checks; n + 2 rows (each variable, their sum, all at once).
pub fn additivity_report(
    model: &DecisionModel,
    config: &SampleConfig,
) -> Result<AdditivityReport, OracleError> {
    let (outer, inner) = (200, 200);
    let pipeline = EviPipeline::new(model, config)?;
    let mut rows = Vec::new();
    let mut engine_sum = 0.0;
    let mut oracle_sum = 0.0;
    let mut se_sq_sum = 0.0;
    for v in &model.variables {
        let spec = EvidenceSpec::perfect_on([v.name.as_str()]);
        let engine = pipeline.query(&spec).map_err(OracleError::Engine)?.evi;
        let oracle = nested_mc_evi(model, &spec, outer, inner, config.seed)?;
        engine_sum += engine;
        oracle_sum += oracle.value;
        se_sq_sum += oracle.standard_error * oracle.standard_error;
        rows.push(AdditivityRow {
            label: v.name.clone(),
            evi_engine: engine,
            evi_oracle: oracle.value,
            oracle_se: oracle.standard_error,
        });
    }
    rows.push(AdditivityRow {
        label: "sum".into(),
        evi_engine: engine_sum,
        evi_oracle: oracle_sum,
        oracle_se: se_sq_sum.sqrt(),
    });
    let all = EvidenceSpec::perfect_on(model.variables.iter().map(|v| v.name.as_str()));
    let engine_all = pipeline.query(&all).map_err(OracleError::Engine)?.evi;
    let oracle_all = nested_mc_evi(model, &all, outer, inner, config.seed)?;
    rows.push(AdditivityRow {
        label: "all".into(),
        evi_engine: engine_all,
        evi_oracle: oracle_all.value,
        oracle_se: oracle_all.standard_error,
    });
    Ok(AdditivityReport { rows, outer, inner })
}
