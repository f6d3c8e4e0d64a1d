//! Value-of-information engine.
//!
//! The pipeline reduces "how much is it worth to learn about x before
//! deciding?" to one scalar random variable: z = v(X, d*) − v(X, d+), the
//! payoff gap between the best decision d* and the runner-up d+. With
//! linear fits v_j ≈ α_j + Σ β_ij·x_i and independent priors,
//!
//!   mean of z:      μ'_z = Σ (β_i* − β_i+)·μ'_i + (α* − α+)
//!   variance of z:  σ'²_z = Σ (β_i* − β_i+)²·σ'²_i
//!
//! so each variable owns a nonnegative slice of the variance of z.
//! Contemplated evidence moves a fraction of each slice into the
//! *preposterior* variance — the variance of the posterior mean of z:
//! the whole slice for perfect observation, (r−1)/r of it for partial
//! information with relative information multiple r, none for untouched
//! variables. The expected value of that evidence is then the linear loss
//! integral of the preposterior density: how often, and by how much, the
//! posterior mean would flip the decision to d+.

use crate::model::DecisionModel;
use crate::regression::{fit_linear, LinearFit, RegressionError};
use crate::sampling::{
    draw_scenarios, evaluate_value_table, rank_decisions, DecisionRanking, SampleConfig,
    SamplingError, ScenarioMatrix, ValueTable,
};
use serde::Serialize;
use statrs::function::erf::erfc;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

/// Prior moments of z = v(d*) − v(d+) under the fitted linear model,
/// with the per-variable variance decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZModel {
    /// Analytic prior mean of z (regression route).
    pub mu_prime: f64,
    /// Analytic prior variance of z; equals the sum of `contributions`.
    pub sigma2_prime: f64,
    /// Variance slice owned by each variable: (β_i* − β_i+)²·σ'²_i.
    pub contributions: Vec<f64>,
    /// α* − α+.
    pub delta_alpha: f64,
    /// Direct sample mean of z over the scenarios (diagnostic; should track
    /// `mu_prime` when the linear fits are good).
    pub sample_mu_prime: f64,
    /// Sample standard deviation of z (diagnostic).
    pub sample_sd: f64,
    pub variable_names: Vec<String>,
    pub star: String,
    pub plus: String,
    pub star_index: usize,
    pub plus_index: usize,
    pub seed: u64,
    pub sample_size: usize,
}

/// Contemplated evidence: perfect observation of some variables, partial
/// information (prior-to-posterior variance ratio r ≥ 1) on others.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceSpec {
    pub perfect: BTreeSet<String>,
    pub partial: BTreeMap<String, f64>,
}

/// Density of the posterior mean of z under contemplated evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreposteriorDensity {
    pub mean: f64,
    pub variance: f64,
}

/// How the loss integral was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EviMethod {
    ClosedForm,
    Quadrature,
}

impl fmt::Display for EviMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EviMethod::ClosedForm => "closed-form",
            EviMethod::Quadrature => "quadrature",
        })
    }
}

/// One answered value-of-information query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EviResult {
    /// Expected value of the evidence, in model value units; never negative.
    pub evi: f64,
    pub evidence: EvidenceSpec,
    pub preposterior: PreposteriorDensity,
    pub star: String,
    pub plus: String,
    pub method: EviMethod,
    pub seed: u64,
    pub sample_size: usize,
}

#[derive(Debug, Clone, Error)]
pub enum EngineError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("fitting decision '{decision}': {source} (raising the sample size may help)")]
    Regression {
        decision: String,
        source: RegressionError,
    },
    #[error("fit for '{which}' has {got} slope(s) but the model has {want} variable(s)")]
    DimensionMismatch {
        which: String,
        got: usize,
        want: usize,
    },
    #[error("evidence references unknown variable '{name}'")]
    UnknownEvidenceVariable { name: String },
    #[error("variable '{variable}' appears as both perfect and partial evidence")]
    OverlappingEvidence { variable: String },
    #[error("relative information multiple for '{variable}' must be ≥ 1, got {r}")]
    RimBelowOne { variable: String, r: f64 },
    #[error("bad evidence spec '{text}': {reason}")]
    EvidenceSyntax { text: String, reason: String },
    #[error("variance must be nonnegative, got {0}")]
    NegativeVariance(f64),
    #[error("quadrature requires positive variance, got {0}")]
    QuadratureNeedsVariance(f64),
    #[error("quadrature needs at least 16 panels, got {0}")]
    TooFewPanels(usize),
}

impl EvidenceSpec {
    /// No evidence at all.
    pub fn none() -> Self {
        EvidenceSpec {
            perfect: BTreeSet::new(),
            partial: BTreeMap::new(),
        }
    }

    /// Perfect observation of the given variables.
    pub fn perfect_on<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        EvidenceSpec {
            perfect: names.into_iter().map(Into::into).collect(),
            partial: BTreeMap::new(),
        }
    }

    /// Partial information with ratio `r` on a single variable.
    pub fn partial_on(name: impl Into<String>, r: f64) -> Self {
        let mut partial = BTreeMap::new();
        partial.insert(name.into(), r);
        EvidenceSpec {
            perfect: BTreeSet::new(),
            partial,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.perfect.is_empty() && self.partial.is_empty()
    }

    /// Parses the query syntax: `perfect:v1,v2` and `rim:v1=2,v3=10`,
    /// combinable with `;` — e.g. `perfect:x1;rim:x2=4`.
    pub fn parse(text: &str) -> Result<Self, EngineError> {
        let bad = |reason: &str| EngineError::EvidenceSyntax {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let mut spec = EvidenceSpec::none();
        if text.trim().is_empty() {
            return Err(bad("empty query"));
        }
        for part in text.split(';') {
            let part = part.trim();
            if let Some(list) = part.strip_prefix("perfect:") {
                for name in list.split(',') {
                    let name = name.trim();
                    if name.is_empty() {
                        return Err(bad("empty variable name in perfect list"));
                    }
                    if !spec.perfect.insert(name.to_string()) {
                        return Err(bad(&format!("variable '{name}' listed twice")));
                    }
                }
            } else if let Some(list) = part.strip_prefix("rim:") {
                for item in list.split(',') {
                    let item = item.trim();
                    let (name, value) = item
                        .split_once('=')
                        .ok_or_else(|| bad(&format!("expected name=ratio, got '{item}'")))?;
                    let name = name.trim();
                    if name.is_empty() {
                        return Err(bad("empty variable name in rim list"));
                    }
                    let r: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| bad(&format!("'{}' is not a number", value.trim())))?;
                    if spec.partial.insert(name.to_string(), r).is_some() {
                        return Err(bad(&format!("variable '{name}' listed twice")));
                    }
                }
            } else {
                return Err(bad(&format!(
                    "expected 'perfect:...' or 'rim:...', got '{part}'"
                )));
            }
        }
        for name in &spec.perfect {
            if spec.partial.contains_key(name) {
                return Err(EngineError::OverlappingEvidence {
                    variable: name.clone(),
                });
            }
        }
        Ok(spec)
    }

    /// Canonical text form; parses back to an equal spec.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.perfect.is_empty() {
            let names: Vec<&str> = self.perfect.iter().map(String::as_str).collect();
            parts.push(format!("perfect:{}", names.join(",")));
        }
        if !self.partial.is_empty() {
            let items: Vec<String> = self
                .partial
                .iter()
                .map(|(n, r)| format!("{n}={r}"))
                .collect();
            parts.push(format!("rim:{}", items.join(",")));
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join(";")
        }
    }

    /// Validates the spec against a variable list.
    pub fn check(&self, variable_names: &[String]) -> Result<(), EngineError> {
        for name in self.perfect.iter().chain(self.partial.keys()) {
            if !variable_names.iter().any(|v| v == name) {
                return Err(EngineError::UnknownEvidenceVariable { name: name.clone() });
            }
        }
        for name in &self.perfect {
            if self.partial.contains_key(name) {
                return Err(EngineError::OverlappingEvidence {
                    variable: name.clone(),
                });
            }
        }
        for (name, &r) in &self.partial {
            if !(r >= 1.0) {
                return Err(EngineError::RimBelowOne {
                    variable: name.clone(),
                    r,
                });
            }
        }
        Ok(())
    }

    /// Fraction of a variable's variance slice that moves into the
    /// preposterior variance under this evidence.
    fn resolved_fraction(&self, name: &str) -> f64 {
        if self.perfect.contains(name) {
            1.0
        } else if let Some(&r) = self.partial.get(name) {
            if r.is_infinite() {
                1.0
            } else {
                (r - 1.0) / r
            }
        } else {
            0.0
        }
    }
}

/// Builds the z-model from the fits of the top two decisions.
///
/// Prior means and variances of the state variables enter analytically
/// from their distributions, not from sample moments, so the only Monte
/// Carlo noise in the result comes through the fitted coefficients.
pub fn build_z_model(
    fit_star: &LinearFit,
    fit_plus: &LinearFit,
    ranking: &DecisionRanking,
    model: &DecisionModel,
    table: &ValueTable,
) -> Result<ZModel, EngineError> {
    let n = model.variables.len();
    for (which, fit) in [("d*", fit_star), ("d+", fit_plus)] {
        if fit.betas.len() != n {
            return Err(EngineError::DimensionMismatch {
                which: which.to_string(),
                got: fit.betas.len(),
                want: n,
            });
        }
    }

    let delta_alpha = fit_star.alpha - fit_plus.alpha;
    let mut mu_prime = delta_alpha;
    let mut contributions = Vec::with_capacity(n);
    let mut sigma2_prime = 0.0;
    for (i, v) in model.variables.iter().enumerate() {
        let delta_beta = fit_star.betas[i] - fit_plus.betas[i];
        mu_prime += delta_beta * v.distribution.mean();
        let contribution = delta_beta * delta_beta * v.distribution.variance();
        sigma2_prime += contribution;
        contributions.push(contribution);
    }

    let (si, pi) = (ranking.star_index, ranking.plus_index);
    let nf = table.values.len() as f64;
    let sample_mu_prime = table
        .values
        .iter()
        .map(|row| row[si] - row[pi])
        .sum::<f64>()
        / nf;
    let sample_var = table
        .values
        .iter()
        .map(|row| {
            let d = row[si] - row[pi] - sample_mu_prime;
            d * d
        })
        .sum::<f64>()
        / (nf - 1.0);

    Ok(ZModel {
        mu_prime,
        sigma2_prime,
        contributions,
        delta_alpha,
        sample_mu_prime,
        sample_sd: sample_var.sqrt(),
        variable_names: model.variable_names(),
        star: table.decision_names[si].clone(),
        plus: table.decision_names[pi].clone(),
        star_index: si,
        plus_index: pi,
        seed: table.seed,
        sample_size: table.sample_size,
    })
}

/// Variance of the posterior mean of z under the evidence; the mean is
/// untouched (iterated expectation).
pub fn preposterior_variance(
    z: &ZModel,
    evidence: &EvidenceSpec,
) -> Result<PreposteriorDensity, EngineError> {
    evidence.check(&z.variable_names)?;
    let variance = z
        .variable_names
        .iter()
        .zip(&z.contributions)
        .map(|(name, c)| evidence.resolved_fraction(name) * c)
        .sum();
    Ok(PreposteriorDensity {
        mean: z.mu_prime,
        variance,
    })
}

/// Expected posterior variance of z under the evidence — the complement of
/// [`preposterior_variance`]: unresolved slices in full, 1/r of each partial
/// slice, nothing from perfectly observed variables.
pub fn posterior_variance(z: &ZModel, evidence: &EvidenceSpec) -> Result<f64, EngineError> {
    evidence.check(&z.variable_names)?;
    Ok(z.variable_names
        .iter()
        .zip(&z.contributions)
        .map(|(name, c)| {
            let kept = if evidence.perfect.contains(name) {
                0.0
            } else if let Some(&r) = evidence.partial.get(name) {
                if r.is_infinite() {
                    0.0
                } else {
                    1.0 / r
                }
            } else {
                1.0
            };
            kept * c
        })
        .sum())
}

/// Expected shortfall ∫_{−∞}^{0} |t|·Normal(t; mean, variance) dt, the
/// linear loss integral, via the closed form s·φ(mean/s) − mean·Φ(−mean/s).
pub fn normal_loss(mean: f64, variance: f64) -> Result<f64, EngineError> {
    if variance < 0.0 {
        return Err(EngineError::NegativeVariance(variance));
    }
    let s = variance.sqrt();
    if s == 0.0 {
        return Ok((-mean).max(0.0));
    }
    let t = mean / s;
    let pdf = (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
    let cdf_neg = 0.5 * erfc(t / std::f64::consts::SQRT_2);
    Ok((s * pdf - mean * cdf_neg).max(0.0))
}

/// The same integral evaluated numerically: composite Simpson's rule over
/// the part of [mean − 12s, 0] carrying mass, in standardized coordinates.
/// A cross-check for [`normal_loss`], not a replacement.
pub fn normal_loss_quadrature(
    mean: f64,
    variance: f64,
    panels: usize,
) -> Result<f64, EngineError> {
    if panels < 16 {
        return Err(EngineError::TooFewPanels(panels));
    }
    if variance <= 0.0 {
        return Err(EngineError::QuadratureNeedsVariance(variance));
    }
    let s = variance.sqrt();
    // t = mean + s·u maps [mean − 12s, 0] to u ∈ [−12, −mean/s]; beyond
    // u = 12 the density is below 1e-31, so the cap loses nothing visible
    let lo = -12.0f64;
    let hi = (-mean / s).min(12.0);
    if hi <= lo {
        return Ok(0.0);
    }
    let f = |u: f64| {
        let t = mean + s * u;
        t.abs() * (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
    };
    let h = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let a = lo + k as f64 * h;
        let b = a + h;
        acc += (f(a) + 4.0 * f(0.5 * (a + b)) + f(b)) * h / 6.0;
    }
    Ok(acc)
}

/// Sample analog of the expected shortfall: mean over scenarios of
/// max(0, v_plus − v_star). No distributional assumption.
pub fn empirical_evpi(table: &ValueTable, ranking: &DecisionRanking) -> f64 {
    let (si, pi) = (ranking.star_index, ranking.plus_index);
    table
        .values
        .iter()
        .map(|row| (row[pi] - row[si]).max(0.0))
        .sum::<f64>()
        / table.values.len() as f64
}

/// The sample/fit stage computed once; answers any number of evidence
/// queries against the shared z-model.
#[derive(Debug, Clone)]
pub struct EviPipeline {
    pub scenarios: ScenarioMatrix,
    pub table: ValueTable,
    pub ranking: DecisionRanking,
    /// One fit per decision, in model decision order.
    pub fits: Vec<LinearFit>,
    pub z: ZModel,
}

impl EviPipeline {
    /// Runs steps 1–4: sample, evaluate, rank, fit every decision, and
    /// assemble the z-model from the top two.
    pub fn new(model: &DecisionModel, config: &SampleConfig) -> Result<Self, EngineError> {
        let scenarios = draw_scenarios(model, config)?;
        let table = evaluate_value_table(model, &scenarios)?;
        let ranking = rank_decisions(&table);
        let fits = model
            .decisions
            .iter()
            .enumerate()
            .map(|(j, d)| {
                fit_linear(&scenarios, &table.column(j)).map_err(|source| {
                    EngineError::Regression {
                        decision: d.name.clone(),
                        source,
                    }
                })
            })
            .collect::<Result<Vec<LinearFit>, EngineError>>()?;
        let z = build_z_model(
            &fits[ranking.star_index],
            &fits[ranking.plus_index],
            &ranking,
            model,
            &table,
        )?;
        Ok(EviPipeline {
            scenarios,
            table,
            ranking,
            fits,
            z,
        })
    }

    /// Answers one evidence query with the closed-form loss integral.
    pub fn query(&self, evidence: &EvidenceSpec) -> Result<EviResult, EngineError> {
        let preposterior = preposterior_variance(&self.z, evidence)?;
        let evi = normal_loss(preposterior.mean, preposterior.variance)?;
        Ok(self.result(evi, evidence, preposterior, EviMethod::ClosedForm))
    }

    /// Answers one evidence query by numerical integration of the loss.
    pub fn query_quadrature(
        &self,
        evidence: &EvidenceSpec,
        panels: usize,
    ) -> Result<EviResult, EngineError> {
        let preposterior = preposterior_variance(&self.z, evidence)?;
        let evi = if preposterior.variance == 0.0 {
            (-preposterior.mean).max(0.0)
        } else {
            normal_loss_quadrature(preposterior.mean, preposterior.variance, panels)?
        };
        Ok(self.result(evi, evidence, preposterior, EviMethod::Quadrature))
    }

    fn result(
        &self,
        evi: f64,
        evidence: &EvidenceSpec,
        preposterior: PreposteriorDensity,
        method: EviMethod,
    ) -> EviResult {
        EviResult {
            evi,
            evidence: evidence.clone(),
            preposterior,
            star: self.z.star.clone(),
            plus: self.z.plus.clone(),
            method,
            seed: self.z.seed,
            sample_size: self.z.sample_size,
        }
    }

    /// Sample shortfall estimate (no linearity or normality assumed).
    pub fn empirical_evpi(&self) -> f64 {
        empirical_evpi(&self.table, &self.ranking)
    }

    /// Gap between the regression-based mean of z and the raw sample mean,
    /// in sample standard errors. Above ~2, the linear fit is suspect.
    pub fn mean_gap_in_se(&self) -> f64 {
        let se = self.z.sample_sd / (self.z.sample_size as f64).sqrt();
        if se == 0.0 {
            0.0
        } else {
            (self.z.mu_prime - self.z.sample_mu_prime).abs() / se
        }
    }
}

/// One pipeline run + one query; convenience wrapper over [`EviPipeline`].
pub fn estimate_evi(
    model: &DecisionModel,
    config: &SampleConfig,
    evidence: &EvidenceSpec,
) -> Result<EviResult, EngineError> {
    EviPipeline::new(model, config)?.query(evidence)
}

/// The default query set: perfect information on each variable alone, in
/// model order.
pub fn default_queries(model: &DecisionModel) -> Vec<EvidenceSpec> {
    model
        .variables
        .iter()
        .map(|v| EvidenceSpec::perfect_on([v.name.as_str()]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;
    use approx::assert_relative_eq;

    const LOSS_0_1: f64 = 0.3989422804014327;
    const LOSS_01_1: f64 = 0.3509353312047147;

    fn toy_model() -> DecisionModel {
        parse_model(
            r#"{
                "variables": [
                    { "name": "x1", "distribution": { "type": "normal", "mean": 0.6, "sd": 1.0 } }
                ],
                "decisions": [
                    { "name": "act",  "value": "x1" },
                    { "name": "hold", "value": "0.5" }
                ]
            }"#,
        )
        .unwrap()
    }

    fn z_by_hand(contributions: Vec<f64>, mu: f64) -> ZModel {
        let names = (0..contributions.len()).map(|i| format!("x{i}")).collect();
        ZModel {
            mu_prime: mu,
            sigma2_prime: contributions.iter().sum(),
            contributions,
            delta_alpha: 0.0,
            sample_mu_prime: mu,
            sample_sd: 1.0,
            variable_names: names,
            star: "a".into(),
            plus: "b".into(),
            star_index: 0,
            plus_index: 1,
            seed: 0,
            sample_size: 100,
        }
    }

    #[test]
    fn closed_form_loss_reference_points() {
        assert_relative_eq!(normal_loss(0.0, 1.0).unwrap(), LOSS_0_1, epsilon = 1e-12);
        assert_relative_eq!(normal_loss(0.1, 1.0).unwrap(), LOSS_01_1, epsilon = 1e-12);
        assert_eq!(normal_loss(5.0, 0.0).unwrap(), 0.0);
        assert_eq!(normal_loss(-2.5, 0.0).unwrap(), 2.5);
        assert!(matches!(
            normal_loss(0.0, -1.0),
            Err(EngineError::NegativeVariance(_))
        ));
    }

    #[test]
    fn loss_nondecreasing_in_spread() {
        for &mean in &[0.0, 0.3, 1.7, 5.0] {
            let mut last = 0.0;
            for k in 1..100 {
                let s = k as f64 * 0.05;
                let v = normal_loss(mean, s * s).unwrap();
                assert!(v >= last - 1e-15, "mean {mean}, s {s}: {v} < {last}");
                last = v;
            }
        }
    }

    #[test]
    fn quadrature_converges_to_closed_form() {
        for &(mean, var) in &[(0.0, 1.0), (0.1, 1.0), (0.535, 1.5), (-0.4, 0.25)] {
            let exact = normal_loss(mean, var).unwrap();
            let approx = normal_loss_quadrature(mean, var, 4096).unwrap();
            assert!(
                (approx - exact).abs() < 1e-8,
                "mean {mean}, var {var}: {approx} vs {exact}"
            );
        }
    }

    #[test]
    fn quadrature_edge_cases() {
        assert!(normal_loss_quadrature(10.0, 1.0, 4096).unwrap() < 1e-12);
        let nearly_point = normal_loss_quadrature(-1.0, 1e-12, 4096).unwrap();
        assert!((nearly_point - 1.0).abs() < 1e-6, "got {nearly_point}");
        assert!(matches!(
            normal_loss_quadrature(0.0, 1.0, 8),
            Err(EngineError::TooFewPanels(8))
        ));
        assert!(matches!(
            normal_loss_quadrature(0.0, 0.0, 64),
            Err(EngineError::QuadratureNeedsVariance(_))
        ));
    }

    #[test]
    fn identical_fits_give_zero_z() {
        let model = toy_model();
        let cfg = SampleConfig { sample_size: 500, seed: 1 };
        let p = EviPipeline::new(&model, &cfg).unwrap();
        let fit = p.fits[0].clone();
        let z = build_z_model(&fit, &fit, &p.ranking, &model, &p.table).unwrap();
        assert_eq!(z.mu_prime, 0.0);
        assert_eq!(z.sigma2_prime, 0.0);
        assert!(z.contributions.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn toy_z_model_matches_hand_computation() {
        let model = toy_model();
        let cfg = SampleConfig { sample_size: 10_000, seed: 42 };
        let p = EviPipeline::new(&model, &cfg).unwrap();
        // exact-linear payoffs: the fit is exact, so μ'_z and σ'²_z are too
        assert_eq!(&p.z.star, "act");
        assert_eq!(&p.z.plus, "hold");
        assert_relative_eq!(p.z.mu_prime, 0.1, epsilon = 1e-9);
        assert_relative_eq!(p.z.sigma2_prime, 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.z.contributions[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(p.z.delta_alpha, -0.5, epsilon = 1e-9);
    }

    #[test]
    fn variance_is_sum_of_contributions_bitwise() {
        let model = toy_model();
        let p = EviPipeline::new(&model, &SampleConfig { sample_size: 777, seed: 9 }).unwrap();
        assert_eq!(p.z.sigma2_prime, p.z.contributions.iter().sum::<f64>());
    }

    #[test]
    fn preposterior_variance_cases() {
        let z = z_by_hand(vec![4.0, 1.0, 0.25], 0.2);

        let all = EvidenceSpec::perfect_on(["x0", "x1", "x2"]);
        let d = preposterior_variance(&z, &all).unwrap();
        assert_eq!(d.variance, z.sigma2_prime);
        assert_eq!(d.mean, 0.2);

        let nothing = preposterior_variance(&z, &EvidenceSpec::none()).unwrap();
        assert_eq!(nothing.variance, 0.0);

        let r1 = preposterior_variance(&z, &EvidenceSpec::partial_on("x0", 1.0)).unwrap();
        assert_eq!(r1.variance, 0.0);

        let r2 = preposterior_variance(&z, &EvidenceSpec::partial_on("x0", 2.0)).unwrap();
        assert_eq!(r2.variance, 2.0);

        let mixed = EvidenceSpec {
            perfect: ["x1".to_string()].into_iter().collect(),
            partial: [("x0".to_string(), 4.0)].into_iter().collect(),
        };
        let m = preposterior_variance(&z, &mixed).unwrap();
        assert_relative_eq!(m.variance, 1.0 + 3.0, epsilon = 1e-15);
    }

    #[test]
    fn evidence_validation_errors() {
        let z = z_by_hand(vec![1.0], 0.0);
        assert!(matches!(
            preposterior_variance(&z, &EvidenceSpec::perfect_on(["ghost"])),
            Err(EngineError::UnknownEvidenceVariable { .. })
        ));
        assert!(matches!(
            preposterior_variance(&z, &EvidenceSpec::partial_on("x0", 0.5)),
            Err(EngineError::RimBelowOne { .. })
        ));
        let overlap = EvidenceSpec {
            perfect: ["x0".to_string()].into_iter().collect(),
            partial: [("x0".to_string(), 2.0)].into_iter().collect(),
        };
        assert!(matches!(
            preposterior_variance(&z, &overlap),
            Err(EngineError::OverlappingEvidence { .. })
        ));
    }

    #[test]
    fn evidence_parse_and_label() {
        let spec = EvidenceSpec::parse("perfect:x1,x2;rim:x3=2,x4=10").unwrap();
        assert_eq!(spec.perfect.len(), 2);
        assert_eq!(spec.partial["x3"], 2.0);
        assert_eq!(spec.partial["x4"], 10.0);
        assert_eq!(spec.label(), "perfect:x1,x2;rim:x3=2,x4=10");
        assert_eq!(EvidenceSpec::parse(&spec.label()).unwrap(), spec);

        assert!(matches!(
            EvidenceSpec::parse("perfekt:x1"),
            Err(EngineError::EvidenceSyntax { .. })
        ));
        assert!(matches!(
            EvidenceSpec::parse("rim:x1"),
            Err(EngineError::EvidenceSyntax { .. })
        ));
        assert!(matches!(
            EvidenceSpec::parse("rim:x1=abc"),
            Err(EngineError::EvidenceSyntax { .. })
        ));
        assert!(matches!(
            EvidenceSpec::parse("perfect:x1;rim:x1=2"),
            Err(EngineError::OverlappingEvidence { .. })
        ));
        assert!(matches!(
            EvidenceSpec::parse(""),
            Err(EngineError::EvidenceSyntax { .. })
        ));
        assert_eq!(EvidenceSpec::none().label(), "none");
    }

    #[test]
    fn toy_end_to_end_targets() {
        let model = toy_model();
        let cfg = SampleConfig { sample_size: 100_000, seed: 7 };
        let p = EviPipeline::new(&model, &cfg).unwrap();

        let perfect = p.query(&EvidenceSpec::perfect_on(["x1"])).unwrap();
        assert!((perfect.evi - LOSS_01_1).abs() < 0.01, "evi {}", perfect.evi);
        assert_eq!(perfect.method, EviMethod::ClosedForm);

        let nothing = p.query(&EvidenceSpec::none()).unwrap();
        assert_eq!(nothing.evi, 0.0);
        assert_eq!(nothing.preposterior.variance, 0.0);

        // r = 2 halves the slice: closed-form target normal_loss(0.1, 0.5)
        let half = p.query(&EvidenceSpec::partial_on("x1", 2.0)).unwrap();
        assert!((half.evi - 0.2349110474981485).abs() < 0.01, "evi {}", half.evi);

        let emp = p.empirical_evpi();
        assert!((emp - LOSS_01_1).abs() < 0.01, "empirical {emp}");

        // the analytic mean of z uses prior means, the sample mean uses the
        // draw: even with exact fits they differ by ~1 SE of the mean
        assert!(p.mean_gap_in_se() < 3.0, "gap {}", p.mean_gap_in_se());
    }

    #[test]
    fn quadrature_query_matches_closed_form_query() {
        let model = toy_model();
        let p = EviPipeline::new(&model, &SampleConfig { sample_size: 20_000, seed: 3 }).unwrap();
        let ev = EvidenceSpec::perfect_on(["x1"]);
        let closed = p.query(&ev).unwrap();
        let quad = p.query_quadrature(&ev, 4096).unwrap();
        assert!((closed.evi - quad.evi).abs() < 1e-8);
        assert_eq!(quad.method, EviMethod::Quadrature);
    }

    #[test]
    fn rim_limit_reaches_perfect() {
        let model = toy_model();
        let p = EviPipeline::new(&model, &SampleConfig { sample_size: 50_000, seed: 5 }).unwrap();
        let perfect = p.query(&EvidenceSpec::perfect_on(["x1"])).unwrap().evi;
        let nearly = p.query(&EvidenceSpec::partial_on("x1", 1e9)).unwrap().evi;
        assert!((nearly - perfect).abs() < 1e-6 * (1.0 + perfect));
        let infinite = p.query(&EvidenceSpec::partial_on("x1", f64::INFINITY)).unwrap().evi;
        assert_eq!(infinite, perfect);
    }

    #[test]
    fn empirical_evpi_hand_cases() {
        let table = ValueTable {
            decision_names: vec!["a".into(), "b".into()],
            values: vec![vec![1.0, 2.0], vec![1.0, 0.0]],
            means: vec![1.0, 1.0],
            seed: 0,
            sample_size: 2,
        };
        // tie on means → star = a (index 0); z = b − a = (+1, −1)
        let ranking = rank_decisions(&table);
        assert_eq!(empirical_evpi(&table, &ranking), 0.5);

        let dominant = ValueTable {
            decision_names: vec!["a".into(), "b".into()],
            values: vec![vec![2.0, 1.0], vec![3.0, 0.0]],
            means: vec![2.5, 0.5],
            seed: 0,
            sample_size: 2,
        };
        let r2 = rank_decisions(&dominant);
        assert_eq!(empirical_evpi(&dominant, &r2), 0.0);
    }

    #[test]
    fn default_queries_cover_each_variable_once() {
        let model = parse_model(
            r#"{
                "variables": [
                    { "name": "a", "distribution": { "type": "normal", "mean": 0, "sd": 1 } },
                    { "name": "b", "distribution": { "type": "normal", "mean": 0, "sd": 1 } }
                ],
                "decisions": [
                    { "name": "d1", "value": "a + b" },
                    { "name": "d2", "value": "0" }
                ]
            }"#,
        )
        .unwrap();
        let qs = default_queries(&model);
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].label(), "perfect:a");
        assert_eq!(qs[1].label(), "perfect:b");
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        const MAX_VARS: usize = 8;

        fn assemble(names: &[String], kinds: &[u8], rs: &[f64]) -> EvidenceSpec {
            let mut spec = EvidenceSpec::none();
            for (i, name) in names.iter().enumerate() {
                match kinds[i] {
                    1 => {
                        spec.perfect.insert(name.clone());
                    }
                    2 => {
                        spec.partial.insert(name.clone(), rs[i]);
                    }
                    _ => {}
                }
            }
            spec
        }

        proptest! {
            #[test]
            fn lemma_identities_hold(
                contributions in proptest::collection::vec(0.0f64..50.0, 1..MAX_VARS),
                kinds in proptest::collection::vec(0u8..3, MAX_VARS),
                rs in proptest::collection::vec(1.0f64..1e6, MAX_VARS),
                mu in -5.0f64..5.0,
            ) {
                let z = z_by_hand(contributions, mu);
                let spec = assemble(&z.variable_names, &kinds, &rs);

                let pre = preposterior_variance(&z, &spec).unwrap();
                // mean untouched by any evidence
                prop_assert_eq!(pre.mean, z.mu_prime);
                // variance split: preposterior + posterior = prior
                let post = posterior_variance(&z, &spec).unwrap();
                prop_assert!(
                    (pre.variance + post - z.sigma2_prime).abs()
                        <= 1e-12 * (1.0 + z.sigma2_prime)
                );
                // and the preposterior share never exceeds the prior
                prop_assert!(pre.variance <= z.sigma2_prime * (1.0 + 1e-15));
                prop_assert!(pre.variance >= 0.0);
            }

            #[test]
            fn loss_monotone_in_variance(
                mean in -3.0f64..3.0,
                v1 in 0.0f64..10.0,
                v2 in 0.0f64..10.0,
            ) {
                let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
                let a = normal_loss(mean, lo).unwrap();
                let b = normal_loss(mean, hi).unwrap();
                prop_assert!(a <= b + 1e-12);
            }

            #[test]
            fn label_round_trips(
                n_vars in 1usize..6,
                kinds in proptest::collection::vec(0u8..3, MAX_VARS),
                rs in proptest::collection::vec(1.0f64..1e6, MAX_VARS),
            ) {
                let z = z_by_hand(vec![1.0; n_vars], 0.0);
                let spec = assemble(&z.variable_names, &kinds, &rs);
                if !spec.is_empty() {
                    let reparsed = EvidenceSpec::parse(&spec.label()).unwrap();
                    prop_assert_eq!(reparsed, spec);
                }
            }
        }
    }
}
