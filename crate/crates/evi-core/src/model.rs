//! Decision model definition: uncertain state variables with prior
//! distributions, plus a set of candidate decisions whose payoffs are
//! arithmetic expressions over those variables.
//!
//! Models are loaded from JSON:
//!
//! ```json
//! {
//!   "variables": [
//!     { "name": "demand", "distribution": { "type": "normal", "mean": 10.0, "sd": 2.0 } },
//!     { "name": "price",  "distribution": { "type": "uniform", "low": 3.0, "high": 5.0 } }
//!   ],
//!   "decisions": [
//!     { "name": "build",  "value": "demand * price - 30" },
//!     { "name": "wait",   "value": "0.0" }
//!   ]
//! }
//! ```
//!
//! Unknown JSON fields are rejected so that typos (`"stddev"` for `"sd"`)
//! fail loudly instead of silently picking up defaults.

use crate::expr::{is_identifier, parse_expression, Expr, ParseError};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Prior distribution of a state variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    /// Normal with mean `mean` and standard deviation `sd > 0`.
    Normal { mean: f64, sd: f64 },
    /// Continuous uniform on `[low, high]`, `low < high`.
    Uniform { low: f64, high: f64 },
    /// Lognormal: `mu` and `sigma > 0` are the mean and standard deviation
    /// of the underlying normal (i.e. of `ln X`).
    Lognormal { mu: f64, sigma: f64 },
}

impl Distribution {
    /// Prior mean.
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Normal { mean, .. } => mean,
            Distribution::Uniform { low, high } => 0.5 * (low + high),
            Distribution::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    /// Prior variance.
    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Normal { sd, .. } => sd * sd,
            Distribution::Uniform { low, high } => {
                let w = high - low;
                w * w / 12.0
            }
            Distribution::Lognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
        }
    }

    /// Inverse CDF: maps `u` in the open interval (0, 1) to a draw.
    pub fn quantile(&self, u: f64) -> f64 {
        debug_assert!(u > 0.0 && u < 1.0);
        match *self {
            Distribution::Normal { mean, sd } => mean + sd * probit(u),
            Distribution::Uniform { low, high } => low + (high - low) * u,
            Distribution::Lognormal { mu, sigma } => (mu + sigma * probit(u)).exp(),
        }
    }

    fn check(&self, variable: &str) -> Result<(), ModelError> {
        let fail = |reason: String| {
            Err(ModelError::InvalidDistribution {
                variable: variable.to_string(),
                reason,
            })
        };
        match *self {
            Distribution::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() {
                    return fail("normal parameters must be finite".into());
                }
                if sd <= 0.0 {
                    return fail(format!("normal sd must be positive, got {sd}"));
                }
            }
            Distribution::Uniform { low, high } => {
                if !low.is_finite() || !high.is_finite() {
                    return fail("uniform bounds must be finite".into());
                }
                if low >= high {
                    return fail(format!("uniform needs low < high, got [{low}, {high}]"));
                }
            }
            Distribution::Lognormal { mu, sigma } => {
                if !mu.is_finite() || !sigma.is_finite() {
                    return fail("lognormal parameters must be finite".into());
                }
                if sigma <= 0.0 {
                    return fail(format!("lognormal sigma must be positive, got {sigma}"));
                }
            }
        }
        Ok(())
    }
}

/// Standard normal quantile function.
pub fn probit(u: f64) -> f64 {
    // unit normal construction cannot fail
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(u)
}

/// An uncertain input to the decision problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateVariable {
    pub name: String,
    pub distribution: Distribution,
}

/// One candidate decision with its payoff expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub name: String,
    /// Original expression text, exactly as written in the model file.
    pub value_text: String,
    pub value: Expr,
}

/// A complete decision problem: the uncertain state and the alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionModel {
    pub variables: Vec<StateVariable>,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("invalid model JSON at {path}: {message}")]
    Json { path: String, message: String },
    #[error("decision '{decision}': {source}")]
    Expression {
        decision: String,
        #[source]
        source: ParseError,
    },
    #[error("'{name}' is not a valid identifier (want [A-Za-z_][A-Za-z0-9_]*)")]
    InvalidName { name: String },
    #[error("duplicate variable name '{name}'")]
    DuplicateVariable { name: String },
    #[error("duplicate decision name '{name}'")]
    DuplicateDecision { name: String },
    #[error("variable '{variable}': {reason}")]
    InvalidDistribution { variable: String, reason: String },
    #[error("decision '{decision}' references unknown variable '{variable}'")]
    UnknownVariable { decision: String, variable: String },
    #[error("model must declare at least one state variable")]
    NoVariables,
    #[error("model must offer at least two decisions, got {got}")]
    TooFewDecisions { got: usize },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecision {
    name: String,
    value: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    variables: Vec<StateVariable>,
    decisions: Vec<RawDecision>,
}

/// Parses a model from JSON text and validates it.
pub fn parse_model(json: &str) -> Result<DecisionModel, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let raw: RawModel = serde_path_to_error::deserialize(de).map_err(|e| ModelError::Json {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut decisions = Vec::with_capacity(raw.decisions.len());
    for d in raw.decisions {
        let value = parse_expression(&d.value).map_err(|source| ModelError::Expression {
            decision: d.name.clone(),
            source,
        })?;
        decisions.push(Decision {
            name: d.name,
            value_text: d.value,
            value,
        });
    }

    let model = DecisionModel {
        variables: raw.variables,
        decisions,
    };
    validate_model(&model)?;
    Ok(model)
}

/// Structural validation: names well formed and unique, distribution
/// parameters admissible, every referenced variable declared, and the
/// problem nontrivial (≥1 variable, ≥2 decisions).
pub fn validate_model(model: &DecisionModel) -> Result<(), ModelError> {
    if model.variables.is_empty() {
        return Err(ModelError::NoVariables);
    }
    if model.decisions.len() < 2 {
        return Err(ModelError::TooFewDecisions {
            got: model.decisions.len(),
        });
    }

    let mut seen = std::collections::HashSet::new();
    for v in &model.variables {
        if !is_identifier(&v.name) {
            return Err(ModelError::InvalidName {
                name: v.name.clone(),
            });
        }
        if !seen.insert(v.name.as_str()) {
            return Err(ModelError::DuplicateVariable {
                name: v.name.clone(),
            });
        }
        v.distribution.check(&v.name)?;
    }

    let mut seen_d = std::collections::HashSet::new();
    for d in &model.decisions {
        if !is_identifier(&d.name) {
            return Err(ModelError::InvalidName {
                name: d.name.clone(),
            });
        }
        if !seen_d.insert(d.name.as_str()) {
            return Err(ModelError::DuplicateDecision {
                name: d.name.clone(),
            });
        }
        for var in d.value.variables() {
            if !seen.contains(var.as_str()) {
                return Err(ModelError::UnknownVariable {
                    decision: d.name.clone(),
                    variable: var,
                });
            }
        }
    }
    Ok(())
}

impl DecisionModel {
    /// Index of a variable by name.
    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Variable names in declaration order.
    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TOY: &str = r#"{
        "variables": [
            { "name": "x1", "distribution": { "type": "normal", "mean": 0.6, "sd": 1.0 } }
        ],
        "decisions": [
            { "name": "act",  "value": "x1" },
            { "name": "hold", "value": "0.5" }
        ]
    }"#;

    #[test]
    fn parses_minimal_model() {
        let m = parse_model(TOY).unwrap();
        assert_eq!(m.variables.len(), 1);
        assert_eq!(m.decisions.len(), 2);
        assert_eq!(m.decisions[0].value_text, "x1");
        assert_eq!(m.variables[0].distribution.mean(), 0.6);
    }

    #[test]
    fn rejects_unknown_json_field() {
        let bad = TOY.replace("\"sd\"", "\"stddev\"");
        match parse_model(&bad) {
            Err(ModelError::Json { path, .. }) => {
                assert!(path.contains("variables"), "path was {path}");
            }
            other => panic!("expected Json error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_expression_with_decision_name() {
        let bad = TOY.replace("\"x1\"", "\"x1 +\"");
        match parse_model(&bad) {
            Err(ModelError::Expression { decision, .. }) => assert_eq!(decision, "act"),
            other => panic!("expected Expression error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_variable_reference() {
        let bad = TOY.replace("\"value\": \"x1\"", "\"value\": \"x1 + ghost\"");
        match parse_model(&bad) {
            Err(ModelError::UnknownVariable { decision, variable }) => {
                assert_eq!((decision.as_str(), variable.as_str()), ("act", "ghost"));
            }
            other => panic!("expected UnknownVariable, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_sd() {
        let bad = TOY.replace("\"sd\": 1.0", "\"sd\": 0.0");
        assert!(matches!(
            parse_model(&bad),
            Err(ModelError::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn rejects_inverted_uniform() {
        let bad = TOY.replace(
            r#"{ "type": "normal", "mean": 0.6, "sd": 1.0 }"#,
            r#"{ "type": "uniform", "low": 2.0, "high": 1.0 }"#,
        );
        assert!(matches!(
            parse_model(&bad),
            Err(ModelError::InvalidDistribution { .. })
        ));
    }

    #[test]
    fn rejects_duplicates_and_bad_names() {
        let dup = TOY.replace(
            "\"decisions\"",
            r#""extra": 0, "decisions""#,
        );
        assert!(matches!(parse_model(&dup), Err(ModelError::Json { .. })));

        let two_x1 = r#"{
            "variables": [
                { "name": "x1", "distribution": { "type": "normal", "mean": 0, "sd": 1 } },
                { "name": "x1", "distribution": { "type": "normal", "mean": 0, "sd": 1 } }
            ],
            "decisions": [
                { "name": "a", "value": "x1" },
                { "name": "b", "value": "0" }
            ]
        }"#;
        assert!(matches!(
            parse_model(two_x1),
            Err(ModelError::DuplicateVariable { .. })
        ));

        let bad_name = TOY.replace("\"act\"", "\"2act\"");
        assert!(matches!(
            parse_model(&bad_name),
            Err(ModelError::InvalidName { .. })
        ));
    }

    #[test]
    fn rejects_single_decision() {
        let one = r#"{
            "variables": [
                { "name": "x", "distribution": { "type": "normal", "mean": 0, "sd": 1 } }
            ],
            "decisions": [ { "name": "only", "value": "x" } ]
        }"#;
        assert!(matches!(
            parse_model(one),
            Err(ModelError::TooFewDecisions { got: 1 })
        ));
    }

    #[test]
    fn moments_match_closed_forms() {
        let n = Distribution::Normal { mean: 3.0, sd: 2.0 };
        assert_eq!(n.mean(), 3.0);
        assert_eq!(n.variance(), 4.0);

        let u = Distribution::Uniform { low: 2.0, high: 8.0 };
        assert_eq!(u.mean(), 5.0);
        assert_relative_eq!(u.variance(), 3.0, max_relative = 1e-15);

        let l = Distribution::Lognormal { mu: 0.0, sigma: 0.5 };
        assert_relative_eq!(l.mean(), (0.125f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(
            l.variance(),
            (0.25f64.exp() - 1.0) * 0.25f64.exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn quantiles_hit_known_points() {
        let n = Distribution::Normal { mean: 1.0, sd: 2.0 };
        assert_relative_eq!(n.quantile(0.5), 1.0, epsilon = 1e-12);
        // 97.5th percentile of the standard normal is 1.959964...
        assert_relative_eq!(n.quantile(0.975), 1.0 + 2.0 * 1.959963984540054, epsilon = 1e-8);

        let u = Distribution::Uniform { low: -1.0, high: 3.0 };
        assert_eq!(u.quantile(0.25), 0.0);

        let l = Distribution::Lognormal { mu: 0.0, sigma: 1.0 };
        assert_relative_eq!(l.quantile(0.5), 1.0, epsilon = 1e-12);
    }

    mod prop {
        use super::*;
        use proptest::prelude::*;

        fn distribution_strategy() -> impl Strategy<Value = Distribution> {
            prop_oneof![
                (-50.0f64..50.0, 0.01f64..20.0)
                    .prop_map(|(mean, sd)| Distribution::Normal { mean, sd }),
                (-50.0f64..50.0, 0.01f64..40.0)
                    .prop_map(|(low, w)| Distribution::Uniform { low, high: low + w }),
                (-2.0f64..2.0, 0.01f64..1.0)
                    .prop_map(|(mu, sigma)| Distribution::Lognormal { mu, sigma }),
            ]
        }

        proptest! {
            #[test]
            fn quantile_is_monotone(d in distribution_strategy(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(d.quantile(lo) <= d.quantile(hi));
            }

            #[test]
            fn median_within_support(d in distribution_strategy()) {
                let q = d.quantile(0.5);
                prop_assert!(q.is_finite());
                if let Distribution::Uniform { low, high } = d {
                    prop_assert!(q >= low && q <= high);
                }
                if let Distribution::Lognormal { .. } = d {
                    prop_assert!(q > 0.0);
                }
            }

            #[test]
            fn variance_is_positive(d in distribution_strategy()) {
                prop_assert!(d.variance() > 0.0);
            }
        }
    }
}
