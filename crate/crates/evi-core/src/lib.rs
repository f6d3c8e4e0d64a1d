//! Expected value of information for Monte Carlo decision models.
//!
//! Given a decision problem — uncertain state variables with prior
//! distributions and a handful of candidate decisions whose payoffs are
//! arithmetic expressions over those variables — this crate estimates what
//! it would be worth to learn more about each variable before committing
//! to a decision.
//!
//! The estimate is built in stages:
//!
//! 1. [`sampling`] draws a seeded scenario matrix and evaluates every
//!    decision's payoff on every scenario.
//! 2. [`regression`] fits a linear metamodel to each decision's payoffs.
//! 3. [`engine`] forms z, the payoff gap between the two best decisions,
//!    propagates contemplated evidence through its variance decomposition
//!    (preposterior analysis), and evaluates the expected gain as a normal
//!    linear-loss integral.
//! 4. [`oracle`] cross-checks the fast path with exact tree enumeration,
//!    direct numerical integration, and nested two-level Monte Carlo.
//!
//! The whole pipeline is deterministic given (model, seed, sample size):
//! every random draw comes from a named substream, so results are
//! reproducible across runs, platforms, and thread counts.

pub mod engine;
pub mod expr;
pub mod model;
pub mod oracle;
pub mod regression;
pub mod report;
pub mod sampling;

pub use engine::{
    build_z_model, default_queries, empirical_evpi, estimate_evi, normal_loss,
    normal_loss_quadrature, posterior_variance, preposterior_variance, EngineError, EviMethod,
    EviPipeline, EviResult, EvidenceSpec, PreposteriorDensity, ZModel,
};
pub use expr::{evaluate_expression, parse_expression, EvalError, Expr, ParseError};
pub use model::{parse_model, validate_model, DecisionModel, Distribution, ModelError, StateVariable};
pub use oracle::{
    additivity_report, discrete_tree_evpi, nested_mc_evi, quadrature_evpi, AdditivityReport,
    DiscreteModel, DiscreteVariable, OracleError, OracleEstimate, OracleMethod,
};
pub use regression::{fit_linear, standardized_betas, LinearFit, RegressionError};
pub use report::{plot_data_csv, EviReport};
pub use sampling::{
    draw_scenarios, evaluate_value_table, rank_decisions, write_sample_csv, DecisionRanking,
    SampleConfig, SamplingError, ScenarioMatrix, ValueTable,
};
