//! Seeded scenario generation and per-decision value evaluation.
//!
//! Each state variable draws from its own random substream, keyed by
//! (seed, variable name). Adding or reordering variables therefore never
//! perturbs the draws of the others, and generation order (or thread count)
//! cannot leak into results: the whole sample is a pure function of
//! (model, seed, N).

use crate::expr::{EvalError, SliceLookup};
use crate::model::DecisionModel;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::io::{self, Write};
use thiserror::Error;

/// Sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleConfig {
    pub sample_size: usize,
    pub seed: u64,
}

/// N scenarios by n variables, stored per variable column.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    pub variable_names: Vec<String>,
    /// `columns[i][s]` = draw s of variable i; all columns share a length.
    pub columns: Vec<Vec<f64>>,
    pub seed: u64,
    pub sample_size: usize,
}

impl ScenarioMatrix {
    pub fn n_scenarios(&self) -> usize {
        self.sample_size
    }

    pub fn n_variables(&self) -> usize {
        self.columns.len()
    }

    /// Scenario `s` as a vector aligned with `variable_names`.
    pub fn row(&self, s: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[s]).collect()
    }
}

/// Per-scenario payoff of every decision, with column means.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub decision_names: Vec<String>,
    /// `values[s][j]` = payoff of decision j under scenario s.
    pub values: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub seed: u64,
    pub sample_size: usize,
}

impl ValueTable {
    /// Column `j` (one decision's payoffs across scenarios) as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }

    pub fn n_decisions(&self) -> usize {
        self.decision_names.len()
    }
}

/// The incumbent (`star`, highest sample-mean payoff) and the challenger
/// (`plus`, second highest). Ties break toward the lower decision index.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRanking {
    pub star_index: usize,
    pub plus_index: usize,
    /// Decision indices ordered by descending mean.
    pub order: Vec<usize>,
    /// Means in original decision order.
    pub means: Vec<f64>,
}

impl DecisionRanking {
    pub fn sorted_means(&self) -> Vec<f64> {
        self.order.iter().map(|&j| self.means[j]).collect()
    }
}

#[derive(Debug, Clone, Error)]
pub enum SamplingError {
    #[error("sample size {sample_size} too small: need at least {} for {n_variables} variable(s)", n_variables + 2)]
    SampleTooSmall {
        sample_size: usize,
        n_variables: usize,
    },
    #[error("evaluating decision '{decision}' on scenario {scenario}: {source}")]
    Evaluation {
        scenario: usize,
        decision: String,
        #[source]
        source: EvalError,
    },
}

/// ChaCha stream for one (seed, variable) pair. Hashing decouples the
/// substreams: no two variables share state, and the same variable name
/// yields the same column under any model edit that keeps it.
pub(crate) fn substream(seed: u64, variable_name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(variable_name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw in the open interval (0, 1): 53-bit mantissa, half-step
/// offset so 0 and 1 are unreachable (quantile transforms need that).
pub(crate) fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Draws the scenario matrix: column i holds `config.sample_size` i.i.d.
/// draws from variable i's prior, via inverse CDF of its substream.
pub fn draw_scenarios(
    model: &DecisionModel,
    config: &SampleConfig,
) -> Result<ScenarioMatrix, SamplingError> {
    let n = model.variables.len();
    if config.sample_size < n + 2 {
        return Err(SamplingError::SampleTooSmall {
            sample_size: config.sample_size,
            n_variables: n,
        });
    }
    let columns: Vec<Vec<f64>> = model
        .variables
        .par_iter()
        .map(|v| {
            let mut rng = substream(config.seed, &v.name);
            (0..config.sample_size)
                .map(|_| v.distribution.quantile(open_unit(&mut rng)))
                .collect()
        })
        .collect();
    Ok(ScenarioMatrix {
        variable_names: model.variable_names(),
        columns,
        seed: config.seed,
        sample_size: config.sample_size,
    })
}

/// Evaluates every decision expression on every scenario.
pub fn evaluate_value_table(
    model: &DecisionModel,
    scenarios: &ScenarioMatrix,
) -> Result<ValueTable, SamplingError> {
    let n = scenarios.n_scenarios();
    let values: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let row = scenarios.row(s);
            let lookup = SliceLookup {
                names: &scenarios.variable_names,
                values: &row,
            };
            model
                .decisions
                .iter()
                .map(|d| {
                    d.value.evaluate(&lookup).map_err(|source| {
                        SamplingError::Evaluation {
                            scenario: s,
                            decision: d.name.clone(),
                            source,
                        }
                    })
                })
                .collect::<Result<Vec<f64>, SamplingError>>()
        })
        .collect::<Result<Vec<Vec<f64>>, SamplingError>>()?;

    let m = model.decisions.len();
    let mut means = vec![0.0; m];
    for row in &values {
        for (j, v) in row.iter().enumerate() {
            means[j] += v;
        }
    }
    for mean in &mut means {
        *mean /= n as f64;
    }

    Ok(ValueTable {
        decision_names: model.decisions.iter().map(|d| d.name.clone()).collect(),
        values,
        means,
        seed: scenarios.seed,
        sample_size: scenarios.sample_size,
    })
}

/// Picks the incumbent and challenger by sample mean, ties toward the
/// lower index.
pub fn rank_decisions(table: &ValueTable) -> DecisionRanking {
    assert!(table.n_decisions() >= 2, "ranking needs at least two decisions");
    let mut order: Vec<usize> = (0..table.n_decisions()).collect();
    // stable sort keeps the lower index first on exact ties
    order.sort_by(|&a, &b| {
        table.means[b]
            .partial_cmp(&table.means[a])
            .expect("decision means are finite")
    });
    DecisionRanking {
        star_index: order[0],
        plus_index: order[1],
        order,
        means: table.means.clone(),
    }
}

/// Dumps scenarios and decision values side by side as CSV, full double
/// precision, one row per scenario.
pub fn write_sample_csv<W: Write>(
    scenarios: &ScenarioMatrix,
    table: &ValueTable,
    out: &mut W,
) -> io::Result<()> {
    write!(out, "scenario")?;
    for name in &scenarios.variable_names {
        write!(out, ",{name}")?;
    }
    for name in &table.decision_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for s in 0..scenarios.n_scenarios() {
        write!(out, "{s}")?;
        for col in &scenarios.columns {
            write!(out, ",{:.16e}", col[s])?;
        }
        for v in &table.values[s] {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
