//! Linear metamodel of a decision's payoff: ordinary least squares of one
//! value-table column on the scenario matrix, with an intercept.
//!
//! The slopes come from a thin SVD of the centered design matrix, which
//! also yields a condition estimate; fits are refused (rather than silently
//! garbage) when the design is numerically rank-deficient. The intercept is
//! recovered afterwards as `alpha = mean(v) - Σ beta_i · mean(x_i)`.
//!
//! [`standardized_betas`] computes the same slopes a second way — pairwise
//! correlations rescaled by standard deviations. The two routes agree when
//! the predictors are (nearly) orthogonal, which sampled independent priors
//! are; a gap between them is a cheap collinearity alarm.

use crate::sampling::ScenarioMatrix;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Threshold on the centered design matrix's condition number above which
/// the fit is declared degenerate.
pub const CONDITION_LIMIT: f64 = 1e10;

/// Least-squares fit of one decision's payoff on the state variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// Slope per state variable, in model variable order.
    pub betas: Vec<f64>,
    /// Intercept.
    pub alpha: f64,
    /// Fraction of payoff variance the linear model explains, in [0, 1].
    pub r_squared: f64,
    /// Unbiased residual variance, SS_res / (N - n - 1).
    pub residual_variance: f64,
    /// Condition estimate of the centered design matrix.
    pub condition: f64,
}

#[derive(Debug, Clone, Error)]
pub enum RegressionError {
    #[error(
        "design matrix is numerically degenerate (condition {condition:.3e} > {CONDITION_LIMIT:.0e}); near-dependent column(s): {}",
        columns.join(", ")
    )]
    Degenerate {
        condition: f64,
        columns: Vec<String>,
    },
    #[error("variable '{variable}' has zero sample variance")]
    ZeroVariance { variable: String },
    #[error("value column length {got} does not match scenario count {want}")]
    LengthMismatch { got: usize, want: usize },
}

fn column_means(scenarios: &ScenarioMatrix) -> Vec<f64> {
    let n = scenarios.n_scenarios() as f64;
    scenarios
        .columns
        .iter()
        .map(|c| c.iter().sum::<f64>() / n)
        .collect()
}

/// Fits `values ≈ alpha + Σ betas[i] · x_i` by ordinary least squares.
pub fn fit_linear(
    scenarios: &ScenarioMatrix,
    values: &[f64],
) -> Result<LinearFit, RegressionError> {
    let n_rows = scenarios.n_scenarios();
    let n_vars = scenarios.n_variables();
    if values.len() != n_rows {
        return Err(RegressionError::LengthMismatch {
            got: values.len(),
            want: n_rows,
        });
    }

    let x_means = column_means(scenarios);
    let y_mean = values.iter().sum::<f64>() / n_rows as f64;

    let xc = DMatrix::from_fn(n_rows, n_vars, |r, c| scenarios.columns[c][r] - x_means[c]);
    let yc = DVector::from_fn(n_rows, |r, _| values[r] - y_mean);

    let svd = xc.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let condition = if sigma_min > 0.0 {
        sigma_max / sigma_min
    } else {
        f64::INFINITY
    };
    if condition > CONDITION_LIMIT {
        return Err(RegressionError::Degenerate {
            condition,
            columns: degenerate_columns(&svd, scenarios),
        });
    }

    let betas_v = svd
        .solve(&yc, 0.0)
        .expect("SVD solve with both factors computed");
    let betas: Vec<f64> = betas_v.iter().copied().collect();

    let residuals = &yc - &xc * &betas_v;
    let ss_res = residuals.norm_squared();
    let ss_tot = yc.norm_squared();
    // a constant column accumulates rounding noise of order eps·|y| in its
    // centered form; below that floor there is no variance to explain
    let y_abs_max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tot_floor = n_rows as f64 * (f64::EPSILON * (1.0 + y_abs_max)).powi(2) * 16.0;
    let r_squared = if ss_tot > tot_floor {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let alpha = y_mean
        - betas
            .iter()
            .zip(&x_means)
            .map(|(b, m)| b * m)
            .sum::<f64>();

    let dof = n_rows.saturating_sub(n_vars + 1).max(1);
    Ok(LinearFit {
        betas,
        alpha,
        r_squared,
        residual_variance: ss_res / dof as f64,
        condition,
    })
}

/// Names the variables that participate in the near-null direction of the
/// design (largest components of the right singular vector attached to the
/// smallest singular value).
fn degenerate_columns(
    svd: &nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    scenarios: &ScenarioMatrix,
) -> Vec<String> {
    let k_min = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| k)
        .unwrap_or(0);
    let names: Vec<String> = match &svd.v_t {
        Some(v_t) => {
            let dir = v_t.row(k_min);
            scenarios
                .variable_names
                .iter()
                .zip(dir.iter())
                .filter(|(_, w)| w.abs() > 0.3)
                .map(|(n, _)| n.clone())
                .collect()
        }
        None => Vec::new(),
    };
    if names.is_empty() {
        scenarios.variable_names.clone()
    } else {
        names
    }
}

/// Slopes computed the pairwise way: `corr(v, x_i) · sd(v) / sd(x_i)`.
///
/// Equals the least-squares slopes exactly at n = 1 and approximately
/// whenever the predictors are uncorrelated; diverges under collinearity,
/// which is exactly when the comparison is informative.
pub fn standardized_betas(
    scenarios: &ScenarioMatrix,
    values: &[f64],
) -> Result<Vec<f64>, RegressionError> {
    let n_rows = scenarios.n_scenarios();
    if values.len() != n_rows {
        return Err(RegressionError::LengthMismatch {
            got: values.len(),
            want: n_rows,
        });
    }
    let nf = n_rows as f64;
    let y_mean = values.iter().sum::<f64>() / nf;
    let syy: f64 = values.iter().map(|v| (v - y_mean).powi(2)).sum();
    let sd_y = (syy / nf).sqrt();

    let mut betas = Vec::with_capacity(scenarios.n_variables());
    for (name, col) in scenarios.variable_names.iter().zip(&scenarios.columns) {
        let x_mean = col.iter().sum::<f64>() / nf;
        let sxx: f64 = col.iter().map(|x| (x - x_mean).powi(2)).sum();
        if sxx == 0.0 {
            return Err(RegressionError::ZeroVariance {
                variable: name.clone(),
            });
        }
        if sd_y == 0.0 {
            betas.push(0.0);
            continue;
        }
        let sxy: f64 = col
            .iter()
            .zip(values)
            .map(|(x, v)| (x - x_mean) * (v - y_mean))
            .sum();
        let corr = sxy / (sxx * syy).sqrt();
        betas.push(corr * sd_y / (sxx / nf).sqrt());
    }
    Ok(betas)
}
