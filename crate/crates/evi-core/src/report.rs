//! Report assembly: one serializable summary of a pipeline run plus its
//! evidence queries, renderable as JSON, CSV, or a plain-text table.

use crate::engine::{EviPipeline, EviResult};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Per-decision summary line.
#[derive(Debug, Clone, Serialize)]
pub struct DecisionSummary {
    pub decision: String,
    pub mean: f64,
    pub r_squared: f64,
}

/// Per-decision fitted coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub decision: String,
    pub alpha: f64,
    pub betas: BTreeMap<String, f64>,
    pub r_squared: f64,
    pub residual_variance: f64,
}

/// One answered query, flattened for serialization.
#[derive(Debug, Clone, Serialize)]
pub struct QueryReport {
    pub label: String,
    pub evidence: crate::engine::EvidenceSpec,
    pub preposterior_mean: f64,
    pub preposterior_variance: f64,
    pub evi: f64,
    pub method: crate::engine::EviMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContributionEntry {
    pub variable: String,
    pub contribution: f64,
}

/// The full run report.
#[derive(Debug, Clone, Serialize)]
pub struct EviReport {
    pub model: String,
    pub seed: u64,
    pub samples: usize,
    pub star: String,
    pub plus: String,
    pub mu_prime: f64,
    pub sample_mu_prime: f64,
    pub sigma2_prime: f64,
    pub contributions: Vec<ContributionEntry>,
    pub decisions: Vec<DecisionSummary>,
    pub fits: Vec<FitReport>,
    pub queries: Vec<QueryReport>,
    pub empirical_evpi: f64,
    pub warnings: Vec<String>,
}

impl EviReport {
    /// Assembles the report from a completed pipeline and its query results.
    pub fn build(model_label: &str, pipeline: &EviPipeline, results: &[EviResult]) -> EviReport {
        let z = &pipeline.z;
        let decisions: Vec<DecisionSummary> = pipeline
            .table
            .decision_names
            .iter()
            .zip(&pipeline.table.means)
            .zip(&pipeline.fits)
            .map(|((name, &mean), fit)| DecisionSummary {
                decision: name.clone(),
                mean,
                r_squared: fit.r_squared,
            })
            .collect();
        let fits: Vec<FitReport> = pipeline
            .table
            .decision_names
            .iter()
            .zip(&pipeline.fits)
            .map(|(name, fit)| FitReport {
                decision: name.clone(),
                alpha: fit.alpha,
                betas: pipeline
                    .scenarios
                    .variable_names
                    .iter()
                    .cloned()
                    .zip(fit.betas.iter().copied())
                    .collect(),
                r_squared: fit.r_squared,
                residual_variance: fit.residual_variance,
            })
            .collect();
        let queries: Vec<QueryReport> = results
            .iter()
            .map(|r| QueryReport {
                label: r.evidence.label(),
                evidence: r.evidence.clone(),
                preposterior_mean: r.preposterior.mean,
                preposterior_variance: r.preposterior.variance,
                evi: r.evi,
                method: r.method,
            })
            .collect();

        let mut warnings = Vec::new();
        for d in &decisions {
            if d.r_squared < 0.9 {
                warnings.push(format!(
                    "decision '{}': linear fit explains only {:.1}% of payoff variance (R^2 = {:.4}); the approximation may be unreliable",
                    d.decision,
                    d.r_squared * 100.0,
                    d.r_squared
                ));
            }
        }
        let gap_se = pipeline.mean_gap_in_se();
        if gap_se > 2.0 {
            warnings.push(format!(
                "regression mean of z ({:.6}) is {:.1} standard errors away from the raw sample mean ({:.6}); the linear fit may be distorting the z-model",
                z.mu_prime, gap_se, z.sample_mu_prime
            ));
        }

        EviReport {
            model: model_label.to_string(),
            seed: z.seed,
            samples: z.sample_size,
            star: z.star.clone(),
            plus: z.plus.clone(),
            mu_prime: z.mu_prime,
            sample_mu_prime: z.sample_mu_prime,
            sigma2_prime: z.sigma2_prime,
            contributions: z
                .variable_names
                .iter()
                .cloned()
                .zip(z.contributions.iter().copied())
                .map(|(variable, contribution)| ContributionEntry {
                    variable,
                    contribution,
                })
                .collect(),
            decisions,
            fits,
            queries,
            empirical_evpi: pipeline.empirical_evpi(),
            warnings,
        }
    }

    /// Pretty JSON, trailing newline included.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Queries as CSV in query order (label, evi, preposterior stats).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,evi,preposterior_mean,preposterior_sd,method\n");
        for q in &self.queries {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{}",
                q.label,
                q.evi,
                q.preposterior_mean,
                q.preposterior_variance.sqrt(),
                q.method
            );
        }
        out
    }

    /// Plain-text table: run header, decision means, and queries ranked by
    /// EVI (descending, ties by label).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model {}   seed {}   samples {}",
            self.model, self.seed, self.samples
        );
        let _ = writeln!(
            out,
            "best decision {} vs runner-up {}: z has mean {:.6}, sd {:.6}",
            self.star,
            self.plus,
            self.mu_prime,
            self.sigma2_prime.sqrt()
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<24} {:>14} {:>10}", "decision", "mean value", "R^2");
        for d in &self.decisions {
            let _ = writeln!(
                out,
                "{:<24} {:>14.6} {:>10.4}",
                d.decision, d.mean, d.r_squared
            );
        }
        let _ = writeln!(out);

        let label_width = self
            .queries
            .iter()
            .map(|q| q.label.len())
            .chain(["evidence".len()])
            .max()
            .unwrap_or(8)
            .max(8);
        let _ = writeln!(
            out,
            "{:<label_width$} {:>12} {:>16}  {}",
            "evidence", "EVI", "preposterior sd", "method"
        );
        let mut ranked: Vec<&QueryReport> = self.queries.iter().collect();
        ranked.sort_by(|a, b| {
            b.evi
                .partial_cmp(&a.evi)
                .expect("EVI is finite")
                .then_with(|| a.label.cmp(&b.label))
        });
        for q in ranked {
            let _ = writeln!(
                out,
                "{:<label_width$} {:>12.6} {:>16.6}  {}",
                q.label,
                q.evi,
                q.preposterior_variance.sqrt(),
                q.method
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "empirical EVPI (sample shortfall): {:.6}", self.empirical_evpi);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Plot-ready CSV for the query results: `label,evi,preposterior_sd`,
/// sorted by descending EVI with ties broken by label.
pub fn plot_data_csv(results: &[EviResult]) -> String {
    let mut rows: Vec<(String, f64, f64)> = results
        .iter()
        .map(|r| {
            (
                r.evidence.label(),
                r.evi,
                r.preposterior.variance.sqrt(),
            )
        })
        .collect();
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("EVI is finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut out = String::from("label,evi,preposterior_sd\n");
    for (label, evi, sd) in rows {
        let _ = writeln!(out, "{label},{evi:.16e},{sd:.16e}");
    }
    out
}
