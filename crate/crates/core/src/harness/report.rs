use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kstest::ks_test;
use crate::marginals::MarginalModel;
use crate::matrix::DataMatrix;
use crate::moments::{aggregate_residuals, AggregateResiduals, ColumnStats, ConstraintSet};
use crate::optimizer::{feature_knockoff_correlations, IterationTrace, OptimizerConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run reports. Contains no wall-clock data, so identical runs
/// serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub names: Vec<String>,
    pub marginals: Vec<MarginalModel>,
    pub optimizer: OptimizerConfig,
    pub num_pairs: usize,
    pub num_constraints: usize,
    pub iterations_run: usize,
    pub best_iteration: usize,
    /// Mean and variance of each feature: the knockoff targets.
    pub features: Vec<ColumnSummary>,
    /// The initial guess, every snapshot, and the returned knockoffs.
    pub summaries: Vec<IterationSummary>,
    pub correlation_quartiles: Quartiles,
    pub ks_p_value_quartiles: Quartiles,
    pub constraint_trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub mean: f64,
    /// Divisor-n variance.
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarySource {
    Initial,
    Snapshot,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub source: SummarySource,
    pub iteration: usize,
    pub knockoffs: Vec<KnockoffSummary>,
    pub residuals: AggregateResiduals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnockoffSummary {
    pub mean: f64,
    pub variance: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub feature_correlation: f64,
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let h = q * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self { min: at(0.0), q1: at(0.25), median: at(0.5), q3: at(0.75), max: at(1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub residuals: AggregateResiduals,
    pub ks_penalty: f64,
    pub penalized: f64,
}

impl From<&IterationTrace> for TraceRow {
    fn from(e: &IterationTrace) -> Self {
        Self {
            iteration: e.iteration,
            objective: e.objective,
            residuals: e.residuals,
            ks_penalty: e.ks_penalty_total,
            penalized: e.penalized,
        }
    }
}

pub fn column_summaries(data: &DataMatrix) -> Vec<ColumnSummary> {
    data.columns()
        .map(|c| {
            let s = ColumnStats::of(c);
            ColumnSummary { mean: s.mean, variance: s.variance }
        })
        .collect()
}

/// Summarizes one knockoff iterate against the features it imitates.
pub fn summarize_iterate(
    source: SummarySource,
    iteration: usize,
    features: &DataMatrix,
    knockoffs: &DataMatrix,
    marginals: &[MarginalModel],
    cs: &ConstraintSet,
) -> Result<IterationSummary> {
    let corr = feature_knockoff_correlations(features, knockoffs)?;
    let mut out = Vec::with_capacity(knockoffs.ncols());
    for ((col, model), rho) in knockoffs.columns().zip(marginals).zip(corr) {
        let s = ColumnStats::of(col);
        let ks = ks_test(col, model)?;
        out.push(KnockoffSummary {
            mean: s.mean,
            variance: s.variance,
            ks_statistic: ks.statistic,
            ks_p_value: ks.p_value,
            feature_correlation: rho,
        });
    }
    Ok(IterationSummary { source, iteration, knockoffs: out, residuals: aggregate_residuals(features, knockoffs, cs)? })
}

impl Report {
    /// The final knockoff summary.
    pub fn final_summary(&self) -> Option<&IterationSummary> {
        self.summaries.iter().find(|s| s.source == SummarySource::Final)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}
