//! One-sample Kolmogorov-Smirnov test against a fitted marginal, and the
//! squared statistic used as a smooth-enough penalty during optimization.

use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::marginals::MarginalModel;

pub const MIN_KS_SAMPLE: usize = 8;
const SERIES_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (-1)^(j-1) exp(-2 j² λ²)`.
///
/// Below `λ = 1.18` the alternating series converges slowly, so the
/// equivalent Jacobi theta form `1 - √(2π)/λ Σ exp(-(2j-1)² π² / (8 λ²))` is
/// summed instead. Both are truncated once terms drop below 1e-12.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda.is_nan() || lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut cdf = 0.0;
        for j in 1..=100 {
            let odd = (2 * j - 1) as f64;
            let term = (-odd * odd * pi2 / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < SERIES_CUTOFF {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * cdf
    } else {
        let mut sum = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < SERIES_CUTOFF {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// KS statistic and the index (into `column`) of the observation attaining
/// it, with the sign of `dD/du` at that observation.
fn statistic_with_argmax(column: &[f64], model: &MarginalModel) -> Result<(f64, usize, f64)> {
    if column.len() < MIN_KS_SAMPLE {
        return Err(KnockoffError::InvalidInput(format!(
            "KS test needs at least {MIN_KS_SAMPLE} observations, got {}",
            column.len()
        )));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(KnockoffError::InvalidInput("KS test input contains non-finite values".into()));
    }
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    let n = column.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0, 0.0);
    for (rank, &idx) in order.iter().enumerate() {
        let u = model.cdf(column[idx]);
        let above = (rank + 1) as f64 / n - u;
        let below = u - rank as f64 / n;
        if above > best.0 {
            best = (above, idx, -1.0);
        }
        if below > best.0 {
            best = (below, idx, 1.0);
        }
    }
    Ok(best)
}

/// One-sided ECDF deviation at a sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    /// Index into the column.
    pub index: usize,
    pub value: f64,
    /// Sign of `d value / d cdf(x)`.
    pub sign: f64,
}

/// Every one-sided deviation within `band` of the KS statistic.
pub fn near_maximal_deviations(column: &[f64], model: &MarginalModel, band: f64) -> Result<Vec<Deviation>> {
    let (d, _, _) = statistic_with_argmax(column, model)?;
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    let n = column.len() as f64;
    let mut out = Vec::new();
    for (rank, &idx) in order.iter().enumerate() {
        let u = model.cdf(column[idx]);
        let above = (rank + 1) as f64 / n - u;
        let below = u - rank as f64 / n;
        if above >= d - band {
            out.push(Deviation { index: idx, value: above, sign: -1.0 });
        }
        if below >= d - band {
            out.push(Deviation { index: idx, value: below, sign: 1.0 });
        }
    }
    Ok(out)
}

pub fn ks_statistic(column: &[f64], model: &MarginalModel) -> Result<f64> {
    statistic_with_argmax(column, model).map(|(d, _, _)| d)
}

/// Tests `column` against `model` treating the model as fully specified.
pub fn ks_test(column: &[f64], model: &MarginalModel) -> Result<KsResult> {
    let d = ks_statistic(column, model)?;
    Ok(KsResult { statistic: d, p_value: ks_p_value(d, column.len()) })
}

pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    kolmogorov_survival((n as f64).sqrt() * statistic)
}

/// Squared KS statistic.
pub fn ks_penalty(column: &[f64], model: &MarginalModel) -> Result<f64> {
    let d = ks_statistic(column, model)?;
    Ok(d * d)
}

/// Squared KS statistic and its subgradient with respect to every entry.
///
/// Only the observation attaining the supremum carries a nonzero
/// derivative, `2 D · (±pdf(x))`.
pub fn ks_penalty_with_gradient(column: &[f64], model: &MarginalModel) -> Result<(f64, Vec<f64>)> {
    let (d, idx, sign) = statistic_with_argmax(column, model)?;
    let mut grad = vec![0.0; column.len()];
    grad[idx] = 2.0 * d * sign * model.pdf(column[idx]);
    Ok((d * d, grad))
}
