//! Univariate marginal models and column standardization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::error::{KnockoffError, Result};
use crate::matrix::DataMatrix;
use crate::moments::{ColumnStats, DEGENERATE_VARIANCE};

/// Bounds of the Student-t degrees-of-freedom search.
pub const DF_SEARCH_RANGE: (f64, f64) = (2.1, 200.0);
const DF_TOLERANCE: f64 = 1e-4;
/// Smallest sample accepted by the parametric fits.
pub const MIN_PARAMETRIC_SAMPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalKind {
    Normal,
    StudentT,
    Empirical,
}

impl FromStr for MarginalKind {
    type Err = KnockoffError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(MarginalKind::Normal),
            "t" | "student_t" | "student-t" => Ok(MarginalKind::StudentT),
            "empirical" => Ok(MarginalKind::Empirical),
            other => Err(KnockoffError::Config(format!("unknown marginal kind `{other}`"))),
        }
    }
}

impl fmt::Display for MarginalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarginalKind::Normal => "normal",
            MarginalKind::StudentT => "t",
            MarginalKind::Empirical => "empirical",
        })
    }
}

/// A fitted univariate distribution with CDF and quantile functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalModel {
    Normal {
        location: f64,
        scale: f64,
    },
    StudentT {
        location: f64,
        scale: f64,
        degrees_of_freedom: f64,
    },
    /// Piecewise-linear interpolation through `(x_(r), r / (n + 1))` with
    /// exponential tails, so the CDF never reaches 0 or 1.
    Empirical {
        sorted_sample: Vec<f64>,
    },
}

impl MarginalModel {
    pub fn standard_normal() -> Self {
        MarginalModel::Normal { location: 0.0, scale: 1.0 }
    }

    pub fn kind(&self) -> MarginalKind {
        match self {
            MarginalModel::Normal { .. } => MarginalKind::Normal,
            MarginalModel::StudentT { .. } => MarginalKind::StudentT,
            MarginalModel::Empirical { .. } => MarginalKind::Empirical,
        }
    }

    /// Checks parameter invariants; decoded models must pass this.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(KnockoffError::InvalidInput(msg));
        match *self {
            MarginalModel::Normal { location, scale } => {
                if !location.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return bad(format!(
                        "normal marginal needs finite location and scale > 0, got ({location}, {scale})"
                    ));
                }
            }
            MarginalModel::StudentT { location, scale, degrees_of_freedom } => {
                if !location.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return bad(format!(
                        "student_t marginal needs finite location and scale > 0, got ({location}, {scale})"
                    ));
                }
                if !(degrees_of_freedom > 2.0 && degrees_of_freedom.is_finite()) {
                    return bad(format!("student_t degrees of freedom must exceed 2, got {degrees_of_freedom}"));
                }
            }
            MarginalModel::Empirical { ref sorted_sample } => {
                if sorted_sample.len() < 2 {
                    return bad("empirical marginal needs at least 2 points".into());
                }
                if sorted_sample.iter().any(|v| !v.is_finite()) {
                    return bad("empirical marginal contains non-finite values".into());
                }
                if sorted_sample.windows(2).any(|w| w[0] > w[1]) {
                    return bad("empirical sample is not sorted".into());
                }
                if sorted_sample[sorted_sample.len() - 1] <= sorted_sample[0] {
                    return bad("empirical sample has zero spread".into());
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MarginalModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarginalModel::Normal { location, scale } => normal_cdf((x - location) / scale),
            MarginalModel::StudentT { location, scale, degrees_of_freedom } => {
                student_t_cdf((x - location) / scale, degrees_of_freedom)
            }
            MarginalModel::Empirical { ref sorted_sample } => empirical_cdf(sorted_sample, x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            MarginalModel::Normal { location, scale } => normal_pdf((x - location) / scale) / scale,
            MarginalModel::StudentT { location, scale, degrees_of_freedom } => {
                student_t_ln_pdf((x - location) / scale, degrees_of_freedom).exp() / scale
            }
            MarginalModel::Empirical { ref sorted_sample } => empirical_pdf(sorted_sample, x),
        }
    }

    /// Inverse CDF on the open unit interval.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(KnockoffError::Domain { value: u, domain: "(0, 1)" });
        }
        Ok(match *self {
            MarginalModel::Normal { location, scale } => location + scale * normal_quantile(u),
            MarginalModel::StudentT { location, scale, degrees_of_freedom } => {
                location + scale * student_t_quantile(u, degrees_of_freedom)
            }
            MarginalModel::Empirical { ref sorted_sample } => empirical_quantile(sorted_sample, u),
        })
    }

    /// Log-likelihood of `data`; empirical models have no density and return `None`.
    pub fn log_likelihood(&self, data: &[f64]) -> Option<f64> {
        match *self {
            MarginalModel::Normal { location, scale } => Some(
                data.iter()
                    .map(|&x| {
                        let z = (x - location) / scale;
                        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - scale.ln()
                    })
                    .sum(),
            ),
            MarginalModel::StudentT { location, scale, degrees_of_freedom } => Some(
                data.iter().map(|&x| student_t_ln_pdf((x - location) / scale, degrees_of_freedom) - scale.ln()).sum(),
            ),
            MarginalModel::Empirical { .. } => None,
        }
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal inverse CDF for `u` in `(0, 1)`.
pub fn normal_quantile(u: f64) -> f64 {
    let mut z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u);
    // polish against `normal_cdf` so the pair inverts to machine precision
    for _ in 0..2 {
        let d = normal_pdf(z);
        if !z.is_finite() || d <= 0.0 {
            break;
        }
        let err = if z < 0.0 { normal_cdf(z) - u } else { (1.0 - u) - normal_cdf(-z) };
        let next = z - err / d;
        if !next.is_finite() {
            break;
        }
        z = next;
    }
    z
}

fn student_t_ln_pdf(t: f64, df: f64) -> f64 {
    ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - (df + 1.0) / 2.0 * (t * t / df).ln_1p()
}

/// Standard Student-t CDF via the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn student_t_lower_tail(t: f64, df: f64) -> f64 {
    // t <= 0
    0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Standard Student-t inverse CDF by safeguarded Newton iteration.
pub fn student_t_quantile(u: f64, df: f64) -> f64 {
    if u == 0.5 {
        return 0.0;
    }
    if u > 0.5 {
        return -student_t_quantile(1.0 - u, df);
    }
    // Solve lower_tail(t) = u for t < 0.
    let mut hi = 0.0;
    let mut lo = normal_quantile(u).min(-1.0);
    while student_t_lower_tail(lo, df) > u {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            return lo;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = student_t_lower_tail(t, df) - u;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let d = student_t_ln_pdf(t, df).exp();
        let mut next = t - f / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= 1e-15 * t.abs().max(1e-300) {
            return next;
        }
        t = next;
    }
    t
}

fn empirical_spacing(sorted: &[f64]) -> f64 {
    (sorted[sorted.len() - 1] - sorted[0]) / (sorted.len() - 1) as f64
}

fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    let step = 1.0 / (n + 1) as f64;
    let h = empirical_spacing(sorted);
    if x <= sorted[0] {
        return step * ((x - sorted[0]) / h).exp();
    }
    if x >= sorted[n - 1] {
        return 1.0 - step * (-(x - sorted[n - 1]) / h).exp();
    }
    // sorted[r] <= x < sorted[r + 1], knots at u = (r + 1) / (n + 1)
    let r = sorted.partition_point(|&v| v <= x) - 1;
    let (a, b) = (sorted[r], sorted[r + 1]);
    step * ((r + 1) as f64 + (x - a) / (b - a))
}

fn empirical_pdf(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    let step = 1.0 / (n + 1) as f64;
    let h = empirical_spacing(sorted);
    if x <= sorted[0] {
        return step * ((x - sorted[0]) / h).exp() / h;
    }
    if x >= sorted[n - 1] {
        return step * (-(x - sorted[n - 1]) / h).exp() / h;
    }
    let r = sorted.partition_point(|&v| v <= x) - 1;
    step / (sorted[r + 1] - sorted[r])
}

fn empirical_quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let step = 1.0 / (n + 1) as f64;
    let h = empirical_spacing(sorted);
    if u <= step {
        return sorted[0] + h * (u / step).ln();
    }
    if u >= 1.0 - step {
        return sorted[n - 1] - h * ((1.0 - u) / step).ln();
    }
    let pos = u / step - 1.0;
    let r = (pos.floor() as usize).min(n - 2);
    let frac = pos - r as f64;
    sorted[r] + frac * (sorted[r + 1] - sorted[r])
}

/// Fits a marginal of the requested kind to one column.
///
/// Student-t fits maximize the profile log-likelihood over the degrees of
/// freedom by golden-section search, re-estimating location and scale for
/// each candidate.
pub fn fit_marginal(column: &[f64], kind: MarginalKind) -> Result<MarginalModel> {
    if column.iter().any(|v| !v.is_finite()) {
        return Err(KnockoffError::InvalidInput("column contains non-finite values".into()));
    }
    let stats = ColumnStats::of(column);
    if stats.variance.is_nan() || stats.variance < DEGENERATE_VARIANCE {
        return Err(KnockoffError::DegenerateColumn { column: "marginal fit input".into(), variance: stats.variance });
    }
    if kind != MarginalKind::Empirical && column.len() < MIN_PARAMETRIC_SAMPLE {
        return Err(KnockoffError::InvalidInput(format!(
            "parametric fit needs at least {MIN_PARAMETRIC_SAMPLE} observations, got {}",
            column.len()
        )));
    }
    let model = match kind {
        MarginalKind::Normal => MarginalModel::Normal { location: stats.mean, scale: stats.std_dev() },
        MarginalKind::StudentT => fit_student_t(column, stats),
        MarginalKind::Empirical => {
            let mut sorted_sample = column.to_vec();
            sorted_sample.sort_by(f64::total_cmp);
            MarginalModel::Empirical { sorted_sample }
        }
    };
    model.validate()?;
    Ok(model)
}

/// Location and scale maximizing the likelihood for fixed degrees of freedom (EM iterations).
fn student_t_location_scale(x: &[f64], df: f64, start: ColumnStats) -> (f64, f64) {
    let mut loc = start.mean;
    let mut scale2 = start.variance * ((df - 2.0) / df).max(0.05);
    let n = x.len() as f64;
    for _ in 0..500 {
        let mut sw = 0.0;
        let mut swx = 0.0;
        let weights: Vec<f64> = x
            .iter()
            .map(|&v| {
                let d = v - loc;
                (df + 1.0) / (df + d * d / scale2)
            })
            .collect();
        for (w, &v) in weights.iter().zip(x) {
            sw += w;
            swx += w * v;
        }
        let new_loc = swx / sw;
        let new_scale2 = weights.iter().zip(x).map(|(w, &v)| w * (v - new_loc) * (v - new_loc)).sum::<f64>() / n;
        let converged =
            (new_loc - loc).abs() < 1e-12 * (1.0 + loc.abs()) && (new_scale2 - scale2).abs() < 1e-12 * scale2;
        loc = new_loc;
        scale2 = new_scale2;
        if converged {
            break;
        }
    }
    (loc, scale2.sqrt())
}

fn fit_student_t(x: &[f64], stats: ColumnStats) -> MarginalModel {
    let model_at = |df: f64| {
        let (location, scale) = student_t_location_scale(x, df, stats);
        MarginalModel::StudentT { location, scale, degrees_of_freedom: df }
    };
    let neg_ll = |df: f64| -model_at(df).log_likelihood(x).unwrap_or(f64::NEG_INFINITY);
    let df = golden_section_min(neg_ll, DF_SEARCH_RANGE.0, DF_SEARCH_RANGE.1, DF_TOLERANCE);
    model_at(df)
}

/// Minimizes a unimodal function on `[a, b]` to within `tol`.
pub(crate) fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    // keep whichever end-bracket point is best
    let mid = 0.5 * (a + b);
    [(a, f(a)), (mid, f(mid)), (b, f(b))].into_iter().min_by(|l, r| l.1.total_cmp(&r.1)).map(|(x, _)| x).unwrap_or(mid)
}

/// Fits one marginal per column, all of the same kind.
pub fn fit_marginals(data: &DataMatrix, kind: MarginalKind) -> Result<Vec<MarginalModel>> {
    fit_marginals_per_column(data, &vec![kind; data.ncols()])
}

pub fn fit_marginals_per_column(data: &DataMatrix, kinds: &[MarginalKind]) -> Result<Vec<MarginalModel>> {
    if kinds.len() != data.ncols() {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("{} marginal kinds", data.ncols()),
            actual: format!("{}", kinds.len()),
        });
    }
    data.columns()
        .zip(kinds)
        .enumerate()
        .map(|(j, (col, &kind))| {
            fit_marginal(col, kind).map_err(|e| match e {
                KnockoffError::DegenerateColumn { variance, .. } => {
                    KnockoffError::DegenerateColumn { column: data.names()[j].clone(), variance }
                }
                other => other,
            })
        })
        .collect()
}

/// Per-column affine map to mean 0 and (biased) variance 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        let mut out = data.clone();
        for j in 0..data.ncols() {
            let (loc, sc) = (self.location[j], self.scale[j]);
            out.col_mut(j).iter_mut().for_each(|v| *v = (*v - loc) / sc);
        }
        Ok(out)
    }

    pub fn invert(&self, data: &DataMatrix) -> Result<DataMatrix> {
        self.check(data)?;
        let mut out = data.clone();
        for j in 0..data.ncols() {
            let (loc, sc) = (self.location[j], self.scale[j]);
            out.col_mut(j).iter_mut().for_each(|v| *v = *v * sc + loc);
        }
        Ok(out)
    }

    fn check(&self, data: &DataMatrix) -> Result<()> {
        if self.location.len() != data.ncols() || self.scale.len() != data.ncols() {
            return Err(KnockoffError::ShapeMismatch {
                expected: format!("{} columns", self.location.len()),
                actual: format!("{} columns", data.ncols()),
            });
        }
        Ok(())
    }
}

/// Scales every column to mean 0 and variance 1.
pub fn standardize(data: &DataMatrix) -> Result<(DataMatrix, Standardization)> {
    let mut location = Vec::with_capacity(data.ncols());
    let mut scale = Vec::with_capacity(data.ncols());
    for (j, col) in data.columns().enumerate() {
        let stats = ColumnStats::of(col);
        if stats.variance.is_nan() || stats.variance < DEGENERATE_VARIANCE {
            return Err(KnockoffError::DegenerateColumn { column: data.names()[j].clone(), variance: stats.variance });
        }
        location.push(stats.mean);
        scale.push(stats.std_dev());
    }
    let t = Standardization { location, scale };
    Ok((t.apply(data)?, t))
}
