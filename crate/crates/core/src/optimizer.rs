//! Penalized optimization of the knockoff matrix.
//!
//! The minimized quantity is
//!
//! ```text
//! L = w_obj · Σ_i corr(X_i, X̃_i)²
//!   + w_corr · R_corr + w_coskew · R_coskew + w_cokurt · R_cokurt
//!   + w_ks · Σ_i D_i²
//! ```
//!
//! where `R_*` are the aggregate moment residuals and `D_i` is the KS
//! statistic of knockoff column `i` against feature `i`'s marginal.

use std::time::{Duration, Instant};

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::kstest::{ks_p_value, ks_penalty_with_gradient, ks_statistic, near_maximal_deviations};
use crate::marginals::MarginalModel;
use crate::matrix::DataMatrix;
use crate::moments::{
    constraint_values_from, standardize_all, AggregateResiduals, ColumnStats, ConstraintSet, ConstraintValue,
    ResidualRow, Standardized, Workspace,
};

const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyWeights {
    pub correlation: f64,
    pub coskewness: f64,
    pub cokurtosis: f64,
    pub ks: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { correlation: 1e2, coskewness: 1e1, cokurtosis: 1e0, ks: 1e1 }
    }
}

impl PenaltyWeights {
    pub fn zero() -> Self {
        Self { correlation: 0.0, coskewness: 0.0, cokurtosis: 0.0, ks: 0.0 }
    }

    fn moment_weights(&self) -> [f64; 3] {
        [self.correlation, self.coskewness, self.cokurtosis]
    }

    /// Parses `corr,coskew,cokurt,ks`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<f64> = text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| KnockoffError::Config(format!("bad weight list `{text}`: {e}")))?;
        match parts[..] {
            [correlation, coskewness, cokurtosis, ks] => Ok(Self { correlation, coskewness, cokurtosis, ks }),
            _ => Err(KnockoffError::Config(format!("expected 4 weights corr,coskew,cokurt,ks, got `{text}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Multiplier on each step: the Gauss-Newton direction, or `n · ∇L` for
    /// gradient descent (sample-moment gradients scale like `1/n`).
    pub learning_rate: f64,
    /// Stop once an iteration improves `L` by less than this.
    pub tolerance: f64,
    pub penalty_weights: PenaltyWeights,
    pub objective_weight: f64,
    pub seed: u64,
    /// Re-center and re-scale every knockoff column to its feature's mean and
    /// variance after each step.
    pub restandardize: bool,
    /// Record every constraint's achieved value at every iteration.
    pub detail_trace: bool,
    /// Iterations at which a copy of the knockoffs is kept.
    pub snapshot_iterations: Vec<usize>,
    pub method: Method,
    /// Initial Gauss-Newton damping, relative to the mean diagonal of `J Jᵀ`.
    pub damping: f64,
    pub damping_floor: f64,
    /// KS deviations within `ks_band / n` of the statistic each get a
    /// Gauss-Newton row.
    pub ks_band: f64,
}

/// How each iteration's step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Damped Gauss-Newton on the residuals whose squares make up `L`.
    GaussNewton,
    /// Steepest descent on `L` with step halving.
    GradientDescent,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            learning_rate: 1.0,
            tolerance: 1e-8,
            penalty_weights: PenaltyWeights::default(),
            objective_weight: 1.0,
            seed: 0,
            restandardize: false,
            detail_trace: false,
            snapshot_iterations: vec![3, 10, 20],
            method: Method::GaussNewton,
            damping: 1e-3,
            damping_floor: 1e-9,
            ks_band: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.penalty_weights;
        let all = [w.correlation, w.coskewness, w.cokurtosis, w.ks, self.objective_weight];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(KnockoffError::Config("weights must be finite and non-negative".into()));
        }
        if self.max_iterations < 1 {
            return Err(KnockoffError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(KnockoffError::Config(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        for (name, v) in [("damping", self.damping), ("damping floor", self.damping_floor), ("KS band", self.ks_band)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(KnockoffError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(KnockoffError::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// One evaluation of the penalized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Sum of squared feature-knockoff correlations.
    pub objective: f64,
    pub residuals: AggregateResiduals,
    pub ks_penalty_total: f64,
    /// Full penalized objective `L`.
    pub penalized: f64,
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constraint_values: Option<Vec<ConstraintValue>>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub knockoffs: DataMatrix,
}

#[derive(Debug, Clone)]
pub struct KnockoffResult {
    /// Lowest-`L` iterate.
    pub knockoffs: DataMatrix,
    /// State of the initial guess before any step.
    pub initial: IterationTrace,
    /// One entry per executed iteration.
    pub trace: Vec<IterationTrace>,
    pub best_iteration: usize,
    pub correlations: Vec<f64>,
    pub ks_p_values: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
}

/// Receives trace entries as soon as they are computed.
pub trait TraceSink {
    fn record(&mut self, entry: &IterationTrace) -> Result<()>;
}

impl TraceSink for () {
    fn record(&mut self, _entry: &IterationTrace) -> Result<()> {
        Ok(())
    }
}

/// Sum of squared correlations between each feature and its own knockoff.
pub fn objective(features: &DataMatrix, knockoffs: &DataMatrix) -> Result<f64> {
    features.check_same_shape(knockoffs)?;
    let f = standardize_all(features, false)?;
    let k = standardize_all(knockoffs, true)?;
    Ok(f.iter().zip(&k).map(|(a, b)| corr_of(a, b).powi(2)).sum())
}

/// Per-feature correlation with its knockoff.
pub fn feature_knockoff_correlations(features: &DataMatrix, knockoffs: &DataMatrix) -> Result<Vec<f64>> {
    features.check_same_shape(knockoffs)?;
    let f = standardize_all(features, false)?;
    let k = standardize_all(knockoffs, true)?;
    Ok(f.iter().zip(&k).map(|(a, b)| corr_of(a, b)).collect())
}

fn corr_of(a: &Standardized, b: &Standardized) -> f64 {
    a.z.iter().zip(&b.z).map(|(x, y)| x * y).sum::<f64>() / a.z.len() as f64
}

/// Descent update `knockoffs - learning_rate · gradient`.
pub fn step(knockoffs: &DataMatrix, gradient: &DataMatrix, learning_rate: f64) -> Result<DataMatrix> {
    knockoffs.check_same_shape(gradient)?;
    let mut out = knockoffs.clone();
    if learning_rate == 0.0 {
        return Ok(out);
    }
    for (v, g) in out.as_mut_slice().iter_mut().zip(gradient.as_slice()) {
        *v -= learning_rate * g;
    }
    Ok(out)
}

/// Value and parts of the penalized objective at one iterate.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub penalized: f64,
    pub objective: f64,
    pub residuals: AggregateResiduals,
    pub ks_penalties: Vec<f64>,
    pub gradient: Option<DataMatrix>,
}

/// The penalized objective for fixed features, marginals and constraints.
pub struct PenalizedObjective<'a> {
    features: Vec<Standardized>,
    marginals: &'a [MarginalModel],
    cs: &'a ConstraintSet,
    weights: PenaltyWeights,
    objective_weight: f64,
    ks_band: f64,
    p: usize,
}

impl<'a> PenalizedObjective<'a> {
    pub fn new(
        features: &DataMatrix,
        marginals: &'a [MarginalModel],
        cs: &'a ConstraintSet,
        weights: PenaltyWeights,
        objective_weight: f64,
    ) -> Result<Self> {
        if marginals.len() != features.ncols() || cs.num_features() != features.ncols() {
            return Err(KnockoffError::ShapeMismatch {
                expected: format!("{} marginals and constraint features", features.ncols()),
                actual: format!("{} marginals, {} constraint features", marginals.len(), cs.num_features()),
            });
        }
        Ok(Self {
            features: standardize_all(features, false)?,
            marginals,
            cs,
            weights,
            objective_weight,
            ks_band: 0.0,
            p: features.ncols(),
        })
    }

    pub fn with_ks_band(mut self, band: f64) -> Self {
        self.ks_band = band;
        self
    }

    fn workspace(&self, knockoffs: &DataMatrix) -> Result<Workspace> {
        if knockoffs.ncols() != self.p || knockoffs.nrows() != self.features[0].z.len() {
            return Err(KnockoffError::ShapeMismatch {
                expected: format!("{}x{}", self.features[0].z.len(), self.p),
                actual: format!("{}x{}", knockoffs.nrows(), knockoffs.ncols()),
            });
        }
        Workspace::with_features(self.features.clone(), knockoffs)
    }

    pub fn evaluate(&self, knockoffs: &DataMatrix, with_gradient: bool) -> Result<Evaluation> {
        let ws = self.workspace(knockoffs)?;
        self.evaluate_in(&ws, knockoffs, with_gradient)
    }

    fn evaluate_in(&self, ws: &Workspace, knockoffs: &DataMatrix, with_gradient: bool) -> Result<Evaluation> {
        let n = knockoffs.nrows() as f64;
        let mut grad = with_gradient.then(|| knockoffs.zeros_like());
        let residuals = ws.residuals_and_gradient(self.cs, self.weights.moment_weights(), grad.as_mut());

        let mut obj = 0.0;
        for (i, (f, k)) in ws.features.iter().zip(&ws.knockoffs).enumerate() {
            let rho = corr_of(f, k);
            obj += rho * rho;
            if let Some(g) = grad.as_mut() {
                let c = 2.0 * self.objective_weight * rho / (n * k.sigma);
                for ((gs, fz), kz) in g.col_mut(i).iter_mut().zip(&f.z).zip(&k.z) {
                    *gs += c * (fz - rho * kz);
                }
            }
        }

        let mut ks_penalties = Vec::with_capacity(self.p);
        for (i, model) in self.marginals.iter().enumerate() {
            let (pen, g_ks) = ks_penalty_with_gradient(knockoffs.col(i), model)?;
            ks_penalties.push(pen);
            if let Some(g) = grad.as_mut() {
                for (gs, d) in g.col_mut(i).iter_mut().zip(&g_ks) {
                    *gs += self.weights.ks * d;
                }
            }
        }

        let w = self.weights.moment_weights();
        let penalized = self.objective_weight * obj
            + residuals.iter().zip(&w).map(|(r, w)| r * w).sum::<f64>()
            + self.weights.ks * ks_penalties.iter().sum::<f64>();
        Ok(Evaluation {
            penalized,
            objective: obj,
            residuals: AggregateResiduals::from_array(residuals),
            ks_penalties,
            gradient: grad,
        })
    }

    pub fn constraint_values(&self, knockoffs: &DataMatrix) -> Result<Vec<ConstraintValue>> {
        Ok(constraint_values_from(&self.workspace(knockoffs)?, self.cs))
    }

    /// `L` written as a sum of squares `Σ r_a²`, with each residual's
    /// (sub)gradient. Rows are the feature-knockoff correlations, every
    /// constraint deviation, and the KS statistics, each scaled by the
    /// square root of its weight.
    pub(crate) fn residual_rows(&self, knockoffs: &DataMatrix) -> Result<Vec<ResidualRow>> {
        let ws = self.workspace(knockoffs)?;
        let n = knockoffs.nrows();
        let nf = n as f64;
        let mut rows = Vec::with_capacity(2 * self.p + self.cs.len());
        let w_obj = self.objective_weight.sqrt();
        for (i, (f, k)) in ws.features.iter().zip(&ws.knockoffs).enumerate() {
            let rho = corr_of(f, k);
            let c = w_obj / (nf * k.sigma);
            let g = f.z.iter().zip(&k.z).map(|(fz, kz)| c * (fz - rho * kz)).collect();
            rows.push(ResidualRow { value: w_obj * rho, blocks: vec![(i, g)] });
        }
        ws.residual_rows(self.cs, self.weights.moment_weights(), &mut rows);
        let w_ks = self.weights.ks.sqrt();
        let band = self.ks_band / nf;
        for (i, model) in self.marginals.iter().enumerate() {
            // D is a maximum, so every near-maximal deviation gets a row;
            // moving only the arg-max point lets its neighbours take over.
            for dev in near_maximal_deviations(knockoffs.col(i), model, band)? {
                let mut g = vec![0.0; n];
                g[dev.index] = w_ks * dev.sign * model.pdf(knockoffs.get(dev.index, i));
                rows.push(ResidualRow { value: w_ks * dev.value, blocks: vec![(i, g)] });
            }
        }
        Ok(rows)
    }
}

/// Damped Gauss-Newton direction `-Jᵀ (J Jᵀ + λ I)⁻¹ r` for residual rows
/// over an `n × p` knockoff matrix. `damping` is relative to the mean
/// diagonal of `J Jᵀ`.
pub(crate) fn gauss_newton_direction(rows: &[ResidualRow], n: usize, p: usize, damping: f64) -> Option<DataMatrix> {
    let m = rows.len();
    let mut by_column: Vec<Vec<(usize, &[f64])>> = vec![Vec::new(); p];
    for (a, row) in rows.iter().enumerate() {
        for (c, block) in &row.blocks {
            by_column[*c].push((a, block.as_slice()));
        }
    }
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for entries in &by_column {
        for (ia, &(a, va)) in entries.iter().enumerate() {
            for &(b, vb) in &entries[ia..] {
                let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
                gram[(a, b)] += dot;
                if a != b {
                    gram[(b, a)] += dot;
                }
            }
        }
    }
    let mean_diag = (0..m).map(|a| gram[(a, a)]).sum::<f64>() / m.max(1) as f64;
    let lambda = damping * mean_diag.max(f64::MIN_POSITIVE) + 1e-300;
    for a in 0..m {
        gram[(a, a)] += lambda;
    }
    let rhs = DVector::from_iterator(m, rows.iter().map(|r| r.value));
    let y = gram.cholesky()?.solve(&rhs);
    let mut dir = DataMatrix::zeros(n, p);
    for (a, row) in rows.iter().enumerate() {
        for (c, block) in &row.blocks {
            for (d, v) in dir.col_mut(*c).iter_mut().zip(block) {
                *d -= y[a] * v;
            }
        }
    }
    dir.as_slice().iter().all(|v| v.is_finite()).then_some(dir)
}

fn restandardize_to(knockoffs: &mut DataMatrix, features: &DataMatrix) {
    for j in 0..features.ncols() {
        let target = ColumnStats::of(features.col(j));
        let current = ColumnStats::of(knockoffs.col(j));
        if current.variance <= 0.0 {
            continue;
        }
        let scale = (target.variance / current.variance).sqrt();
        for v in knockoffs.col_mut(j) {
            *v = target.mean + (*v - current.mean) * scale;
        }
    }
}

fn trace_entry(
    iteration: usize,
    eval: &Evaluation,
    learning_rate: f64,
    values: Option<Vec<ConstraintValue>>,
    started: Instant,
) -> IterationTrace {
    IterationTrace {
        iteration,
        objective: eval.objective,
        residuals: eval.residuals,
        ks_penalty_total: eval.ks_penalties.iter().sum(),
        penalized: eval.penalized,
        learning_rate,
        constraint_values: values,
        wall_clock: started.elapsed(),
    }
}

/// Minimizes the penalized objective starting from `initial_guess`.
pub fn optimize(
    features: &DataMatrix,
    initial_guess: &DataMatrix,
    marginals: &[MarginalModel],
    cs: &ConstraintSet,
    cfg: &OptimizerConfig,
) -> Result<KnockoffResult> {
    optimize_with_sink(features, initial_guess, marginals, cs, cfg, &mut ())
}

/// [`optimize`], handing each trace entry (the initial state first) to `sink`.
pub fn optimize_with_sink(
    features: &DataMatrix,
    initial_guess: &DataMatrix,
    marginals: &[MarginalModel],
    cs: &ConstraintSet,
    cfg: &OptimizerConfig,
    sink: &mut dyn TraceSink,
) -> Result<KnockoffResult> {
    cfg.validate()?;
    features.check_same_shape(initial_guess)?;
    if !initial_guess.is_finite() {
        return Err(KnockoffError::InvalidInput("initial guess contains non-finite values".into()));
    }
    let started = Instant::now();
    let problem = PenalizedObjective::new(features, marginals, cs, cfg.penalty_weights, cfg.objective_weight)?
        .with_ks_band(cfg.ks_band);
    let detail = |k: &DataMatrix| -> Result<Option<Vec<ConstraintValue>>> {
        if cfg.detail_trace {
            problem.constraint_values(k).map(Some)
        } else {
            Ok(None)
        }
    };
    let (n, p) = (features.nrows(), features.ncols());

    let mut current = initial_guess.clone();
    let mut eval = problem.evaluate(&current, cfg.method == Method::GradientDescent)?;
    if !eval.penalized.is_finite() {
        return Err(KnockoffError::Numeric("penalized objective is not finite at the initial guess".into()));
    }
    let initial = trace_entry(0, &eval, cfg.learning_rate, detail(&current)?, started);
    sink.record(&initial)?;

    let mut lr = cfg.learning_rate;
    let mut damping = cfg.damping;
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut snapshots = Vec::new();
    let mut best = (eval.penalized, 0usize, current.clone());

    for iteration in 1..=cfg.max_iterations {
        let gradient = eval.gradient.take();
        let rows = match cfg.method {
            Method::GaussNewton => Some(problem.residual_rows(&current)?),
            Method::GradientDescent => None,
        };
        let mut accepted = None;
        let mut saw_finite = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = match (&rows, &gradient) {
                (Some(rows), _) => {
                    gauss_newton_direction(rows, n, p, damping).map(|dir| step(&current, &dir, -lr)).transpose()?
                }
                // gradients of sample moments scale like 1/n
                (None, Some(g)) => Some(step(&current, g, lr * n as f64)?),
                (None, None) => unreachable!("gradient descent evaluates gradients"),
            };
            if let Some(mut trial) = trial {
                if cfg.restandardize {
                    restandardize_to(&mut trial, features);
                }
                match problem.evaluate(&trial, cfg.method == Method::GradientDescent) {
                    Ok(e) if e.penalized.is_finite() => {
                        saw_finite = true;
                        if e.penalized <= eval.penalized {
                            accepted = Some((trial, e));
                            break;
                        }
                    }
                    Ok(_) | Err(KnockoffError::DegenerateColumn { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            match cfg.method {
                Method::GaussNewton => damping = (damping * 4.0).max(1e-12),
                Method::GradientDescent => lr *= 0.5,
            }
        }
        let Some((next, next_eval)) = accepted else {
            if !saw_finite {
                return Err(KnockoffError::Numeric(format!(
                    "objective stayed non-finite after {MAX_HALVINGS} step reductions at iteration {iteration}"
                )));
            }
            debug!("no descent after {MAX_HALVINGS} step reductions; stopping at iteration {iteration}");
            break;
        };
        if cfg.method == Method::GaussNewton {
            damping = (damping / 3.0).max(cfg.damping_floor);
        }
        let improvement = eval.penalized - next_eval.penalized;
        current = next;
        eval = next_eval;
        let rate = if cfg.method == Method::GaussNewton { damping } else { lr };
        let entry = trace_entry(iteration, &eval, rate, detail(&current)?, started);
        sink.record(&entry)?;
        trace.push(entry);
        if cfg.snapshot_iterations.contains(&iteration) {
            snapshots.push(Snapshot { iteration, knockoffs: current.clone() });
        }
        if eval.penalized < best.0 {
            best = (eval.penalized, iteration, current.clone());
        }
        if improvement < cfg.tolerance {
            break;
        }
    }

    let (_, best_iteration, knockoffs) = best;
    let correlations = feature_knockoff_correlations(features, &knockoffs)?;
    let ks_p_values = knockoffs
        .columns()
        .zip(marginals)
        .map(|(col, m)| ks_statistic(col, m).map(|d| ks_p_value(d, col.len())))
        .collect::<Result<Vec<_>>>()?;
    Ok(KnockoffResult { knockoffs, initial, trace, best_iteration, correlations, ks_p_values, snapshots })
}
