//! End-to-end experiments: data, fits, initial guess, optimization, and the
//! artifacts that describe them.

pub mod plot;
pub mod report;
pub mod timegrid;
pub mod trace;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::copula::{fit_copula, initial_guess, GaussianCopulaModel};
use crate::error::{KnockoffError, Result};
use crate::marginals::{fit_marginals_per_column, MarginalKind};
use crate::matrix::DataMatrix;
use crate::moments::build_constraints;
use crate::optimizer::{optimize_with_sink, KnockoffResult, OptimizerConfig};
use crate::synth::{self, SynthMetadata};

pub use plot::emit_plots;
pub use report::Report;
pub use timegrid::{time_grid, GridCell};

pub const DATA_CSV: &str = "data.csv";
pub const DATA_META_JSON: &str = "data.json";
pub const COPULA_JSON: &str = "copula.json";
pub const INITIAL_CSV: &str = "initial_guess.csv";
pub const KNOCKOFF_CSV: &str = "knockoffs.csv";
pub const TRACE_CSV: &str = "trace.csv";
pub const DETAIL_JSON: &str = "detail_trace.json";
pub const REPORT_JSON: &str = "report.json";
pub const TIMING_JSON: &str = "timing.json";
pub const PLOTS_DIR: &str = "plots";

pub fn snapshot_csv(iteration: usize) -> String {
    format!("knockoffs_iter{iteration}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    Synthetic { p: usize, n: usize, seed: u64, beta: Option<f64> },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub input: InputSource,
    /// Marginal family for columns without an explicit entry.
    pub marginal: MarginalKind,
    /// Per-column marginal families, overriding `marginal` when present.
    pub column_marginals: Option<Vec<MarginalKind>>,
    pub optimizer: OptimizerConfig,
    pub out_dir: PathBuf,
    /// Draw SVG charts; needs `optimizer.detail_trace`.
    pub plots: bool,
}

impl ExperimentConfig {
    pub fn synthetic(p: usize, n: usize, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            input: InputSource::Synthetic { p, n, seed, beta: None },
            marginal: MarginalKind::StudentT,
            column_marginals: None,
            optimizer: OptimizerConfig { seed, ..OptimizerConfig::default() },
            out_dir: out_dir.into(),
            plots: true,
        }
    }

    pub fn marginal_kinds(&self, p: usize) -> Result<Vec<MarginalKind>> {
        match &self.column_marginals {
            Some(kinds) if kinds.len() != p => {
                Err(KnockoffError::Config(format!("{} per-column marginals for {p} columns", kinds.len())))
            }
            Some(kinds) => Ok(kinds.clone()),
            None => Ok(vec![self.marginal; p]),
        }
    }
}

/// Wall-clock record of a run, kept out of the report so that the report
/// stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub fit_ms: u128,
    pub initial_guess_ms: u128,
    pub optimize_ms: u128,
    pub iterations_run: usize,
}

pub struct ExperimentOutcome {
    pub report: Report,
    pub result: KnockoffResult,
    pub features: DataMatrix,
    pub model: GaussianCopulaModel,
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| KnockoffError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Generates a synthetic data set and writes it with its metadata sidecar.
pub fn synth_stage(p: usize, n: usize, seed: u64, beta: Option<f64>, out_dir: &Path) -> Result<DataMatrix> {
    prepare_dir(out_dir)?;
    let data = synth::generate(p, n, seed, beta)?;
    data.write_csv_path(out_dir.join(DATA_CSV))?;
    write_json(&out_dir.join(DATA_META_JSON), &SynthMetadata::new(p, n, seed, beta))?;
    Ok(data)
}

/// Fits marginals and the copula, writing `copula.json`.
pub fn fit_stage(features: &DataMatrix, kinds: &[MarginalKind], out_dir: &Path) -> Result<GaussianCopulaModel> {
    prepare_dir(out_dir)?;
    let marginals = fit_marginals_per_column(features, kinds)?;
    let model = fit_copula(features, &marginals)?;
    write_json(&out_dir.join(COPULA_JSON), &model)?;
    Ok(model)
}

pub fn init_stage(features: &DataMatrix, model: &GaussianCopulaModel, seed: u64, out_dir: &Path) -> Result<DataMatrix> {
    prepare_dir(out_dir)?;
    let guess = initial_guess(features, model, seed)?;
    guess.write_csv_path(out_dir.join(INITIAL_CSV))?;
    Ok(guess)
}

pub fn read_copula(path: &Path) -> Result<GaussianCopulaModel> {
    GaussianCopulaModel::from_json(&std::fs::read_to_string(path)?)
}

/// Optimizes from `guess` and writes the knockoffs, trace, snapshots,
/// report, timing and (when asked and possible) plots.
pub fn optimize_stage(
    features: &DataMatrix,
    model: &GaussianCopulaModel,
    guess: &DataMatrix,
    cfg: &OptimizerConfig,
    plots: bool,
    out_dir: &Path,
) -> Result<(Report, KnockoffResult)> {
    let (report, result, timing) = optimize_artifacts(features, model, guess, cfg, plots, out_dir)?;
    write_json(&out_dir.join(TIMING_JSON), &timing)?;
    Ok((report, result))
}

fn optimize_artifacts(
    features: &DataMatrix,
    model: &GaussianCopulaModel,
    guess: &DataMatrix,
    cfg: &OptimizerConfig,
    plots: bool,
    out_dir: &Path,
) -> Result<(Report, KnockoffResult, Timing)> {
    prepare_dir(out_dir)?;
    if model.dim() != features.ncols() {
        return Err(KnockoffError::ShapeMismatch {
            expected: format!("copula of dimension {}", features.ncols()),
            actual: format!("dimension {}", model.dim()),
        });
    }
    let cs = build_constraints(features)?;
    let mut sink = trace::CsvTraceSink::create(out_dir.join(TRACE_CSV))?;
    let started = Instant::now();
    let result = optimize_with_sink(features, guess, &model.marginals, &cs, cfg, &mut sink)?;
    let optimize_ms = started.elapsed().as_millis();

    result.knockoffs.write_csv_path(out_dir.join(KNOCKOFF_CSV))?;
    for snap in &result.snapshots {
        snap.knockoffs.write_csv_path(out_dir.join(snapshot_csv(snap.iteration)))?;
    }
    let detail = trace::detail_entries(std::iter::once(&result.initial).chain(&result.trace));
    if cfg.detail_trace {
        trace::write_detail_trace(out_dir.join(DETAIL_JSON), &detail)?;
        if plots {
            emit_plots(&detail, &cs, features.nrows(), &out_dir.join(PLOTS_DIR))?;
        }
    } else if plots {
        info!("plots need the detail trace; skipping them");
    }

    let report = build_report(features, guess, model, &cs, cfg, &result)?;
    std::fs::write(out_dir.join(REPORT_JSON), report.to_json()?)?;
    let timing = Timing { fit_ms: 0, initial_guess_ms: 0, optimize_ms, iterations_run: result.trace.len() };
    Ok((report, result, timing))
}

pub fn build_report(
    features: &DataMatrix,
    guess: &DataMatrix,
    model: &GaussianCopulaModel,
    cs: &crate::moments::ConstraintSet,
    cfg: &OptimizerConfig,
    result: &KnockoffResult,
) -> Result<Report> {
    use report::{summarize_iterate, SummarySource};
    let marginals = &model.marginals;
    let mut summaries = vec![summarize_iterate(SummarySource::Initial, 0, features, guess, marginals, cs)?];
    for snap in &result.snapshots {
        summaries.push(summarize_iterate(
            SummarySource::Snapshot,
            snap.iteration,
            features,
            &snap.knockoffs,
            marginals,
            cs,
        )?);
    }
    let last =
        summarize_iterate(SummarySource::Final, result.best_iteration, features, &result.knockoffs, marginals, cs)?;
    let correlations: Vec<f64> = last.knockoffs.iter().map(|k| k.feature_correlation).collect();
    let p_values: Vec<f64> = last.knockoffs.iter().map(|k| k.ks_p_value).collect();
    summaries.push(last);
    Ok(Report {
        schema_version: report::SCHEMA_VERSION,
        n: features.nrows(),
        p: features.ncols(),
        names: features.names().to_vec(),
        marginals: marginals.clone(),
        optimizer: cfg.clone(),
        num_pairs: cs.pairs().len(),
        num_constraints: cs.len(),
        iterations_run: result.trace.len(),
        best_iteration: result.best_iteration,
        features: report::column_summaries(features),
        summaries,
        correlation_quartiles: report::Quartiles::of(&correlations),
        ks_p_value_quartiles: report::Quartiles::of(&p_values),
        constraint_trace: std::iter::once(&result.initial).chain(&result.trace).map(Into::into).collect(),
    })
}

/// Runs every stage and writes all artifacts into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.optimizer.validate()?;
    let out = cfg.out_dir.as_path();
    prepare_dir(out)?;
    let features = match &cfg.input {
        InputSource::Synthetic { p, n, seed, beta } => synth_stage(*p, *n, *seed, *beta, out)?,
        InputSource::Csv(path) => {
            let data = DataMatrix::read_csv_path(path)?;
            data.write_csv_path(out.join(DATA_CSV))?;
            data
        }
    };
    let kinds = cfg.marginal_kinds(features.ncols())?;

    let t = Instant::now();
    let model = fit_stage(&features, &kinds, out)?;
    let fit_ms = t.elapsed().as_millis();
    let t = Instant::now();
    let guess = init_stage(&features, &model, cfg.optimizer.seed, out)?;
    let initial_guess_ms = t.elapsed().as_millis();

    let (report, result, timing) = optimize_artifacts(&features, &model, &guess, &cfg.optimizer, cfg.plots, out)?;
    write_json(&out.join(TIMING_JSON), &Timing { fit_ms, initial_guess_ms, ..timing })?;
    Ok(ExperimentOutcome { report, result, features, model })
}
