use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::copula::{fit_copula, initial_guess};
use crate::error::Result;
use crate::marginals::{fit_marginals, MarginalKind};
use crate::moments::build_constraints;
use crate::optimizer::{optimize, OptimizerConfig};
use crate::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub p: usize,
    pub n: usize,
    pub iterations: usize,
}

/// The twelve default cells: `{(4,100),(8,100),(4,1000),(8,1000)} × {3,10,20}`.
pub fn default_grid() -> Vec<GridCell> {
    let mut cells = Vec::new();
    for (p, n) in [(4, 100), (8, 100), (4, 1000), (8, 1000)] {
        for iterations in [3, 10, 20] {
            cells.push(GridCell { p, n, iterations });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub cell: GridCell,
    /// Optimization time; `None` when the cell failed.
    pub elapsed: Option<Duration>,
    pub iterations_run: usize,
    pub error: Option<String>,
}

/// `H:MM:SS`, truncated to whole seconds.
pub fn format_hms(d: Duration) -> String {
    let s = d.as_secs();
    format!("{}:{:02}:{:02}", s / 3600, s / 60 % 60, s % 60)
}

/// Times the optimization of a synthetic data set for one cell. The stopping
/// tolerance is disabled so that every requested iteration is attempted.
fn run_cell(cell: GridCell, seed: u64, marginal: MarginalKind, base: &OptimizerConfig) -> Result<(Duration, usize)> {
    let features = synth::generate(cell.p, cell.n, seed, None)?;
    let marginals = fit_marginals(&features, marginal)?;
    let model = fit_copula(&features, &marginals)?;
    let guess = initial_guess(&features, &model, seed)?;
    let cs = build_constraints(&features)?;
    let cfg = OptimizerConfig {
        max_iterations: cell.iterations,
        tolerance: f64::MIN_POSITIVE,
        detail_trace: false,
        snapshot_iterations: Vec::new(),
        seed,
        ..base.clone()
    };
    let started = Instant::now();
    let result = optimize(&features, &guess, &marginals, &cs, &cfg)?;
    Ok((started.elapsed(), result.trace.len()))
}

/// Runs the cells one after another; a failing cell is recorded and the
/// grid carries on.
pub fn time_grid(cells: &[GridCell], seed: u64, marginal: MarginalKind, base: &OptimizerConfig) -> Vec<GridRow> {
    cells
        .iter()
        .map(|&cell| match run_cell(cell, seed, marginal, base) {
            Ok((elapsed, iterations_run)) => GridRow { cell, elapsed: Some(elapsed), iterations_run, error: None },
            Err(e) => {
                warn!("timing cell p={} n={} iterations={} failed: {e}", cell.p, cell.n, cell.iterations);
                GridRow { cell, elapsed: None, iterations_run: 0, error: Some(e.to_string()) }
            }
        })
        .collect()
}

pub fn write_grid_csv<W: Write>(rows: &[GridRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["p", "n", "iterations", "iterations_run", "time_hms", "time_ms", "error"])?;
    for r in rows {
        let (hms, ms) = match r.elapsed {
            Some(d) => (format_hms(d), d.as_millis().to_string()),
            None => (String::new(), String::new()),
        };
        wtr.write_record([
            r.cell.p.to_string(),
            r.cell.n.to_string(),
            r.cell.iterations.to_string(),
            r.iterations_run.to_string(),
            hms,
            ms,
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_grid_csv_path(rows: &[GridRow], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_grid_csv(rows, std::io::BufWriter::new(file))
}
