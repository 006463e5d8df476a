use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::format_f64;
use crate::moments::ConstraintValue;
use crate::optimizer::{IterationTrace, TraceSink};

pub const TRACE_HEADER: [&str; 7] =
    ["iteration", "objective", "corr_residual", "coskew_residual", "cokurt_residual", "ks_penalty", "elapsed_ms"];

/// Writes one CSV row per trace entry and flushes it immediately, so a long
/// run can be watched while it is still going.
pub struct CsvTraceSink {
    out: BufWriter<File>,
}

impl CsvTraceSink {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", TRACE_HEADER.join(","))?;
        out.flush()?;
        Ok(Self { out })
    }
}

impl TraceSink for CsvTraceSink {
    fn record(&mut self, e: &IterationTrace) -> Result<()> {
        let r = e.residuals.as_array();
        writeln!(
            self.out,
            "{},{},{},{},{},{},{}",
            e.iteration,
            format_f64(e.objective),
            format_f64(r[0]),
            format_f64(r[1]),
            format_f64(r[2]),
            format_f64(e.ks_penalty_total),
            e.wall_clock.as_millis()
        )?;
        self.out.flush()?;
        Ok(())
    }
}

/// Per-iteration constraint values, as written to `detail_trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailEntry {
    pub iteration: usize,
    pub values: Vec<ConstraintValue>,
}

/// Collects the detail entries of a trace. Entries recorded without detail
/// are skipped.
pub fn detail_entries<'a>(trace: impl IntoIterator<Item = &'a IterationTrace>) -> Vec<DetailEntry> {
    trace
        .into_iter()
        .filter_map(|e| e.constraint_values.as_ref().map(|v| DetailEntry { iteration: e.iteration, values: v.clone() }))
        .collect()
}

pub fn write_detail_trace(path: impl AsRef<Path>, entries: &[DetailEntry]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, entries)?;
    out.flush()?;
    Ok(())
}

pub fn read_detail_trace(path: impl AsRef<Path>) -> Result<Vec<DetailEntry>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
