//! Replicated simulation studies and their tabular output.

mod config;
mod study;

use std::io::Write;

pub use config::{
    parse_bounds, parse_key_values, parse_params, ExperimentConfig, COMPARISON_LEVELS,
    ESTIMATION_LEVELS, EXPERIMENT_POP_SIZE,
};
pub use study::{
    replicate_trajectory, run_estimation_study, run_filter_comparison, ComparisonReport,
    EstimationReport, ExcludedReplicate,
};

use crate::error::{Error, Result};
use crate::metrics::quantiles;

/// Named rows of quantiles at shared probability levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    pub levels: Vec<f64>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl QuantileTable {
    pub fn new(levels: Vec<f64>) -> Self {
        Self {
            levels,
            rows: Vec::new(),
        }
    }

    /// Appends the quantiles of `values` as a row.
    pub fn push_sample(&mut self, name: impl Into<String>, values: &[f64]) -> Result<()> {
        let row = quantiles(values, &self.levels)?;
        self.rows.push((name.into(), row));
        Ok(())
    }

    pub fn push_row(&mut self, name: impl Into<String>, row: Vec<f64>) -> Result<()> {
        if row.len() != self.levels.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} entries for {} levels",
                row.len(),
                self.levels.len()
            )));
        }
        self.rows.push((name.into(), row));
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.as_slice())
    }

    /// `series,<level>,...` header followed by one line per row. Each line of
    /// `comment` is emitted first, prefixed with `# `.
    pub fn write_csv<W: Write>(&self, comment: &str, mut w: W) -> Result<()> {
        for line in comment.lines() {
            writeln!(w, "# {line}")?;
        }
        write!(w, "series")?;
        for l in &self.levels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (name, row) in &self.rows {
            write!(w, "{name}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
