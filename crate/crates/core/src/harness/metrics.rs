//! `metrics.csv` writing, reading and multi-run aggregation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dimapg::IterationMetrics;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "iteration,episodes,mean_return,min_agent_return,loss_pre,loss_post,grad_norm,wallclock_s";

pub fn metrics_row(m: &IterationMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        m.iteration,
        m.episodes,
        m.mean_return,
        m.min_agent_return,
        m.loss_pre,
        m.loss_post,
        m.grad_norm,
        m.wallclock_s
    )
}

/// Appends one row per iteration, flushing after each.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, m: &IterationMetrics) -> Result<()> {
        writeln!(self.out, "{}", metrics_row(m))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Numeric rows of a metrics file, header checked against [`METRICS_HEADER`].
pub fn read_metrics(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics header does not match".into()));
    }
    let columns = METRICS_HEADER.split(',').count();
    lines
        .enumerate()
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split(',')
                .map(|v| v.parse().map_err(|_| Error::Format(format!("metrics row {}: bad number `{v}`", i + 1))))
                .collect::<Result<_>>()?;
            if row.len() != columns {
                return Err(Error::Format(format!("metrics row {} has {} columns", i + 1, row.len())));
            }
            Ok(row)
        })
        .collect()
}

/// Column-wise arithmetic mean of equally long runs, as CSV text.
pub fn aggregate_metrics(runs: &[Vec<Vec<f64>>]) -> Result<String> {
    let Some(first) = runs.first() else {
        return Err(Error::Empty("metrics runs"));
    };
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::Format("runs have different lengths".into()));
    }
    let mut out = format!("{METRICS_HEADER}\n");
    for i in 0..first.len() {
        let cells: Vec<String> = (0..first[i].len())
            .map(|c| (runs.iter().map(|r| r[i][c]).sum::<f64>() / runs.len() as f64).to_string())
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
