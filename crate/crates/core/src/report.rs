//! CSV output. Every file starts with a `# moran-moments <kind> v1` line.

use crate::deterministic::{Distribution, LlnTable};
use crate::error::{Error, Result};
use crate::hierarchy::{MomentSolution, MomentSystem};
use crate::stats::{ComparisonRow, MomentEstimate};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

fn writer(path: &Path, kind: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# moran-moments {kind} v1")?;
    Ok(csv::Writer::from_writer(w))
}

fn finish(mut w: csv::Writer<BufWriter<File>>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// `observable_id,time,estimate,se,prediction,z,verdict`.
pub fn write_comparisons(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = writer(path, "comparisons")?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

/// `observable_id,time,mean,se,replicates`.
pub fn write_estimates(path: &Path, rows: &[MomentEstimate]) -> Result<()> {
    let mut w = writer(path, "estimates")?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w)
}

/// Nonzero entries of the coefficient matrix.
pub fn write_coefficients(path: &Path, system: &MomentSystem) -> Result<()> {
    let mut w = writer(path, "coefficients")?;
    w.write_record([
        "row_index",
        "col_index",
        "coefficient",
        "row_partition",
        "col_partition",
    ])?;
    let idx = system.index();
    for (r, c, v) in system.entries() {
        w.write_record([
            r.to_string(),
            c.to_string(),
            v.to_string(),
            idx[r].to_string(),
            idx[c].to_string(),
        ])?;
    }
    finish(w)
}

/// `time,observable_id,value` with ids `<partition>@<reference>`.
pub fn write_moments(path: &Path, solution: &MomentSolution, reference: &str) -> Result<()> {
    let mut w = writer(path, "moments")?;
    w.write_record(["time", "observable_id", "value"])?;
    for (t, row) in solution.times.iter().zip(&solution.values) {
        for (pp, v) in solution.index.iter().zip(row) {
            w.write_record([t.to_string(), format!("{pp}@{reference}"), v.to_string()])?;
        }
    }
    finish(w)
}

/// `time,type,weight`, one row per type and time.
pub fn write_distribution_path(path: &Path, times: &[f64], path_values: &[Distribution]) -> Result<()> {
    let mut w = writer(path, "distribution")?;
    w.write_record(["time", "type", "weight"])?;
    for (t, d) in times.iter().zip(path_values) {
        for (x, v) in d.weights().iter().enumerate() {
            w.write_record([t.to_string(), d.space().decode(x).to_string(), v.to_string()])?;
        }
    }
    finish(w)
}

/// `pop_size,median_sup_distance,replicates`.
pub fn write_lln(path: &Path, table: &LlnTable) -> Result<()> {
    let mut w = writer(path, "lln")?;
    w.write_record(["pop_size", "median_sup_distance", "replicates"])?;
    for r in &table.rows {
        w.write_record([
            r.pop_size.to_string(),
            r.median_sup_distance.to_string(),
            r.replicates.to_string(),
        ])?;
    }
    finish(w)
}
