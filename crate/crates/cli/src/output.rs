//! CSV writers. Every file has a header row, `.` decimals and LF endings.

use std::path::Path;

use nalgebra::DMatrix;
use nnparafac2::montecarlo::{DetailRow, Stats, SummaryRow};
use nnparafac2::RunReport;

use crate::error::Result;
use crate::format::format_f64;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?)
}

/// Columns `c1..cr`, one row per matrix row.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record((1..=m.ncols()).map(|j| format!("c{j}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|&v| format_f64(v)))?;
    }
    w.flush().map_err(crate::error::CliError::io(path))
}

/// Objective and per-slice `μ_k` after every iteration. Classic runs have no
/// `μ` columns.
pub fn write_report(path: &Path, report: &RunReport, num_slices: usize) -> Result<()> {
    let mut w = writer(path)?;
    let with_mu = !report.mu_trace.is_empty();
    let mut header = vec!["iteration".to_string(), "objective".to_string()];
    if with_mu {
        header.extend((1..=num_slices).map(|k| format!("mu_{k}")));
    }
    w.write_record(&header)?;
    for (i, obj) in report.objective_trace.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), format_f64(*obj)];
        if with_mu {
            rec.extend(report.mu_trace[i].iter().map(|&m| format_f64(m)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(crate::error::CliError::io(path))
}

/// Final fit and coupling residual of every slice.
pub fn write_residuals(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["slice", "fit_residual", "coupling_residual"])?;
    for (k, (f, c)) in report.fit_residuals.iter().zip(&report.coupling_residuals).enumerate() {
        w.write_record([(k + 1).to_string(), format_f64(*f), format_f64(*c)])?;
    }
    w.flush().map_err(crate::error::CliError::io(path))
}

/// One row per start of a multi-start fit.
pub fn write_attempts(path: &Path, rows: &[(u64, f64, usize, &str)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["init", "init_seed", "relative_fit", "iterations", "termination"])?;
    for (i, (seed, fit, iters, term)) in rows.iter().enumerate() {
        w.write_record([(i + 1).to_string(), seed.to_string(), format_f64(*fit), iters.to_string(), term.to_string()])?;
    }
    w.flush().map_err(crate::error::CliError::io(path))
}

pub const DETAIL_HEADER: [&str; 8] =
    ["sigma", "replicate", "solver", "best_error", "single_init_error", "best_fit", "iterations", "seconds"];

pub fn write_detail(path: &Path, rows: &[DetailRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(DETAIL_HEADER)?;
    for r in rows {
        w.write_record([
            format_f64(r.sigma),
            r.replicate.to_string(),
            r.solver.name().to_string(),
            format_f64(r.best_error),
            format_f64(r.single_init_error),
            format_f64(r.best_fit),
            r.iterations.to_string(),
            format_f64(r.seconds),
        ])?;
    }
    w.flush().map_err(crate::error::CliError::io(path))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["sigma".to_string(), "solver".to_string(), "count".to_string()];
    for variant in ["best", "single"] {
        for stat in ["mean", "median", "q20", "q80"] {
            header.push(format!("{variant}_{stat}"));
        }
    }
    w.write_record(&header)?;
    let stats = |s: &Stats| [s.mean, s.median, s.q20, s.q80].map(format_f64);
    for r in rows {
        let mut rec = vec![format_f64(r.sigma), r.solver.name().to_string(), r.count.to_string()];
        rec.extend(stats(&r.best));
        rec.extend(stats(&r.single));
        w.write_record(&rec)?;
    }
    w.flush().map_err(crate::error::CliError::io(path))
}
