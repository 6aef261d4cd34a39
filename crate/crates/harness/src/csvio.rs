//! CSV emission and parsing for run traces. Fixed schema
//! `k,samples,loss,grad_norm,stepsize,clip_branch`, numeric fields with 17
//! significant digits so re-reads are bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use sqn_core::trace::{IterationRecord, RunTrace, StepBranch};

use crate::{HarnessError, Result};

pub const RUN_HEADER: &str = "k,samples,loss,grad_norm,stepsize,clip_branch";
pub const AGGREGATE_HEADER: &str = "algorithm,k,samples,loss_mean,loss_std";

pub fn run_trace_csv(trace: &RunTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.records.len() + 1));
    out.push_str(RUN_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{:.17e},{:.17e},{:.17e},{}",
            r.k,
            r.samples,
            r.loss,
            r.grad_norm,
            r.stepsize,
            r.branch.as_str()
        );
    }
    out
}

pub fn write_run_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    std::fs::write(path, run_trace_csv(trace))?;
    Ok(())
}

/// Minimal record parsed back from a run CSV: enough to re-plot.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub samples: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub stepsize: f64,
    pub branch: StepBranch,
}

pub fn read_run_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != RUN_HEADER {
                return Err(HarnessError::Config(format!(
                    "{}: unexpected CSV header {line:?}",
                    path.display()
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(HarnessError::Config(format!(
                "{}: line {} has {} fields, expected 6",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str, raw: &str| {
            HarnessError::Config(format!("{}: line {}: bad {what} {raw:?}", path.display(), i + 1))
        };
        let branch = match fields[5] {
            "constant" => StepBranch::Constant,
            "linear" => StepBranch::Linear,
            "quadratic" => StepBranch::Quadratic,
            other => return Err(parse_err("clip_branch", other)),
        };
        rows.push(CsvRow {
            k: fields[0].parse().map_err(|_| parse_err("k", fields[0]))?,
            samples: fields[1].parse().map_err(|_| parse_err("samples", fields[1]))?,
            loss: fields[2].parse().map_err(|_| parse_err("loss", fields[2]))?,
            grad_norm: fields[3].parse().map_err(|_| parse_err("grad_norm", fields[3]))?,
            stepsize: fields[4].parse().map_err(|_| parse_err("stepsize", fields[4]))?,
            branch,
        });
    }
    Ok(rows)
}

/// One aggregate row: `(algorithm, k, samples, loss_mean, loss_std)`.
pub type AggregateRow = (String, usize, usize, f64, f64);

/// Mean and sample standard deviation of the loss across seeds at matched
/// record positions. Every trace must share the same (k, samples) grid.
pub fn aggregate_rows(algorithm: &str, traces: &[&[IterationRecord]]) -> Result<Vec<AggregateRow>> {
    let first = traces
        .first()
        .ok_or_else(|| HarnessError::Config("aggregation needs at least one trace".into()))?;
    for t in traces {
        if t.len() != first.len() {
            return Err(HarnessError::Config(format!(
                "{algorithm}: traces have mismatched record counts ({} vs {})",
                t.len(),
                first.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(first.len());
    for i in 0..first.len() {
        let (k, samples) = (first[i].k, first[i].samples);
        for t in traces {
            if t[i].k != k || t[i].samples != samples {
                return Err(HarnessError::Config(format!(
                    "{algorithm}: record {i} is not sample-aligned across seeds"
                )));
            }
        }
        let n = traces.len() as f64;
        let mean = traces.iter().map(|t| t[i].loss).sum::<f64>() / n;
        let var = if traces.len() > 1 {
            traces.iter().map(|t| (t[i].loss - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        rows.push((algorithm.to_string(), k, samples, mean, var.sqrt()));
    }
    Ok(rows)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for (alg, k, samples, mean, std) in rows {
        let _ = writeln!(out, "{alg},{k},{samples},{mean:.17e},{std:.17e}");
    }
    out
}
