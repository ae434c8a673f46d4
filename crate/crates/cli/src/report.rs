use std::fs;
use std::path::Path;

use serde::Serialize;
use sni_core::{ConvergenceTrace, StopReason};

use crate::CliError;

pub const REPORT_FILE: &str = "report.toml";
pub const TRACE_FILE: &str = "trace.csv";

/// Outcome of one command, serialized as TOML.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub method: String,
    pub converged: bool,
    pub stop_reason: String,
    pub iterations: usize,
    /// Only with `--timing`; wall time is otherwise printed to stderr so
    /// reports stay byte-reproducible.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    pub config: toml::Table,
    pub metrics: toml::Table,
}

impl RunReport {
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Run(format!("cannot serialize report: {e}")))
    }
}

pub fn stop_reason_name(reason: StopReason) -> &'static str {
    match reason {
        StopReason::SubspaceConverged => "subspace_converged",
        StopReason::ObjectiveStalled => "objective_stalled",
        StopReason::MaxIterations => "max_iterations",
        StopReason::BudgetCompleted => "budget_completed",
        StopReason::EarlyStopped => "early_stopped",
    }
}

/// Rejects non-finite metrics so no report ever carries one.
pub fn finite(name: &str, value: f64) -> Result<toml::Value, CliError> {
    if value.is_finite() {
        Ok(toml::Value::Float(value))
    } else {
        Err(CliError::Run(format!(
            "metric {name} is not finite ({value})"
        )))
    }
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

/// Trace as CSV. The header names the monitored quantities; missing values
/// are empty cells.
pub fn trace_csv(trace: &ConvergenceTrace, timing: bool) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "iteration",
        "objective",
        "u_subspace_error",
        "v_subspace_error",
        "sigma_min",
    ];
    if timing {
        header.push("elapsed_seconds");
    }
    let err = |e: csv::Error| CliError::Run(format!("cannot write trace: {e}"));
    w.write_record(&header).map_err(err)?;
    for rec in trace.all_records() {
        let mut row = vec![
            rec.iteration.to_string(),
            cell(Some(rec.objective)),
            cell(rec.u_subspace_error),
            cell(rec.v_subspace_error),
            cell(rec.sigma_min),
        ];
        if timing {
            row.push(cell(Some(rec.elapsed.as_secs_f64())));
        }
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Run(format!("cannot write trace: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Run(e.to_string()))
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}
