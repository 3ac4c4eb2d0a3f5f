//! Output documents and their post-write validation.
//!
//! Every file the tool writes is read back and checked against its typed
//! form and invariants before the command exits. The JSON Schemas in
//! `schemas/` describe the same documents for external consumers.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use trimfit::diagnostics::DiagnosticsReport;
use trimfit::io::{RecoveryDocument, TruthFile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub generator: String,
    pub solver: String,
    pub theta0: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub rounds_used: usize,
    pub converged: bool,
    pub final_trimmed_loss: f64,
    pub final_dist_to_nearest: Option<f64>,
    pub config: serde_json::Value,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading back {}", path.display()))
}

pub fn check_dataset(path: &Path, n: usize, d: usize) -> Result<()> {
    let data = trimfit::io::load_dataset(path)?;
    ensure!(
        data.n() == n && data.d() == d,
        "{}: expected {n} x {d}",
        path.display()
    );
    Ok(())
}

pub fn check_truth(path: &Path) -> Result<()> {
    let file: TruthFile = serde_json::from_str(&read(path)?)?;
    file.into_truth()
        .with_context(|| format!("invalid truth file {}", path.display()))?;
    Ok(())
}

pub fn check_summary(path: &Path) -> Result<()> {
    let s: FitSummary = serde_json::from_str(&read(path)?)?;
    ensure!(
        s.theta0.len() == s.final_theta.len(),
        "summary theta lengths differ"
    );
    ensure!(s.final_trimmed_loss >= 0.0, "negative trimmed loss");
    Ok(())
}

/// Header, row count and numeric fields of a trace CSV.
pub fn check_trace(path: &Path, rows: usize, gd: bool) -> Result<()> {
    let text = read(path)?;
    let mut lines = text.lines();
    let mut header = "round,step_norm,trimmed_loss,dist_to_nearest".to_string();
    if gd {
        header.push_str(",m_t");
    }
    ensure!(
        lines.next() == Some(header.as_str()),
        "{}: unexpected header",
        path.display()
    );
    let mut count = 0;
    for (t, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(
            fields.len() == if gd { 5 } else { 4 },
            "trace row {t} has {} fields",
            fields.len()
        );
        ensure!(
            fields[0] == t.to_string(),
            "trace row {t} has round {}",
            fields[0]
        );
        for f in &fields[1..4] {
            if !f.is_empty() {
                f.parse::<f64>()
                    .with_context(|| format!("trace row {t}: {f:?}"))?;
            }
        }
        count += 1;
    }
    ensure!(count == rows, "trace has {count} rows, expected {rows}");
    Ok(())
}

pub fn check_report(path: &Path, m: usize) -> Result<()> {
    let r: RecoveryDocument = serde_json::from_str(&read(path)?)?;
    ensure!(
        r.theta_hat.len() == m,
        "report has {} slots for m = {m}",
        r.theta_hat.len()
    );
    ensure!(
        r.accepted_counts.len() == m && r.candidates_tried.len() == m,
        "per-component arrays"
    );
    ensure!(
        r.recovered == r.theta_hat.iter().filter(|t| t.is_some()).count(),
        "recovered count"
    );
    ensure!(r.partial == (r.recovered < m), "partial flag");
    if let (Some(errors), Some(eps)) = (&r.per_component_errors, r.epsilon_recovery) {
        let max = errors.iter().copied().fold(0.0, f64::max);
        ensure!(
            max == eps,
            "epsilon_recovery is not the max per-component error"
        );
    }
    Ok(())
}

pub fn check_diagnostics(path: &Path) -> Result<()> {
    let r: DiagnosticsReport = serde_json::from_str(&read(path)?)?;
    if let Some(reg) = &r.regularity {
        if !(reg.psi_plus >= reg.psi_minus && reg.psi_minus >= 0.0) {
            bail!("regularity bounds out of order");
        }
    }
    if let Some(sep) = &r.q_separation {
        ensure!(sep.q_j.iter().all(|q| sep.q <= *q), "Q exceeds some Q_j");
    }
    Ok(())
}

/// Every data row has the header's field count.
pub fn check_csv(path: &Path, header: &str, rows: usize) -> Result<()> {
    let text = read(path)?;
    let mut lines = text.lines();
    ensure!(
        lines.next() == Some(header),
        "{}: unexpected header",
        path.display()
    );
    let width = header.split(',').count();
    let mut count = 0;
    for line in lines {
        ensure!(
            line.split(',').count() == width,
            "{}: ragged row",
            path.display()
        );
        count += 1;
    }
    ensure!(
        count == rows,
        "{}: {count} rows, expected {rows}",
        path.display()
    );
    Ok(())
}
