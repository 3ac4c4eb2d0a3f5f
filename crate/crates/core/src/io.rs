//! File formats.
//!
//! - Dataset: CSV with header `y,x1,...,xd`.
//! - Ground truth: JSON sidecar ([`TruthFile`]).
//! - Solver trace: CSV with `round,step_norm,trimmed_loss,dist_to_nearest`
//!   and, for the gradient variant, `m_t`. Absent values are empty fields.
//! - Global recovery: JSON report ([`RecoveryDocument`]) and a CSV of
//!   per-candidate outcomes.
//!
//! Floats are written in shortest round-trip exponent form, so reading a
//! file back reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::{CandidateOutcome, Provenance, RecoveryReport};
use crate::ilts::SolverTrace;
use crate::model::{Dataset, GroundTruth};
use crate::rng::GENERATOR;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let header: Vec<String> = std::iter::once("y".to_string())
        .chain((1..=dataset.d()).map(|c| format!("x{c}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for i in 0..dataset.n() {
        let row: Vec<String> = std::iter::once(dataset.y()[i])
            .chain(dataset.x().row(i).iter().copied())
            .map(fmt_f64)
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let d = header
        .len()
        .checked_sub(1)
        .filter(|&d| d > 0)
        .ok_or_else(|| {
            Error::Parse("dataset header needs a y column and at least one feature".into())
        })?;
    if &header[0] != "y" {
        return Err(Error::Parse(format!(
            "first column must be y, found {:?}",
            &header[0]
        )));
    }
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                d + 1
            )));
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("row {}, column {}: {field:?}", line + 1, c + 1))
            })?;
            if c == 0 {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    Dataset::new(DMatrix::from_row_slice(n, d, &xs), DVector::from_vec(ys))
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_dataset(dataset, File::create(path)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

/// JSON form of [`GroundTruth`]; `theta_star` is a list of components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub theta_star: Vec<Vec<f64>>,
    pub partition: Vec<usize>,
    pub corrupted: Vec<bool>,
    pub r: Vec<f64>,
    pub tau_star: Vec<f64>,
    pub gamma_star: f64,
}

impl From<&GroundTruth> for TruthFile {
    fn from(t: &GroundTruth) -> Self {
        Self {
            generator: GENERATOR.to_string(),
            seed: t.seed,
            n: t.n(),
            d: t.theta_star.nrows(),
            m: t.m(),
            theta_star: t
                .theta_star
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            partition: t.partition.clone(),
            corrupted: t.corrupted.clone(),
            r: t.r.clone(),
            tau_star: t.tau_star.clone(),
            gamma_star: t.gamma_star(),
        }
    }
}

impl TruthFile {
    pub fn into_truth(self) -> Result<GroundTruth> {
        let (n, d, m) = (self.n, self.d, self.m);
        if self.theta_star.len() != m || self.theta_star.iter().any(|c| c.len() != d) {
            return Err(Error::Parse(format!(
                "theta_star must hold {m} components of length {d}"
            )));
        }
        if self.partition.len() != n || self.corrupted.len() != n || self.r.len() != n {
            return Err(Error::Parse(format!(
                "per-sample arrays must have length {n}"
            )));
        }
        if self.tau_star.len() != m || self.partition.iter().any(|&l| l >= m) {
            return Err(Error::Parse(
                "labels or tau_star inconsistent with m".into(),
            ));
        }
        let flat: Vec<f64> = self.theta_star.into_iter().flatten().collect();
        Ok(GroundTruth {
            theta_star: DMatrix::from_column_slice(d, m, &flat),
            partition: self.partition,
            corrupted: self.corrupted,
            r: self.r,
            tau_star: self.tau_star,
            seed: self.seed,
        })
    }
}

pub fn save_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    write_json(&TruthFile::from(truth), path)
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    let file: TruthFile = serde_json::from_reader(File::open(path)?)?;
    file.into_truth()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One row per iterate; round 0 is the starting point (no step yet).
pub fn write_trace<W: Write>(trace: &SolverTrace, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let gd = trace.inner_steps.is_some();
    write!(w, "round,step_norm,trimmed_loss,dist_to_nearest")?;
    if gd {
        write!(w, ",m_t")?;
    }
    writeln!(w)?;
    for t in 0..trace.iterates.len() {
        let step = t.checked_sub(1).map(|s| trace.step_norms[s]);
        let dist = trace.dist_to_nearest.as_ref().map(|d| d[t]);
        write!(
            w,
            "{t},{},{},{}",
            opt(step),
            fmt_f64(trace.trimmed_losses[t]),
            opt(dist)
        )?;
        if let Some(steps) = &trace.inner_steps {
            match t.checked_sub(1) {
                Some(s) => write!(w, ",{}", steps[s])?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &SolverTrace, path: &Path) -> Result<()> {
    write_trace(trace, File::create(path)?)
}

/// JSON form of [`RecoveryReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDocument {
    pub generator: String,
    pub recovered: usize,
    pub partial: bool,
    pub theta_hat: Vec<Option<Vec<f64>>>,
    pub matching: Option<Vec<usize>>,
    pub per_component_errors: Option<Vec<f64>>,
    pub epsilon_recovery: Option<f64>,
    pub accepted_counts: Vec<usize>,
    pub candidates_tried: Vec<usize>,
    pub taus_used: Vec<Option<f64>>,
    pub working_sizes: Vec<usize>,
    pub radius: f64,
    pub radius_heuristic: bool,
    pub delta: f64,
    pub subspace_provenance: Provenance,
    pub candidates_generated: usize,
}

impl From<&RecoveryReport> for RecoveryDocument {
    fn from(r: &RecoveryReport) -> Self {
        Self {
            generator: GENERATOR.to_string(),
            recovered: r.recovered(),
            partial: r.partial,
            theta_hat: r
                .theta_hat
                .iter()
                .map(|t| t.as_ref().map(|v| v.iter().copied().collect()))
                .collect(),
            matching: r.matching.clone(),
            per_component_errors: r.per_component_errors.clone(),
            epsilon_recovery: r.epsilon_recovery,
            accepted_counts: r.accepted_counts.clone(),
            candidates_tried: r.candidates_tried.clone(),
            taus_used: r.taus_used.clone(),
            working_sizes: r.working_sizes.clone(),
            radius: r.radius,
            radius_heuristic: r.radius_heuristic,
            delta: r.delta,
            subspace_provenance: r.subspace_provenance,
            candidates_generated: r.candidates_generated,
        }
    }
}

pub fn write_candidates<W: Write>(outcomes: &[CandidateOutcome], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "component,candidate,rounds,accepted,support,tau,error")?;
    for o in outcomes {
        let error = o
            .error
            .as_deref()
            .unwrap_or("")
            .replace(['"', ',', '\n'], " ");
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            o.component,
            o.candidate,
            o.rounds,
            o.accepted,
            o.support,
            opt(o.tau),
            error
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd::{gd_ilts_run, GdConfig};
    use crate::ilts::{ilts_run, IltsConfig};
    use crate::model::{generate_mlrc, Adversary, CorruptionSpec, MixtureSpec};

    fn instance() -> (Dataset, GroundTruth) {
        let spec = MixtureSpec::balanced(vec![vec![1.0, -0.5, 0.25], vec![-1.0, 0.3, 2.0]]);
        generate_mlrc(
            &spec,
            &CorruptionSpec::new(0.1, Adversary::ObliviousRandom, 10.0),
            60,
            9,
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let (data, _) = instance();
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,x1,x2,x3\n"));
        assert_eq!(text.lines().count(), 61);
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn dataset_parse_errors() {
        assert!(read_dataset("x1,y\n1,2\n".as_bytes()).is_err());
        assert!(read_dataset("y\n1\n".as_bytes()).is_err());
        assert!(read_dataset("y,x1\n1,2,3\n".as_bytes()).is_err());
        assert!(read_dataset("y,x1\n1,abc\n".as_bytes()).is_err());
        assert!(read_dataset("y,x1\n1,NaN\n".as_bytes()).is_err());
    }

    #[test]
    fn truth_round_trip() {
        let (_, truth) = instance();
        let file = TruthFile::from(&truth);
        let text = serde_json::to_string(&file).unwrap();
        let back: TruthFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_truth().unwrap(), truth);
        let mut bad = file.clone();
        bad.partition.pop();
        assert!(bad.into_truth().is_err());
    }

    #[test]
    fn trace_columns() {
        let (data, truth) = instance();
        let theta0 = truth.component(0);
        let trace = ilts_run(&data, &theta0, &IltsConfig::new(0.3), None).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("round,step_norm,trimmed_loss,dist_to_nearest")
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[1], "");
        assert_eq!(first[3], "");

        let gd = gd_ilts_run(&data, &theta0, &GdConfig::adaptive(0.3, 10.0), Some(&truth)).unwrap();
        let mut buf = Vec::new();
        write_trace(&gd, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,step_norm,trimmed_loss,dist_to_nearest,m_t\n"));
        let second: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
        assert!(second[4].parse::<usize>().unwrap() >= 1);
        assert!(!second[3].is_empty());
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1e-300, 123456.789, f64::MIN_POSITIVE, 1.0 / 3.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
