//! Repeated runs of one configuration with per-repeat rows and an
//! aggregate table.
//!
//! Repeat `r` uses seed `model.seed + r` for the instance, for random
//! starting points and (added to the config seed) for candidate search.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use trimfit::diagnostics::{
    affine_error_estimate, check_contraction_bound, clean_labels, feature_regularity,
    fit_scaling_constant, q_separation, BoundCheckOptions, DiagnosticsReport, SeparationReport,
    EXACT_BUDGET,
};
use trimfit::io::{self, fmt_f64};
use trimfit::{
    contraction_ratio, floor_count, gd_ilts_run, generate_mlrc, ilts_run, Dataset, GroundTruth,
    SolverTrace,
};

use crate::commands::{run_global, truth_subspace, write_fit, Outcome};
use crate::config::{read_json, ExperimentConfig, Quantity, SolverSpec};
use crate::outputs;

pub const ROWS_HEADER: &str = "repeat,seed,status,rounds,converged,final_error,final_loss,max_kappa,descent_ok,recovered,epsilon_recovery,candidates_tried,bound_holds,message";
pub const AGGREGATE_HEADER: &str = "metric,round,count,median,q1,q3";

#[derive(Clone, Debug, Default)]
struct Row {
    repeat: usize,
    seed: u64,
    status: String,
    rounds: Option<usize>,
    converged: Option<bool>,
    final_error: Option<f64>,
    final_loss: Option<f64>,
    max_kappa: Option<f64>,
    descent_ok: Option<bool>,
    recovered: Option<usize>,
    epsilon_recovery: Option<f64>,
    candidates_tried: Option<usize>,
    bound_holds: Option<bool>,
    message: String,
    /// Distance to the target per iterate.
    curve: Vec<f64>,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fcell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl Row {
    fn csv(&self) -> String {
        let message = self.message.replace([',', '\n', '"'], " ");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.repeat,
            self.seed,
            self.status,
            cell(self.rounds),
            cell(self.converged),
            fcell(self.final_error),
            fcell(self.final_loss),
            fcell(self.max_kappa),
            cell(self.descent_ok),
            cell(self.recovered),
            fcell(self.epsilon_recovery),
            cell(self.candidates_tried),
            cell(self.bound_holds),
            message
        )
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn aggregate_line(out: &mut String, metric: &str, round: Option<usize>, values: &[f64]) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return;
    }
    v.sort_by(f64::total_cmp);
    let _ = writeln!(
        out,
        "{metric},{},{},{},{},{}",
        cell(round),
        v.len(),
        fmt_f64(quantile(&v, 0.5)),
        fmt_f64(quantile(&v, 0.25)),
        fmt_f64(quantile(&v, 0.75))
    );
}

fn aggregate(rows: &[Row]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    let pick =
        |f: &dyn Fn(&Row) -> Option<f64>| -> Vec<f64> { rows.iter().filter_map(f).collect() };
    aggregate_line(
        &mut out,
        "rounds",
        None,
        &pick(&|r| r.rounds.map(|v| v as f64)),
    );
    aggregate_line(&mut out, "final_error", None, &pick(&|r| r.final_error));
    aggregate_line(&mut out, "max_kappa", None, &pick(&|r| r.max_kappa));
    aggregate_line(
        &mut out,
        "recovered",
        None,
        &pick(&|r| r.recovered.map(|v| v as f64)),
    );
    aggregate_line(
        &mut out,
        "epsilon_recovery",
        None,
        &pick(&|r| r.epsilon_recovery),
    );
    aggregate_line(
        &mut out,
        "candidates_tried",
        None,
        &pick(&|r| r.candidates_tried.map(|v| v as f64)),
    );
    let longest = rows.iter().map(|r| r.curve.len()).max().unwrap_or(0);
    for t in 0..longest {
        // Finished runs hold their last distance.
        let at: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.curve.get(t).or(r.curve.last()).copied())
            .collect();
        aggregate_line(&mut out, "distance", Some(t), &at);
    }
    out
}

struct Instance {
    data: Dataset,
    truth: Option<GroundTruth>,
}

fn instance(cfg: &ExperimentConfig, seed: u64, base: &Path) -> Result<Instance> {
    if let Some(model) = &cfg.model {
        let (data, truth) = generate_mlrc(&model.mixture, &model.corruption, model.n, seed)?;
        return Ok(Instance {
            data,
            truth: Some(truth),
        });
    }
    let resolve = |p: &PathBuf| {
        if p.is_absolute() {
            p.clone()
        } else {
            base.join(p)
        }
    };
    let data = io::load_dataset(&resolve(cfg.dataset.as_ref().expect("validated")))?;
    let truth = cfg
        .truth
        .as_ref()
        .map(|p| io::load_truth(&resolve(p)))
        .transpose()?;
    Ok(Instance { data, truth })
}

fn diagnostics(
    quantities: &[Quantity],
    inst: &Instance,
    trace: Option<(&SolverTrace, f64)>,
    seed: u64,
) -> Result<Option<DiagnosticsReport>> {
    if quantities.is_empty() {
        return Ok(None);
    }
    let mut report = DiagnosticsReport {
        seed,
        exact_budget: EXACT_BUDGET,
        ..Default::default()
    };
    let x = inst.data.x();
    let need_truth = || inst.truth.as_ref().context("diagnostics need ground truth");
    for q in quantities {
        match q {
            Quantity::QSeparation => {
                let (q, q_j) = q_separation(&need_truth()?.theta_star)?;
                report.q_separation = Some(SeparationReport { q, q_j });
            }
            Quantity::Regularity { k_fraction, trials } => {
                let k = floor_count(*k_fraction, inst.data.n());
                report.regularity = Some(feature_regularity(x, k, *trials, seed)?);
            }
            Quantity::AffineError {
                component,
                tau_fraction,
                deltas,
                directions,
            } => {
                let truth = need_truth()?;
                let labels = clean_labels(truth);
                let tau_j = tau_fraction * truth.tau_star[*component];
                let est = deltas
                    .iter()
                    .map(|&d| {
                        affine_error_estimate(x, &labels, tau_j, *component, d, *directions, seed)
                    })
                    .collect::<trimfit::Result<Vec<_>>>()?;
                report.affine_constant = Some(fit_scaling_constant(&est, x.nrows()));
                report.affine_error = Some(est);
            }
            Quantity::ContractionBound {
                component,
                trials,
                directions,
            } => {
                let (trace, tau) = trace.context("contraction_bound needs an ILTS solver")?;
                let options = BoundCheckOptions {
                    trials: *trials,
                    directions: *directions,
                    seed,
                    ..Default::default()
                };
                report.contraction_bound = Some(check_contraction_bound(
                    &inst.data,
                    need_truth()?,
                    trace,
                    tau,
                    *component,
                    &options,
                )?);
            }
        }
    }
    Ok(Some(report))
}

fn run_repeat(cfg: &ExperimentConfig, r: usize, base: &Path) -> Row {
    let seed = cfg
        .model
        .as_ref()
        .map_or(0, |m| m.seed)
        .wrapping_add(r as u64);
    let mut row = Row {
        repeat: r,
        seed,
        ..Default::default()
    };
    match run_repeat_inner(cfg, r, seed, base, &mut row) {
        Ok(()) => {}
        Err(e) => {
            row.status = "error".into();
            row.message = format!("{e:#}");
        }
    }
    row
}

fn run_repeat_inner(
    cfg: &ExperimentConfig,
    r: usize,
    seed: u64,
    base: &Path,
    row: &mut Row,
) -> Result<()> {
    let inst = instance(cfg, seed, base)?;
    let name = format!("{}.r{r}", cfg.name);
    let dir = &cfg.output_dir;
    let (trace, tau) = match &cfg.solver {
        SolverSpec::Ilts { config, theta0 } => {
            let start = theta0.resolve(inst.data.d(), inst.truth.as_ref(), seed)?;
            let trace = ilts_run(&inst.data, &start, config, inst.truth.as_ref())?;
            write_fit(
                dir,
                &name,
                &trace,
                &start,
                "ilts",
                serde_json::to_value(config)?,
            )?;
            (Some(trace), config.tau)
        }
        SolverSpec::GdIlts { config, theta0 } => {
            let start = theta0.resolve(inst.data.d(), inst.truth.as_ref(), seed)?;
            let trace = gd_ilts_run(&inst.data, &start, config, inst.truth.as_ref())?;
            write_fit(
                dir,
                &name,
                &trace,
                &start,
                "gd-ilts",
                serde_json::to_value(config)?,
            )?;
            (Some(trace), config.tau)
        }
        SolverSpec::Global {
            config,
            subspace_from_truth,
        } => {
            let mut global = config.clone();
            global.seed = global.seed.wrapping_add(r as u64);
            let subspace = match (&inst.truth, subspace_from_truth) {
                (Some(t), true) => Some(truth_subspace(t)?),
                _ => None,
            };
            let outcome = run_global(
                &inst.data,
                &global,
                subspace,
                inst.truth.as_ref(),
                dir,
                &name,
            )?;
            let doc: io::RecoveryDocument = read_json(&dir.join(format!("{name}.report.json")))?;
            row.recovered = Some(doc.recovered);
            row.epsilon_recovery = doc.epsilon_recovery;
            row.candidates_tried = Some(doc.candidates_tried.iter().sum());
            row.status = if outcome == Outcome::Partial {
                "partial"
            } else {
                "ok"
            }
            .into();
            (None, 0.0)
        }
    };
    if let Some(trace) = &trace {
        let target = match &cfg.solver {
            SolverSpec::Ilts { theta0, .. } | SolverSpec::GdIlts { theta0, .. } => theta0.target(),
            SolverSpec::Global { .. } => None,
        };
        row.rounds = Some(trace.rounds_used);
        row.converged = Some(trace.converged);
        row.final_loss = trace.trimmed_losses.last().copied();
        row.descent_ok = Some(trace.descent_violation(1e-10).is_none());
        row.status = if trace.converged {
            "ok"
        } else {
            "not-converged"
        }
        .into();
        if let Some(truth) = &inst.truth {
            row.curve = match target {
                Some(j) => {
                    let t = truth.component(j);
                    trace.iterates.iter().map(|th| (th - &t).norm()).collect()
                }
                None => trace
                    .iterates
                    .iter()
                    .map(|th| truth.nearest_distance(th))
                    .collect(),
            };
            row.final_error = row.curve.last().copied();
            if let Some(j) = target {
                row.max_kappa = contraction_ratio(trace, truth, j)
                    .into_iter()
                    .reduce(f64::max);
            }
        }
    }
    let trace_tau = trace.as_ref().map(|t| (t, tau));
    if let Some(report) = diagnostics(&cfg.diagnostics, &inst, trace_tau, seed)? {
        if let Some(checks) = &report.contraction_bound {
            row.bound_holds = Some(checks.iter().all(|c| c.holds));
        }
        let path = dir.join(format!("{name}.diagnostics.json"));
        io::write_json(&report, &path)?;
        outputs::check_diagnostics(&path)?;
    }
    Ok(())
}

pub fn experiment(config_path: &Path) -> Result<Outcome> {
    let cfg: ExperimentConfig = read_json(config_path)?;
    cfg.validate()?;
    let base = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut cfg = cfg;
    if cfg.output_dir.is_relative() {
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;

    let run = |r: &usize| run_repeat(&cfg, *r, &base);
    let repeats: Vec<usize> = (0..cfg.repeats).collect();
    let concurrent = !matches!(cfg.solver, SolverSpec::Global { .. });
    let rows: Vec<Row> = match trimfit::parallel::pool() {
        Some(pool) if concurrent => pool.install(|| repeats.par_iter().map(run).collect()),
        _ => repeats.iter().map(run).collect(),
    };

    let mut table = format!("{ROWS_HEADER}\n");
    for row in &rows {
        table.push_str(&row.csv());
        table.push('\n');
    }
    let rows_path = cfg.output_dir.join(format!("{}.rows.csv", cfg.name));
    let agg_path = cfg.output_dir.join(format!("{}.aggregate.csv", cfg.name));
    std::fs::write(&rows_path, table)?;
    let agg = aggregate(&rows);
    let agg_lines = agg.lines().count() - 1;
    std::fs::write(&agg_path, agg)?;
    outputs::check_csv(&rows_path, ROWS_HEADER, rows.len())?;
    outputs::check_csv(&agg_path, AGGREGATE_HEADER, agg_lines)?;

    for row in &rows {
        println!(
            "repeat {}: {}{}",
            row.repeat,
            row.status,
            if row.message.is_empty() {
                String::new()
            } else {
                format!(" ({})", row.message)
            }
        );
    }
    println!("rows: {}", rows_path.display());
    println!("aggregate: {}", agg_path.display());

    if rows.iter().any(|r| r.status == "error") {
        anyhow::bail!(
            "{} of {} repeats failed",
            rows.iter().filter(|r| r.status == "error").count(),
            rows.len()
        );
    }
    Ok(if rows.iter().any(|r| r.status == "partial") {
        Outcome::Partial
    } else if rows.iter().any(|r| r.status == "not-converged") {
        Outcome::NotConverged
    } else {
        Outcome::Success
    })
}
