use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::DVector;
use trimfit::diagnostics::{
    affine_error_estimate, clean_labels, feature_regularity, feature_regularity_exact,
    feature_regularity_sampled, fit_scaling_constant, q_separation, DiagnosticsReport,
    SeparationReport, EXACT_BUDGET,
};
use trimfit::global::{default_delta, GlobalConfig, SubspaceEstimate};
use trimfit::io::{self, RecoveryDocument};
use trimfit::rng::GENERATOR;
use trimfit::{
    gd_ilts_run, generate_mlrc, global_ilts, ilts_run, Dataset, GdConfig, GroundTruth, IltsConfig,
    RankPolicy, Schedule, SolverTrace,
};

use crate::config::{default_tau_fraction, parse_list, read_json, GenerateConfig};
use crate::outputs::{self, FitSummary};

/// Non-error outcomes, mapped to exit codes 0, 2 and 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    Partial,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Config with `version`, `name` and `model`.
    pub config: PathBuf,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn generate(args: &GenerateArgs) -> Result<Outcome> {
    let cfg: GenerateConfig = read_json(&args.config)?;
    cfg.validate()?;
    let dir = args
        .out_dir
        .clone()
        .or(cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let model = &cfg.model;
    let (data, truth) = generate_mlrc(&model.mixture, &model.corruption, model.n, model.seed)?;
    let data_path = dir.join(format!("{}.csv", cfg.name));
    let truth_path = dir.join(format!("{}.truth.json", cfg.name));
    io::save_dataset(&data, &data_path)?;
    io::save_truth(&truth, &truth_path)?;
    outputs::check_dataset(&data_path, data.n(), data.d())?;
    outputs::check_truth(&truth_path)?;
    println!("dataset: {}", data_path.display());
    println!("truth: {}", truth_path.display());
    println!("tau_star: {:?}", truth.tau_star);
    println!("gamma_star: {}", truth.gamma_star());
    Ok(Outcome::Success)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Fixed,
    Adaptive,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub dataset: PathBuf,
    /// Retained fraction in (0, 1].
    #[arg(long)]
    pub tau: f64,
    /// Comma-separated starting point (default: zeros).
    #[arg(long, allow_hyphen_values = true, conflicts_with = "theta0_file")]
    pub theta0: Option<String>,
    /// File holding a JSON array or a comma-separated starting point.
    #[arg(long)]
    pub theta0_file: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub max_rounds: usize,
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Minimum-norm refits instead of failing on rank deficiency.
    #[arg(long)]
    pub min_norm: bool,
    /// Gradient steps instead of exact refits.
    #[arg(long)]
    pub gd: bool,
    /// Step size (default: 1/L estimated per round).
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, value_enum, default_value = "fixed")]
    pub schedule: ScheduleKind,
    /// Steps per round for the fixed schedule.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Ranking cost for the adaptive schedule.
    #[arg(long, default_value_t = 10.0)]
    pub w: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_u: f64,
    /// Ground-truth sidecar; adds distances to the trace.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "fit")]
    pub name: String,
}

fn load_theta0(args: &FitArgs, d: usize) -> Result<DVector<f64>> {
    let values = match (&args.theta0, &args.theta0_file) {
        (Some(text), _) => parse_list(text)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let trimmed = text.trim();
            if trimmed.starts_with('[') {
                serde_json::from_str(trimmed).context("theta0 file")?
            } else {
                parse_list(trimmed)?
            }
        }
        (None, None) => vec![0.0; d],
    };
    if values.len() != d {
        bail!("theta0 has {} entries, dataset has d = {d}", values.len());
    }
    Ok(DVector::from_vec(values))
}

fn load_truth_for(path: &Option<PathBuf>, data: &Dataset) -> Result<Option<GroundTruth>> {
    let Some(path) = path else { return Ok(None) };
    let truth = io::load_truth(path)?;
    if truth.n() != data.n() || truth.theta_star.nrows() != data.d() {
        bail!("truth {} does not match the dataset shape", path.display());
    }
    Ok(Some(truth))
}

pub fn fit(args: &FitArgs) -> Result<Outcome> {
    let data = io::load_dataset(&args.dataset)?;
    let truth = load_truth_for(&args.truth, &data)?;
    let theta0 = load_theta0(args, data.d())?;
    let (trace, solver, config) = if args.gd {
        let schedule = match args.schedule {
            ScheduleKind::Fixed => Schedule::Fixed { steps: args.steps },
            ScheduleKind::Adaptive => Schedule::Adaptive {
                w: args.w,
                c_u: args.c_u,
            },
        };
        let cfg = GdConfig {
            tau: args.tau,
            eta: args.eta,
            schedule,
            max_rounds: args.max_rounds,
            tol: args.tol,
        };
        let trace = gd_ilts_run(&data, &theta0, &cfg, truth.as_ref())?;
        (trace, "gd-ilts", serde_json::to_value(&cfg)?)
    } else {
        let policy = if args.min_norm {
            RankPolicy::MinNorm
        } else {
            RankPolicy::Fail
        };
        let cfg = IltsConfig::new(args.tau)
            .with_max_rounds(args.max_rounds)
            .with_tol(args.tol)
            .with_rank_policy(policy);
        let trace = ilts_run(&data, &theta0, &cfg, truth.as_ref())?;
        (trace, "ilts", serde_json::to_value(&cfg)?)
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let (trace_path, summary_path) =
        write_fit(&args.out_dir, &args.name, &trace, &theta0, solver, config)?;
    println!("rounds_used: {}", trace.rounds_used);
    println!("converged: {}", trace.converged);
    println!("trace: {}", trace_path.display());
    println!("summary: {}", summary_path.display());
    Ok(if trace.converged {
        Outcome::Success
    } else {
        Outcome::NotConverged
    })
}

pub fn write_fit(
    dir: &Path,
    name: &str,
    trace: &SolverTrace,
    theta0: &DVector<f64>,
    solver: &str,
    config: serde_json::Value,
) -> Result<(PathBuf, PathBuf)> {
    let trace_path = dir.join(format!("{name}.trace.csv"));
    let summary_path = dir.join(format!("{name}.summary.json"));
    io::save_trace(trace, &trace_path)?;
    let summary = FitSummary {
        generator: GENERATOR.to_string(),
        solver: solver.to_string(),
        theta0: theta0.iter().copied().collect(),
        final_theta: trace.final_theta().iter().copied().collect(),
        rounds_used: trace.rounds_used,
        converged: trace.converged,
        final_trimmed_loss: *trace.trimmed_losses.last().expect("nonempty trace"),
        final_dist_to_nearest: trace
            .dist_to_nearest
            .as_ref()
            .and_then(|d| d.last().copied()),
        config,
    };
    io::write_json(&summary, &summary_path)?;
    outputs::check_trace(
        &trace_path,
        trace.iterates.len(),
        trace.inner_steps.is_some(),
    )?;
    outputs::check_summary(&summary_path)?;
    Ok((trace_path, summary_path))
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    pub dataset: PathBuf,
    /// Full configuration as JSON; replaces the tuning flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated tau_j, one per component.
    #[arg(long)]
    pub tau: Option<String>,
    /// Number of components (default: the length of --tau).
    #[arg(long)]
    pub m: Option<usize>,
    /// Search the grid 1, c, c^2, ... for each tau_j instead.
    #[arg(long)]
    pub tau_search: Option<f64>,
    /// Acceptance threshold (default: 10 * target_accuracy * sqrt(ln n)).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub target_accuracy: f64,
    /// Candidate radius (default: 0.95 quantile of |y|/||x||).
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub budget: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon_net: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_rounds: usize,
    /// Ground-truth sidecar; adds the matched recovery error.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Use the span of the true components as the subspace (needs --truth).
    #[arg(long, requires = "truth")]
    pub subspace_from_truth: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "global")]
    pub name: String,
}

fn global_config(args: &GlobalArgs, n: usize) -> Result<GlobalConfig> {
    if let Some(path) = &args.config {
        return read_json(path);
    }
    let tau_list = match &args.tau {
        Some(t) => parse_list(t)?,
        None => Vec::new(),
    };
    let m = match (args.m, tau_list.len()) {
        (Some(m), _) => m,
        (None, 0) => bail!("give --tau or --m with --tau-search"),
        (None, l) => l,
    };
    Ok(GlobalConfig {
        m,
        tau_list,
        delta: args
            .delta
            .unwrap_or_else(|| default_delta(args.target_accuracy, n)),
        radius: args.radius,
        candidate_budget: args.budget,
        epsilon_net: args.epsilon_net,
        seed: args.seed,
        max_rounds: args.max_rounds,
        tol: 0.0,
        tau_search: args.tau_search,
    })
}

pub fn truth_subspace(truth: &GroundTruth) -> Result<SubspaceEstimate> {
    Ok(SubspaceEstimate::from_span(&truth.theta_star)?)
}

pub fn global(args: &GlobalArgs) -> Result<Outcome> {
    let data = io::load_dataset(&args.dataset)?;
    let truth = load_truth_for(&args.truth, &data)?;
    let cfg = global_config(args, data.n())?;
    let subspace = match (&truth, args.subspace_from_truth) {
        (Some(t), true) => Some(truth_subspace(t)?),
        _ => None,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let outcome = run_global(
        &data,
        &cfg,
        subspace,
        truth.as_ref(),
        &args.out_dir,
        &args.name,
    )?;
    Ok(outcome)
}

pub fn run_global(
    data: &Dataset,
    cfg: &GlobalConfig,
    subspace: Option<SubspaceEstimate>,
    truth: Option<&GroundTruth>,
    dir: &Path,
    name: &str,
) -> Result<Outcome> {
    let report = global_ilts(data, cfg, subspace, truth)?;
    let report_path = dir.join(format!("{name}.report.json"));
    let cand_path = dir.join(format!("{name}.candidates.csv"));
    io::write_json(&RecoveryDocument::from(&report), &report_path)?;
    io::write_candidates(&report.outcomes, File::create(&cand_path)?)?;
    outputs::check_report(&report_path, cfg.m)?;
    outputs::check_csv(
        &cand_path,
        "component,candidate,rounds,accepted,support,tau,error",
        report.outcomes.len(),
    )?;
    println!("recovered: {}/{}", report.recovered(), cfg.m);
    if let Some(eps) = report.epsilon_recovery {
        println!("epsilon_recovery: {eps:e}");
    }
    println!("report: {}", report_path.display());
    println!("candidates: {}", cand_path.display());
    Ok(if report.partial {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegularityMode {
    Auto,
    Exact,
    Sampled,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    pub dataset: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report Q and Q_j (needs --truth).
    #[arg(long, requires = "truth")]
    pub q_separation: bool,
    /// Feature regularity at this subset size.
    #[arg(long)]
    pub regularity: Option<usize>,
    #[arg(long, value_enum, default_value = "auto")]
    pub mode: RegularityMode,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Affine error estimates at these ratios (needs --truth).
    #[arg(long, requires = "truth")]
    pub affine_error: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub component: usize,
    /// tau_j = fraction * tau*_j.
    #[arg(long, default_value_t = default_tau_fraction())]
    pub tau_fraction: f64,
    #[arg(long, default_value_t = 200)]
    pub directions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<Outcome> {
    let data = io::load_dataset(&args.dataset)?;
    let truth = load_truth_for(&args.truth, &data)?;
    let mut report = DiagnosticsReport {
        seed: args.seed,
        exact_budget: EXACT_BUDGET,
        ..Default::default()
    };
    if args.q_separation {
        let (q, q_j) = q_separation(&truth.as_ref().expect("clap requires truth").theta_star)?;
        report.q_separation = Some(SeparationReport { q, q_j });
    }
    if let Some(k) = args.regularity {
        let x = data.x();
        report.regularity = Some(match args.mode {
            RegularityMode::Auto => feature_regularity(x, k, args.trials, args.seed)?,
            RegularityMode::Exact => feature_regularity_exact(x, k)?,
            RegularityMode::Sampled => feature_regularity_sampled(x, k, args.trials, args.seed)?,
        });
    }
    if let Some(list) = &args.affine_error {
        let truth = truth.as_ref().expect("clap requires truth");
        let j = args.component;
        if j >= truth.m() {
            bail!("component {j} out of range (m = {})", truth.m());
        }
        let tau_j = args.tau_fraction * truth.tau_star[j];
        let labels = clean_labels(truth);
        let estimates = parse_list(list)?
            .into_iter()
            .map(|delta| {
                affine_error_estimate(
                    data.x(),
                    &labels,
                    tau_j,
                    j,
                    delta,
                    args.directions,
                    args.seed,
                )
            })
            .collect::<trimfit::Result<Vec<_>>>()?;
        report.affine_constant = Some(fit_scaling_constant(&estimates, data.n()));
        report.affine_error = Some(estimates);
    }
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = &args.out {
        io::write_json(&report, path)?;
        outputs::check_diagnostics(path)?;
    }
    Ok(Outcome::Success)
}
