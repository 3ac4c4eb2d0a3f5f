//! End-to-end runs of the `trimfit` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trimfit"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

const GENERATE: &str = r#"{
  "version": 1,
  "name": "inst",
  "model": {
    "mixture": {"d": 3, "components": [[1, 0, 0], [0, 1, 0]], "weights": [1, 1]},
    "corruption": {"gamma_star": 0.1, "adversary": "oblivious-random"},
    "n": 200,
    "seed": 4
  }
}"#;

/// Temp dir holding `inst.csv` and `inst.truth.json`.
fn instance() -> TempDir {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("gen.json"), GENERATE).unwrap();
    let out = run(dir.path(), &["generate", "gen.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Validate with Python's `jsonschema` when it is installed.
fn schema_check(file: &Path, schema: &str) {
    let schema = manifest().join("schemas").join(schema);
    let script = "import json,sys,jsonschema\n\
                  jsonschema.validate(json.load(open(sys.argv[1])), json.load(open(sys.argv[2])),\n\
                  cls=jsonschema.Draft202012Validator)";
    let probe = Command::new("python3")
        .args(["-c", "import jsonschema"])
        .output();
    if !probe.is_ok_and(|o| o.status.success()) {
        eprintln!(
            "python3 jsonschema unavailable; skipping schema check of {}",
            file.display()
        );
        return;
    }
    let out = Command::new("python3")
        .arg("-c")
        .arg(script)
        .arg(file)
        .arg(&schema)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{} vs {}: {}",
        file.display(),
        schema.display(),
        stderr(&out)
    );
}

#[test]
fn generate_writes_dataset_and_truth() {
    let dir = instance();
    let csv = String::from_utf8(read(&dir.path().join("inst.csv"))).unwrap();
    assert!(csv.starts_with("y,x1,x2,x3\n"));
    assert_eq!(csv.lines().count(), 201);
    let truth: Value = serde_json::from_slice(&read(&dir.path().join("inst.truth.json"))).unwrap();
    assert_eq!(truth["n"], 200);
    assert_eq!(truth["theta_star"][1][1], 1.0);
    schema_check(&dir.path().join("inst.truth.json"), "truth.schema.json");
    schema_check(&dir.path().join("gen.json"), "generate-config.schema.json");
}

#[test]
fn generate_is_deterministic() {
    let a = instance();
    let b = instance();
    for f in ["inst.csv", "inst.truth.json"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn missing_seed_names_the_field() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("gen.json"),
        GENERATE.replace("\"seed\": 4", "\"unused\": 4"),
    )
    .unwrap();
    let out = run(dir.path(), &["generate", "gen.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
}

#[test]
fn fit_converges_and_writes_outputs() {
    let dir = instance();
    let args = [
        "fit",
        "inst.csv",
        "--tau",
        "0.4",
        "--theta0",
        "0.8,0.2,0",
        "--truth",
        "inst.truth.json",
        "--name",
        "f",
    ];
    let out = run(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = String::from_utf8(read(&dir.path().join("f.trace.csv"))).unwrap();
    assert!(trace.starts_with("round,step_norm,trimmed_loss,dist_to_nearest\n"));
    let summary: Value = serde_json::from_slice(&read(&dir.path().join("f.summary.json"))).unwrap();
    assert_eq!(summary["converged"], true);
    assert!(summary["final_dist_to_nearest"].as_f64().unwrap() < 1e-10);
    schema_check(&dir.path().join("f.summary.json"), "summary.schema.json");

    let first = read(&dir.path().join("f.trace.csv"));
    assert_eq!(code(&run(dir.path(), &args)), 0);
    assert_eq!(first, read(&dir.path().join("f.trace.csv")));
}

#[test]
fn fit_reports_non_convergence() {
    let dir = instance();
    let out = run(
        dir.path(),
        &[
            "fit",
            "inst.csv",
            "--tau",
            "0.4",
            "--theta0",
            "3,-2,1",
            "--max-rounds",
            "1",
            "--tol",
            "1e-300",
        ],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(dir.path().join("fit.summary.json").exists());
}

#[test]
fn fit_rejects_bad_input() {
    let dir = instance();
    let out = run(
        dir.path(),
        &["fit", "inst.csv", "--tau", "0.4", "--theta0", "1,2"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("d = 3"), "{}", stderr(&out));
    let out = run(
        dir.path(),
        &["fit", "missing.csv", "--tau", "0.4", "--theta0", "0,0,0"],
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn gd_trace_has_step_counts() {
    let dir = instance();
    let out = run(
        dir.path(),
        &[
            "fit",
            "inst.csv",
            "--tau",
            "0.4",
            "--theta0",
            "0.8,0.2,0",
            "--gd",
            "--schedule",
            "adaptive",
            "--w",
            "10",
            "--name",
            "g",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = String::from_utf8(read(&dir.path().join("g.trace.csv"))).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("round,step_norm,trimmed_loss,dist_to_nearest,m_t")
    );
    let second = lines.nth(1).unwrap();
    assert!(second.rsplit(',').next().unwrap().parse::<usize>().unwrap() >= 1);
    schema_check(&dir.path().join("g.summary.json"), "summary.schema.json");
}

#[test]
fn global_recovers_and_partial_exits_three() {
    let dir = instance();
    let out = run(
        dir.path(),
        &[
            "global",
            "inst.csv",
            "--tau",
            "0.4,0.8",
            "--truth",
            "inst.truth.json",
            "--name",
            "gl",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&read(&dir.path().join("gl.report.json"))).unwrap();
    assert_eq!(report["recovered"], 2);
    assert!(report["epsilon_recovery"].as_f64().unwrap() < 1e-8);
    schema_check(&dir.path().join("gl.report.json"), "report.schema.json");
    let candidates = String::from_utf8(read(&dir.path().join("gl.candidates.csv"))).unwrap();
    assert!(candidates.starts_with("component,candidate,rounds,accepted,support,tau,error\n"));

    // An acceptance threshold no sample can meet.
    let out = run(
        dir.path(),
        &[
            "global", "inst.csv", "--tau", "0.4,0.8", "--delta", "1e-300", "--budget", "3",
            "--name", "p",
        ],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&read(&dir.path().join("p.report.json"))).unwrap();
    assert_eq!(report["partial"], true);
    schema_check(&dir.path().join("p.report.json"), "report.schema.json");
}

#[test]
fn diagnose_prints_report() {
    let dir = instance();
    let out = run(
        dir.path(),
        &[
            "diagnose",
            "inst.csv",
            "--truth",
            "inst.truth.json",
            "--q-separation",
            "--regularity",
            "40",
            "--affine-error",
            "0.1,0.2",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["q_separation"]["q"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(report["regularity"]["mode"], "sampled");
    assert_eq!(report["affine_error"].as_array().unwrap().len(), 2);
    std::fs::write(dir.path().join("diag.json"), &out.stdout).unwrap();
    schema_check(&dir.path().join("diag.json"), "diagnostics.schema.json");
}

#[test]
fn diagnose_exact_over_budget_fails() {
    let dir = instance();
    let out = run(
        dir.path(),
        &[
            "diagnose",
            "inst.csv",
            "--regularity",
            "100",
            "--mode",
            "exact",
        ],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

const EXPERIMENT: &str = r#"{
  "version": 1,
  "name": "rep",
  "model": {
    "mixture": {"d": 3, "components": [[1, 0, 0], [-1, 0, 0]], "weights": [1, 1]},
    "n": 300,
    "seed": 10
  },
  "solver": {
    "kind": "ilts",
    "config": {"tau": 0.4, "max_rounds": 30},
    "theta0": {"near_component": {"component": 0, "toward": 1, "fraction": 0.2}}
  },
  "diagnostics": [{"quantity": "q_separation"}],
  "output_dir": "out",
  "repeats": 3
}"#;

#[test]
fn experiment_rows_aggregate_and_idempotence() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("exp.json"), EXPERIMENT).unwrap();
    schema_check(
        &dir.path().join("exp.json"),
        "experiment-config.schema.json",
    );
    let out = run(dir.path(), &["experiment", "exp.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows_path = dir.path().join("out/rep.rows.csv");
    let rows = String::from_utf8(read(&rows_path)).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 4);
    for (r, line) in lines[1..].iter().enumerate() {
        assert!(line.starts_with(&format!("{r},{},ok,", 10 + r)), "{line}");
    }
    let agg = dir.path().join("out/rep.aggregate.csv");
    assert!(String::from_utf8(read(&agg))
        .unwrap()
        .starts_with("metric,round,count,median,q1,q3\n"));
    schema_check(
        &dir.path().join("out/rep.r0.summary.json"),
        "summary.schema.json",
    );
    schema_check(
        &dir.path().join("out/rep.r0.diagnostics.json"),
        "diagnostics.schema.json",
    );

    let files = [
        "rep.rows.csv",
        "rep.aggregate.csv",
        "rep.r0.trace.csv",
        "rep.r2.trace.csv",
    ];
    let before: Vec<Vec<u8>> = files
        .iter()
        .map(|f| read(&dir.path().join("out").join(f)))
        .collect();
    assert_eq!(code(&run(dir.path(), &["experiment", "exp.json"])), 0);
    for (f, b) in files.iter().zip(&before) {
        assert_eq!(&read(&dir.path().join("out").join(f)), b, "{f}");
    }
}

#[test]
fn experiment_rejects_invalid_config() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("exp.json"),
        EXPERIMENT.replace("\"repeats\": 3", "\"repeats\": 0"),
    )
    .unwrap();
    let out = run(dir.path(), &["experiment", "exp.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("repeats"), "{}", stderr(&out));
    std::fs::write(
        dir.path().join("exp.json"),
        EXPERIMENT.replace("\"version\": 1", "\"version\": 7"),
    )
    .unwrap();
    assert_eq!(code(&run(dir.path(), &["experiment", "exp.json"])), 1);
}

/// Every shipped config runs end to end and reproduces the acceptance
/// thresholds it was written for.
#[test]
fn shipped_configs_run() {
    let configs = manifest().join("configs");
    let scratch = TempDir::new().unwrap();
    let mut names: Vec<_> = std::fs::read_dir(&configs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for path in names {
        schema_check(&path, "experiment-config.schema.json");
        // Point the outputs at the scratch directory.
        let mut cfg: Value = serde_json::from_slice(&read(&path)).unwrap();
        let name = cfg["name"].as_str().unwrap().to_string();
        cfg["output_dir"] = Value::String(scratch.path().join(&name).display().to_string());
        let copy = scratch.path().join(format!("{name}.json"));
        std::fs::write(&copy, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
        let out = run(scratch.path(), &["experiment", copy.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));

        let rows = String::from_utf8(read(
            &scratch.path().join(&name).join(format!("{name}.rows.csv")),
        ))
        .unwrap();
        let header: Vec<&str> = rows.lines().next().unwrap().split(',').collect();
        let col = |k: &str| header.iter().position(|h| *h == k).unwrap();
        let records: Vec<Vec<&str>> = rows
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect())
            .collect();
        assert_eq!(records.len(), cfg["repeats"].as_u64().unwrap_or(1) as usize);
        for rec in &records {
            assert_eq!(rec[col("status")], "ok", "{name}");
            match name.as_str() {
                "global-recovery" => {
                    assert!(rec[col("epsilon_recovery")].parse::<f64>().unwrap() <= 1e-4)
                }
                "contraction-bound" => assert_eq!(rec[col("bound_holds")], "true", "{name}"),
                _ => {
                    assert!(
                        rec[col("final_error")].parse::<f64>().unwrap() <= 1e-6,
                        "{name}"
                    );
                    assert_eq!(rec[col("descent_ok")], "true", "{name}");
                }
            }
        }
    }
}
