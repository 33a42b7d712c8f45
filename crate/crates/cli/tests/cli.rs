use std::path::PathBuf;
use std::process::{Command, Output};

use hamrearr::report::{run_suite, to_csv, CliError, RunConfig, DEFAULT_SEED};
use serde_json::Value;

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hamrearr-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn hamrearr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamrearr")).args(args).env_remove("RL_SEED").output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn empty_selection_runs_nothing() {
    assert!(run_suite(&[], &RunConfig::default()).unwrap().is_empty());
}

#[test]
fn closed_form_check_holds() {
    let names = vec!["t_closed_form".to_string(), "t_closed_form".to_string()];
    let reports = run_suite(&names, &RunConfig::default()).unwrap();
    assert_eq!(reports.len(), 1);
    assert!(reports[0].holds);
    assert!(reports[0].runtime_ms.is_none());
    assert_eq!(reports[0].inputs_digest.len(), 64);
}

#[test]
fn unknown_check_is_rejected_before_running() {
    let names = vec!["t_closed_form".to_string(), "no_such_check".to_string()];
    let err = run_suite(&names, &RunConfig::default()).unwrap_err();
    assert!(matches!(err, CliError::UnknownCheck(id) if id == "no_such_check"));
    let out = hamrearr(&["suite", "no_such_check"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_precedence() {
    let cfg = scratch("seed.toml", "seed = 5\nformat = \"csv\"\n");
    let from_file = RunConfig::resolve(Some(&cfg), None, None, None, None).unwrap();
    assert_eq!(from_file.seed, 5);
    let from_env = RunConfig::resolve(Some(&cfg), Some("7"), None, None, None).unwrap();
    assert_eq!(from_env.seed, 7);
    let from_flag = RunConfig::resolve(Some(&cfg), Some("7"), Some(9), None, None).unwrap();
    assert_eq!(from_flag.seed, 9);
    assert_eq!(RunConfig::resolve(None, None, None, None, None).unwrap().seed, DEFAULT_SEED);
    assert!(matches!(RunConfig::resolve(None, Some("x"), None, None, None), Err(CliError::Seed(_))));
}

#[test]
fn config_rejects_unknown_keys() {
    let field = scratch("field.toml", "colour = 1\n");
    assert!(matches!(RunConfig::resolve(Some(&field), None, None, None, None), Err(CliError::Config { .. })));
    let tol = scratch("tol.toml", "[tolerances]\nnot_a_check = 1.0\n");
    assert!(matches!(RunConfig::resolve(Some(&tol), None, None, None, None), Err(CliError::UnknownTolerance(_))));
}

#[test]
fn tolerance_override_can_fail_a_check() {
    let cfg = scratch("strict.toml", "[tolerances]\nt_closed_form = -1.0\n");
    let out = hamrearr(&["--config", cfg.to_str().unwrap(), "suite", "t_closed_form"]);
    assert_eq!(out.status.code(), Some(1));
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports[0]["holds"], false);
    assert_eq!(reports[0]["tolerance"], -1.0);
}

#[test]
fn same_seed_reproduces_report() {
    let a = hamrearr(&["--seed", "1", "suite", "t_closed_form"]);
    let b = hamrearr(&["--seed", "1", "suite", "t_closed_form"]);
    assert_eq!(a.stdout, b.stdout);
    let (a, b) = (stdout_json(&a), stdout_json(&hamrearr(&["--seed", "2", "suite", "t_closed_form"])));
    assert_ne!(a[0]["inputs_digest"], b[0]["inputs_digest"]);
    assert_eq!(a[0]["values"]["t_xy"], b[0]["values"]["t_xy"]);
}

#[test]
fn csv_has_one_row_per_value() {
    let reports = run_suite(&["t_closed_form".to_string()], &RunConfig::default()).unwrap();
    let csv = to_csv(&reports);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("check_id,reference,inputs_digest"));
    assert_eq!(lines.count(), reports[0].values.len());

    let out = scratch("report.csv", "");
    let run = hamrearr(&["--format", "csv", "--out", out.to_str().unwrap(), "suite", "t_closed_form"]);
    assert!(run.status.success());
    assert!(run.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(&out).unwrap(), csv);
}

#[test]
fn list_names_every_check() {
    let out = hamrearr(&["suite", "--list"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), hamrearr::report::all_check_ids().len());
}

#[test]
fn rearrange_sup_on_function_file() {
    let file = scratch("fg.txt", "masses: 1 1 1 1\nf: 3 -1 2 0.5\ng: 0 1 -2 4\n");
    let path = file.to_str().unwrap();
    let sup = stdout_json(&hamrearr(&["rearrange", "sup", "--file", path, "--phi", "f", "--psi", "g"]));
    assert_eq!(sup["value"], 3.0 * 4.0 + 2.0 * 1.0 + 0.5 * 0.0 - 1.0 * -2.0);
    let eq = stdout_json(&hamrearr(&["rearrange", "equidistributed", "--file", path, "--phi", "f", "--psi", "f"]));
    assert_eq!(eq["value"], true);
    let profile = stdout_json(&hamrearr(&["rearrange", "profile", "--file", path, "--phi", "g"]));
    assert_eq!(profile["value"][0]["value"], 4.0);

    let missing = hamrearr(&["rearrange", "sup", "--file", path, "--phi", "f"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn exact_quadratic_flow_is_symplectic() {
    let out = stdout_json(&hamrearr(&[
        "flow", "--hamiltonian", "quad:1,-2", "--method", "exact", "--duration", "0.7", "--point", "1,0,0,1",
    ]));
    assert!(out["symplectic_defect"].as_f64().unwrap() < 1e-12);
    assert_eq!(out["images"][0]["image"].as_array().unwrap().len(), 4);
}
