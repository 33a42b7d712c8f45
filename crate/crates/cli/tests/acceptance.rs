//! Acceptance run: one pass/fail line per criterion, nonzero exit on any
//! failure.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hamrearr::report::{run_suite, RunConfig};
use serde_json::Value;

const SUITE_BUDGET: Duration = Duration::from_secs(120);
const CLOSED_FORM_BUDGET_MS: f64 = 5000.0;

fn run_binary() -> (Vec<u8>, Duration, bool) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_hamrearr"))
        .args(["suite", "--all"])
        .env_remove("RL_SEED")
        .output()
        .expect("binary runs");
    (out.stdout, start.elapsed(), out.status.success())
}

fn find<'a>(reports: &'a [Value], id: &str) -> &'a Value {
    reports.iter().find(|r| r["check_id"] == id).unwrap_or_else(|| panic!("missing report {id}"))
}

fn holds(report: &Value) -> bool {
    report["holds"].as_bool().unwrap_or(false)
}

fn value(report: &Value, name: &str) -> f64 {
    report["values"][name].as_f64().unwrap_or(f64::NAN)
}

fn line(ok: bool, label: &str, detail: String) -> bool {
    println!("[{}] {label}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() -> ExitCode {
    let (first, elapsed, exit_ok) = run_binary();
    let reports: Vec<Value> = serde_json::from_slice(&first).expect("suite emits JSON");
    let mut all = true;

    let timed = run_suite(
        &["t_closed_form".to_string()],
        &RunConfig { timings: true, ..RunConfig::default() },
    )
    .expect("known check");
    let closed_ms = timed[0].runtime_ms.unwrap_or(f64::INFINITY);
    let r = find(&reports, "t_closed_form");
    all &= line(
        holds(r) && closed_ms < CLOSED_FORM_BUDGET_MS,
        "1 t closed form",
        format!(
            "max rel err {:.2e}, t(xy) = {}, t(2Σxy) = {}, {closed_ms:.0} ms",
            value(r, "max_relative_error"),
            value(r, "t_xy"),
            value(r, "t_2_sum_xy_n2")
        ),
    );

    let r = find(&reports, "t_symplectic_invariance");
    all &= line(
        holds(r),
        "2 symplectic invariance of t",
        format!(
            "max rel dev {:.2e}, witness t ratio {} (expected {}), Det ratio {}",
            value(r, "max_t_relative_deviation"),
            value(r, "witness_t_ratio"),
            value(r, "witness_expected_t_ratio"),
            value(r, "witness_det_ratio")
        ),
    );

    let r = find(&reports, "p_mechanism");
    all &= line(
        holds(r),
        "3 p separates scaling from symplectic pullback",
        format!(
            "p = {:.4}, p(scaled) = {:.4}, difference {:.4} vs {:.4} ({:.2}%), p(symplectic) = {:.4} ({:.2e} rel)",
            value(r, "p"),
            value(r, "p_scaled"),
            value(r, "difference"),
            value(r, "expected_difference"),
            100.0 * value(r, "relative_deviation"),
            value(r, "p_symplectic"),
            value(r, "symplectic_relative_deviation")
        ),
    );

    let r = find(&reports, "hardy_littlewood");
    all &= line(
        holds(r),
        "4 sorted pairing equals permutation maximum",
        format!(
            "{} instances, {} mismatches, {} symmetry failures",
            value(r, "instances"),
            value(r, "mismatches"),
            value(r, "symmetry_failures")
        ),
    );

    let r = find(&reports, "inequality_suites");
    all &= line(
        holds(r),
        "5 inequality suites",
        format!(
            "failures: chebyshev {}, abs-sup {}, product {}, two-block {} of {}",
            value(r, "chebyshev_failures"),
            value(r, "abs_sup_failures"),
            value(r, "product_abs_failures"),
            value(r, "two_block_failures"),
            value(r, "two_block_cases")
        ),
    );

    let r = find(&reports, "alpha_lower_bound");
    all &= line(
        holds(r),
        "6 L1 lower bound constants",
        format!(
            "c = {}, m = {} (oracle {}, {}), failures zero-mean {}, positive-mean {}",
            value(r, "c"),
            value(r, "m"),
            value(r, "oracle_c"),
            value(r, "oracle_m"),
            value(r, "zero_mean_failures"),
            value(r, "positive_mean_failures")
        ),
    );

    let r = find(&reports, "ri_norm_axioms");
    let failures: f64 = r["values"]
        .as_object()
        .map(|m| m.iter().filter(|(k, _)| k.ends_with("_failures")).filter_map(|(_, v)| v.as_f64()).sum())
        .unwrap_or(f64::NAN);
    all &= line(holds(r), "7 norm axioms", format!("b = {}, total failures {failures}", value(r, "b")));

    let r = find(&reports, "katok_transport");
    all &= line(
        holds(r),
        "8 level-set transport",
        format!(
            "max error/ε {:.3}, {} bound violations, {} separated with nonzero error",
            value(r, "max_error_over_epsilon"),
            value(r, "bound_violations"),
            value(r, "separated_nonzero_error")
        ),
    );

    let r = find(&reports, "regularizer");
    all &= line(
        holds(r),
        "9 regularizer",
        format!(
            "mass errors {:.1e}, {:.1e}; sup diff {:.4} -> {:.4}",
            value(r, "mass_error_lambda_8"),
            value(r, "mass_error_lambda_16"),
            value(r, "sup_difference_lambda_8"),
            value(r, "sup_difference_lambda_16")
        ),
    );

    let (d, v, p) = (
        find(&reports, "flow_symplectic_defect"),
        find(&reports, "flow_volume"),
        find(&reports, "flow_rotation_pullback"),
    );
    all &= line(
        holds(d) && holds(v) && holds(p),
        "10 flow correctness",
        format!(
            "symplectic defect {:.1e}, volume defects {:.1e}/{:.1e}, rotation diff {:.2e} <= {:.2e}",
            value(d, "max_symplectic_defect"),
            value(v, "pendulum_volume_defect"),
            value(v, "coupled_volume_defect"),
            value(p, "max_difference_t_0.4"),
            value(p, "interpolation_error_t_0.4")
        ),
    );

    let (second, _, _) = run_binary();
    let identical = first == second;
    all &= line(
        elapsed <= SUITE_BUDGET && identical && exit_ok,
        "11 runtime and determinism",
        format!(
            "full suite {:.1} s, byte-identical: {identical}, {} bytes, exit ok: {exit_ok}",
            elapsed.as_secs_f64(),
            first.len()
        ),
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
