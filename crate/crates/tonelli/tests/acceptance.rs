//! Acceptance suite: one test per shipping criterion.
//!
//! Every criterion runs at its stated tolerance and prints one pass/fail
//! line per constituent check (run with `--nocapture` to see them). The
//! named suites in `tonelli::verify` carry the tolerances; this target
//! additionally pins the runtime budgets.

use std::time::Instant;
use tonelli::verify::{run_suites, Check};

const SEED: u64 = 7;

fn report(criterion: &str, checks: &[Check]) {
    for c in checks {
        println!(
            "[{}] {criterion}: {} (residual {:.4e}, tol {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.residual,
            c.tolerance
        );
    }
}

fn assert_all(criterion: &str, checks: &[Check]) {
    report(criterion, checks);
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    assert!(
        failed.is_empty(),
        "{criterion}: {} check(s) failed: {:?}",
        failed.len(),
        failed
            .iter()
            .map(|c| format!("{} (residual {:.4e} > tol {:.1e})", c.name, c.residual, c.tolerance))
            .collect::<Vec<_>>()
    );
}

fn assert_runtime(criterion: &str, elapsed: f64, budget: f64) {
    println!(
        "[{}] {criterion}: runtime {elapsed:.2}s within {budget:.0}s",
        if elapsed < budget { "PASS" } else { "FAIL" }
    );
    assert!(
        elapsed < budget,
        "{criterion}: runtime {elapsed:.2}s exceeds {budget:.0}s"
    );
}

#[test]
fn criterion_01_flat_space_closed_forms() {
    let t0 = Instant::now();
    let checks = run_suites("flat", SEED).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert_all("criterion 1 (flat closed forms)", &checks);
    assert_runtime("criterion 1 (flat closed forms)", elapsed, 1.0);
}

#[test]
fn criterion_02_three_way_curvature_agreement() {
    let t0 = Instant::now();
    let checks = run_suites("curvature", SEED).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert_all("criterion 2 (three-way agreement)", &checks);
    assert_runtime("criterion 2 (three-way agreement)", elapsed, 60.0);
}

#[test]
fn criterion_03_linear_coordinate_invariance() {
    let checks = run_suites("coords", SEED).unwrap();
    assert_all("criterion 3 (coordinate invariance)", &checks);
}

#[test]
fn criterion_04_riccati_jacobian_identity_and_energy() {
    let checks = run_suites("riccati", SEED).unwrap();
    assert_all("criterion 4 (Riccati/Jacobian + energy drift)", &checks);
}

#[test]
fn criterion_05_extension_residual_second_order() {
    let checks = run_suites("bochner", SEED).unwrap();
    assert_all("criterion 5 (evolution-identity residual O(h²))", &checks);
}

#[test]
fn criterion_06_displacement_hessian_vs_oracle() {
    let t0 = Instant::now();
    let checks = run_suites("hessian", SEED).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert_all("criterion 6 (displacement Hessian)", &checks);
    assert_runtime("criterion 6 (displacement Hessian)", elapsed, 120.0);
}

#[test]
fn criterion_07_continuity_residual_and_mass() {
    let checks = run_suites("continuity", SEED).unwrap();
    assert_all("criterion 7 (continuity residual + mass)", &checks);
}

#[test]
fn criterion_08_perturbation_program() {
    let checks = run_suites("perturb", SEED).unwrap();
    assert_all("criterion 8 (perturbation non-negativity)", &checks);
    // the pointwise sample count must reach 10^4 (point, field) pairs
    let pairs_line = checks
        .iter()
        .find(|c| c.name.contains("(point, field) pairs"))
        .expect("pair-count check present");
    let pairs: usize = pairs_line
        .name
        .split_whitespace()
        .find_map(|w| w.parse().ok())
        .unwrap_or(0);
    println!(
        "[{}] criterion 8: sample count {pairs} >= 10000",
        if pairs >= 10_000 { "PASS" } else { "FAIL" }
    );
    assert!(pairs >= 10_000, "only {pairs} (point, field) pairs sampled");
}

#[test]
fn criterion_09_entropy_admissibility() {
    let checks = run_suites("entropy", SEED).unwrap();
    assert_all("criterion 9 (entropy admissibility + McCann)", &checks);
}

#[test]
fn criterion_10_cli_determinism_and_exit_codes() {
    let checks = run_suites("determinism", SEED).unwrap();
    assert_all("criterion 10 (determinism + exit codes)", &checks);
}
