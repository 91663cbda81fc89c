//! Named verification suites: every acceptance check as a library call.
//!
//! Each suite instantiates its own fixtures, evaluates the relevant
//! identities at pinned tolerances and returns one [`Check`] per line; the
//! CLI `verify` subcommand prints them, and the acceptance test target
//! asserts them. Tolerances live here, next to the checks.

use crate::curvature;
use crate::entropy::{self, EntropySpec};
use crate::expr::Expr;
use crate::field::VectorFieldSpec;
use crate::flow;
use crate::lagrangian::{LagrangianModel, MetricMap, Potential};
use crate::linalg;
use crate::perturbation::{self, PerturbationScenario};
use crate::scenario::{self, Scenario};
use crate::transport;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("verification aborted: {0}")]
pub struct VerifyError(pub String);

macro_rules! verify_from {
    ($($t:ty),*) => {$(
        impl From<$t> for VerifyError {
            fn from(e: $t) -> Self { VerifyError(e.to_string()) }
        }
    )*};
}
verify_from!(
    crate::lagrangian::LagrangianError,
    crate::flow::FlowError,
    crate::curvature::CurvatureError,
    crate::transport::TransportError,
    crate::entropy::EntropyError,
    crate::perturbation::PerturbationError,
    crate::scenario::ScenarioError
);

/// One verification line: a measured residual against its tolerance.
#[derive(Debug, Clone)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(suite: &'static str, name: impl Into<String>, residual: f64, tolerance: f64) -> Check {
        Check {
            suite,
            name: name.into(),
            residual,
            tolerance,
            passed: residual <= tolerance,
        }
    }
}

pub const SUITES: &[&str] = &[
    "flat",
    "curvature",
    "coords",
    "riccati",
    "bochner",
    "hessian",
    "continuity",
    "perturb",
    "entropy",
    "determinism",
];

/// Runs one named suite, or all of them for `"all"`.
pub fn run_suites(which: &str, seed: u64) -> Result<Vec<Check>, VerifyError> {
    let mut checks = Vec::new();
    let run_one = |name: &str, checks: &mut Vec<Check>| -> Result<(), VerifyError> {
        match name {
            "flat" => suite_flat(checks),
            "curvature" => suite_curvature(checks, seed),
            "coords" => suite_coords(checks, seed),
            "riccati" => suite_riccati(checks),
            "bochner" => suite_bochner(checks),
            "hessian" => suite_hessian(checks),
            "continuity" => suite_continuity(checks),
            "perturb" => suite_perturb(checks, seed),
            "entropy" => suite_entropy(checks),
            "determinism" => suite_determinism(checks),
            other => Err(VerifyError(format!("unknown suite `{other}`"))),
        }
    };
    if which == "all" {
        for s in SUITES {
            run_one(s, &mut checks)?;
        }
    } else {
        run_one(which, &mut checks)?;
    }
    Ok(checks)
}

// ============================================================================
// Shared fixtures
// ============================================================================

fn conformal_lambda(d: usize) -> Expr {
    // smooth, mildly varying conformal factor
    match d {
        1 => Expr::var(0).sin().cmul(0.1),
        2 => Expr::var(0).sin().cmul(0.1).add(Expr::var(1).powi(2).cmul(0.07)),
        _ => Expr::var(0)
            .sin()
            .cmul(0.1)
            .add(Expr::var(1).powi(2).cmul(0.07))
            .add(Expr::var(2).cmul(0.05)),
    }
}

fn mechanical_potential(d: usize) -> Potential {
    let mut e = Expr::norm_sq(&(0..d).collect::<Vec<_>>()).cmul(0.5);
    e = e.add(Expr::var(0).cos().cmul(0.2));
    Potential::new(d, e)
}

fn perturbation_phi(d: usize) -> Potential {
    let e = Expr::norm_sq(&(0..d).collect::<Vec<_>>())
        .cmul(-1.0)
        .exp()
        .cmul(0.01);
    Potential::new(d, e)
}

/// The four built-in families at dimension `d`.
fn families(d: usize) -> Vec<(&'static str, LagrangianModel)> {
    vec![
        ("euclidean", LagrangianModel::euclidean(d)),
        (
            "riemannian",
            LagrangianModel::riemannian(MetricMap::conformal(d, conformal_lambda(d))),
        ),
        (
            "mechanical",
            LagrangianModel::mechanical(
                MetricMap::conformal(d, conformal_lambda(d)),
                mechanical_potential(d),
            ),
        ),
        (
            "perturbed",
            LagrangianModel::perturbed_riemannian(
                MetricMap::product_exp(d, 0.05),
                perturbation_phi(d),
            ),
        ),
    ]
}

/// Five gradient-type field potentials.
fn field_potentials(d: usize, rng: &mut ChaCha8Rng) -> Vec<Potential> {
    let mut out = vec![Potential::quadratic(d, 1.0)];
    for _ in 0..4 {
        let mut e = Expr::c(0.0);
        for i in 0..d {
            let a = 0.3 + 0.4 * rng.random::<f64>();
            let b = 0.2 * (rng.random::<f64>() - 0.5);
            e = e
                .add(Expr::var(i).powi(2).cmul(0.5 * a))
                .add(Expr::var(i).sin().cmul(b));
            for j in (i + 1)..d {
                e = e.add(
                    Expr::var(i)
                        .mul(Expr::var(j))
                        .cmul(0.15 * (rng.random::<f64>() - 0.5)),
                );
            }
        }
        out.push(Potential::new(d, e));
    }
    out
}

fn random_point(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn bump(d: usize) -> transport::BumpDensity {
    transport::BumpDensity::normalized(d, 1.0, DVector::zeros(d))
}

// ============================================================================
// Suites
// ============================================================================

fn suite_flat(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    let l = LagrangianModel::euclidean(2);
    // cost closed form |x - y|² / (2T)
    let x = DVector::from_vec(vec![0.0, 0.0]);
    let y = DVector::from_vec(vec![1.0, 1.0]);
    for (t, expect) in [(1.0, 1.0), (2.0, 0.5)] {
        let r = flow::cost(&l, &x, &y, t, 1e-10)?;
        checks.push(Check::new(
            "flat",
            format!("euclidean cost T={t} equals |x-y|^2/(2T)"),
            (r.cost - expect).abs(),
            1e-10,
        ));
    }
    // A = B = 0 exactly
    let a = curvature::matrix_a(&l, &x, &DVector::from_vec(vec![0.7, -0.3]))?;
    let b = curvature::matrix_b(&l, &x, &DVector::from_vec(vec![0.7, -0.3]))?;
    checks.push(Check::new(
        "flat",
        "euclidean A-matrix identically zero",
        a.norm(),
        0.0,
    ));
    checks.push(Check::new(
        "flat",
        "euclidean B-matrix identically zero",
        b.norm(),
        0.0,
    ));
    // K(Mx) = tr(M²)
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]);
    let field = VectorFieldSpec::linear(m.clone());
    let k = curvature::curvature_def(&l, &field, &DVector::from_vec(vec![0.3, 0.8]))?;
    checks.push(Check::new(
        "flat",
        "euclidean K(Mx) = tr(M^2)",
        (k - (&m * &m).trace()).abs(),
        1e-12,
    ));
    Ok(())
}

fn suite_curvature(checks: &mut Vec<Check>, seed: u64) -> Result<(), VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    for d in 1..=3 {
        let potentials = field_potentials(d, &mut rng);
        for (name, l) in families(d) {
            let mut worst: f64 = 0.0;
            for u in &potentials {
                let field = VectorFieldSpec::gradient(u.clone(), l.clone());
                for _ in 0..30 {
                    let x = random_point(d, &mut rng);
                    let kd = curvature::curvature_def(&l, &field, &x)?;
                    let kv = curvature::curvature_divergence(&l, &field, &x)?;
                    let (ki, _) = curvature::curvature_indexed(&l, u, &x)?;
                    worst = worst.max((kd - kv).abs()).max((kd - ki).abs());
                }
            }
            checks.push(Check::new(
                "curvature",
                format!("three-way agreement {name} d={d} (5 fields x 30 pts)"),
                worst,
                1e-6,
            ));
        }
    }
    Ok(())
}

fn suite_coords(checks: &mut Vec<Check>, seed: u64) -> Result<(), VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC00D);
    let d = 2;
    for (name, l) in families(d) {
        let u = Potential::new(
            d,
            Expr::norm_sq(&[0, 1])
                .cmul(0.5)
                .add(Expr::var(0).mul(Expr::var(1)).cmul(0.1)),
        );
        let field = VectorFieldSpec::gradient(u, l.clone());
        let x = DVector::from_vec(vec![0.25, -0.4]);
        let k = curvature::curvature_def(&l, &field, &x)?;
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let mut p = DMatrix::identity(d, d);
            for i in 0..d {
                for j in 0..d {
                    p[(i, j)] += 0.3 * (rng.random::<f64>() - 0.5);
                }
            }
            let lt = l
                .linearly_transformed(&p)
                .ok_or_else(|| VerifyError("singular coordinate change".into()))?;
            let ft = field
                .clone()
                .transformed(&p)
                .ok_or_else(|| VerifyError("singular coordinate change".into()))?;
            let kt = curvature::curvature_def(&lt, &ft, &(&p * &x))?;
            worst = worst.max((k - kt).abs());
        }
        checks.push(Check::new(
            "coords",
            format!("linear coordinate invariance, {name} (10 random P)"),
            worst,
            1e-7,
        ));
    }
    Ok(())
}

fn suite_riccati(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    let d = 2;
    for (name, l) in families(d) {
        let u = Potential::quadratic(d, 0.4);
        let field = VectorFieldSpec::gradient(u, l.clone());
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        let tr = flow::riccati_flow(&l, &x0, &field, 1.0, 2000)?;
        let js = tr.jacobian.as_ref().unwrap();
        let us = tr.riccati.as_ref().unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..tr.times.len() {
            let (j, jd) = &js[k];
            let ju = j
                .clone()
                .try_inverse()
                .ok_or_else(|| VerifyError("caustic in riccati suite".into()))?;
            worst = worst.max(linalg::frobenius(&(&us[k] - jd * ju)));
        }
        checks.push(Check::new(
            "riccati",
            format!("‖U - J̇J⁻¹‖ along trajectory, {name}"),
            worst,
            1e-7,
        ));
        checks.push(Check::new(
            "riccati",
            format!("energy drift at 2000 RK4 steps, {name}"),
            tr.energy_drift(),
            1e-6,
        ));
    }
    Ok(())
}

fn suite_bochner(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    let d = 2;
    let l = LagrangianModel::riemannian(MetricMap::conformal(d, conformal_lambda(d)));
    let u = Potential::new(
        d,
        Expr::norm_sq(&[0, 1]).cmul(0.5).add(Expr::var(0).sin().cmul(0.2)),
    );
    let field = VectorFieldSpec::gradient(u, l.clone());
    for (i, x) in [
        DVector::from_vec(vec![0.3, -0.2]),
        DVector::from_vec(vec![-0.5, 0.4]),
    ]
    .iter()
    .enumerate()
    {
        let r1 = curvature::bochner_residual(&l, &field, x, 1e-3)?;
        let r2 = curvature::bochner_residual(&l, &field, x, 5e-4)?;
        let ratio = r1 / r2;
        checks.push(Check::new(
            "bochner",
            format!("extension residual O(h²): ratio at sample {i} (={ratio:.2})"),
            (ratio - 4.0).abs(),
            0.5,
        ));
    }
    Ok(())
}

fn suite_hessian(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    let spec = EntropySpec::Boltzmann;
    // dilation: d²/dt² F = d/(1+t)²
    let l = LagrangianModel::euclidean(2);
    let interp = transport::build_interpolant(&l, &Potential::quadratic(2, 1.0), &bump(2), 1.0, 41, 64)?;
    let h0 = entropy::displacement_hessian(&spec, &interp, 0.0)?;
    let h1 = entropy::displacement_hessian(&spec, &interp, 1.0)?;
    checks.push(Check::new(
        "hessian",
        "dilation/boltzmann d=2: formula at t=0 equals 2.0",
        (h0 - 2.0).abs(),
        1e-3,
    ));
    checks.push(Check::new(
        "hessian",
        "dilation/boltzmann d=2: formula at t=1 equals 0.5",
        (h1 - 0.5).abs(),
        1e-3,
    ));
    let o0 = entropy::hessian_fd_oracle(&spec, &interp, 0.0, 1e-2)?;
    checks.push(Check::new(
        "hessian",
        "dilation/boltzmann: fd oracle at t=0 equals 2.0",
        (o0 - 2.0).abs(),
        1e-3,
    ));
    // mechanical: formula vs oracle
    let lm = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
    let im = transport::build_interpolant(&lm, &Potential::quadratic(2, 0.3), &bump(2), 0.4, 41, 80)?;
    let f = entropy::displacement_hessian(&spec, &im, 0.2)?;
    let o = entropy::hessian_fd_oracle(&spec, &im, 0.2, 1e-2)?;
    checks.push(Check::new(
        "hessian",
        "mechanical d=2: |formula - fd oracle| at t=0.2",
        (f - o).abs(),
        5e-4,
    ));
    // translation: identically zero
    let it = transport::build_interpolant(
        &l,
        &Potential::linear(&[0.4, -0.3]),
        &bump(2),
        1.0,
        31,
        40,
    )?;
    let ht = entropy::displacement_hessian(&spec, &it, 0.5)?;
    checks.push(Check::new(
        "hessian",
        "translation: hessian vanishes",
        ht.abs(),
        1e-8,
    ));
    Ok(())
}

fn suite_continuity(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    let lm = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
    let u0 = Potential::new(
        2,
        Expr::norm_sq(&[0, 1]).cmul(0.15).add(Expr::var(0).cmul(0.1)),
    );
    let interp = transport::build_interpolant(&lm, &u0, &bump(2), 0.5, 15, 100)?;
    let r1 = interp.continuity_residual(0.25, 2e-3)?;
    let r2 = interp.continuity_residual(0.25, 1e-3)?;
    let ratio = r1 / r2;
    checks.push(Check::new(
        "continuity",
        format!("residual O(h_t²): halving ratio (={ratio:.2})"),
        (ratio - 4.0).abs(),
        0.5,
    ));
    // mass conservation on the default 41² dilation interpolant
    let l = LagrangianModel::euclidean(2);
    let id = transport::build_interpolant(&l, &Potential::quadratic(2, 1.0), &bump(2), 1.0, 41, 50)?;
    let worst_mass = (0..id.times().len())
        .map(|k| id.mass_check(k))
        .fold(0.0f64, f64::max);
    checks.push(Check::new(
        "continuity",
        "mass conservation |m-1| at all stored times (41²)",
        worst_mass,
        1e-5,
    ));
    Ok(())
}

fn suite_perturb(checks: &mut Vec<Check>, seed: u64) -> Result<(), VerifyError> {
    let eps = perturbation::perturbation_budget(1.0, 1.2)?;
    checks.push(Check::new(
        "perturb",
        "perturbation_budget(1.0, 1.2) = 0.1 exactly",
        (eps - 0.1).abs(),
        0.0,
    ));

    let mut sc = PerturbationScenario::product_metric_example(2, 1e-3);
    sc.field_bank = perturbation::default_field_bank(2, seed ^ 0x6a6);
    let bounds = perturbation::estimate_bounds(&sc, 29)?;
    checks.push(Check::new(
        "perturb",
        format!("product metric certifies k_g > 0 (k_g = {:.4})", bounds.k_g),
        if bounds.k_g > 0.0 { 0.0 } else { 1.0 },
        0.0,
    ));
    sc.c_g = bounds.c_g;
    sc.k_g = bounds.k_g;
    sc.eps = perturbation::perturbation_budget(bounds.c_g, bounds.k_g)?;
    let (alpha, phi_rep) = perturbation::tune_alpha(&sc, sc.eps, 9)?;
    sc.phi.alpha = alpha;
    let worst_margin = phi_rep
        .worst_margins
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "perturb",
        format!("eight-group ledger bounds hold pointwise (alpha = {alpha:.2e})"),
        (-worst_margin).max(0.0),
        0.0,
    ));
    checks.push(Check::new(
        "perturb",
        "summed ledger within 5ε‖∇ξ‖² + 6ε‖ξ‖²",
        (-phi_rep.worst_summed_margin).max(0.0),
        0.0,
    ));
    let nonneg = perturbation::perturbed_nonneg_check(&sc, 29)?;
    checks.push(Check::new(
        "perturb",
        format!(
            "min perturbed curvature over {} (point, field) pairs",
            nonneg.pairs
        ),
        (-nonneg.min_curvature_perturbed).max(0.0),
        1e-8,
    ));
    checks.push(Check::new(
        "perturb",
        "certification chain intact",
        if nonneg.chain_violation.is_none() { 0.0 } else { 1.0 },
        0.0,
    ));
    // adversarial: 10x the tuned alpha must trip a flag
    let mut adv = sc.clone();
    adv.phi.alpha = alpha * 10.0;
    let adv_phi = perturbation::phi_budget_check(&adv, adv.eps, 9)?;
    let adv_nn = perturbation::perturbed_nonneg_check(&adv, 9)?;
    let tripped = adv_phi.violated.is_some() || adv_nn.chain_violation.is_some();
    checks.push(Check::new(
        "perturb",
        "adversarial 10x budget trips the violation flag",
        if tripped { 0.0 } else { 1.0 },
        0.0,
    ));
    Ok(())
}

fn suite_entropy(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    for spec in [
        EntropySpec::Boltzmann,
        EntropySpec::Power(2.0),
        EntropySpec::Quadratic,
    ] {
        let rep = entropy::validate_entropy(&spec)?;
        checks.push(Check::new(
            "entropy",
            format!("{} admissible (F1, F2)", spec.name()),
            if rep.admissible { 0.0 } else { 1.0 },
            0.0,
        ));
    }
    let bad = EntropySpec::Custom(Expr::parse("-(s^2)", &["s"]).unwrap());
    let rejected = matches!(
        entropy::validate_entropy(&bad),
        Err(entropy::EntropyError::Inadmissible { witness, .. }) if witness > 0.0
    );
    checks.push(Check::new(
        "entropy",
        "F(s) = -s² rejected with positive witness",
        if rejected { 0.0 } else { 1.0 },
        0.0,
    ));
    // McCann: boltzmann gives φ(s) = -d log s
    let mut worst: f64 = 0.0;
    for d in [1usize, 2, 3] {
        let rep = entropy::mccann_check(&EntropySpec::Boltzmann, d)?;
        if !(rep.non_increasing && rep.convex) {
            worst = 1.0;
        }
        // φ(s) at s=2: s^d F(s^{-d}) = -d log 2
        let phi = 2f64.powi(d as i32) * EntropySpec::Boltzmann.f(2f64.powi(-(d as i32)))?;
        worst = worst.max((phi + d as f64 * 2f64.ln()).abs());
    }
    checks.push(Check::new(
        "entropy",
        "mccann check reproduces -d log s for boltzmann",
        worst,
        1e-12,
    ));
    Ok(())
}

fn dilation_scenario() -> Scenario {
    Scenario::from_json(
        &serde_json::json!({
            "schema_version": 1,
            "seed": 7,
            "lagrangian": {"kind": "euclidean", "dim": 2},
            "task": {"type": "hessian", "entropy": "boltzmann"},
            "u0": "0.5*(x1^2+x2^2)",
            "rho0": {"radius": 1.0, "center": [0.0, 0.0]},
            "numeric": {"T": 1.0, "steps": 64, "particles_per_axis": 21},
            "output": {"prefix": "out/dilation"}
        })
        .to_string(),
    )
    .expect("built-in scenario is valid")
}

fn suite_determinism(checks: &mut Vec<Check>) -> Result<(), VerifyError> {
    // byte-identical artifacts on repeat runs
    let s = dilation_scenario();
    let a = scenario::run(&s)?;
    let b = scenario::run(&s)?;
    let differing = a
        .artifacts
        .iter()
        .zip(&b.artifacts)
        .filter(|(x, y)| x.content != y.content)
        .count();
    checks.push(Check::new(
        "determinism",
        "repeat run yields byte-identical CSV",
        differing as f64,
        0.0,
    ));
    // invalid scenario: exit code 2 naming the field
    let mut v: serde_json::Value =
        serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    v["numeric"]["T"] = serde_json::json!(-1.0);
    let invalid_code = Scenario::from_json(&v.to_string())
        .err()
        .map(|e| e.exit_code())
        .unwrap_or(0);
    checks.push(Check::new(
        "determinism",
        "invalid scenario exits 2",
        (invalid_code - 2).abs() as f64,
        0.0,
    ));
    // engineered caustic: exit code 3 with crossing time 1.0
    let mut v: serde_json::Value =
        serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    v["u0"] = serde_json::json!("-0.5*(x1^2+x2^2)");
    v["numeric"]["T"] = serde_json::json!(2.0);
    v["numeric"]["steps"] = serde_json::json!(2000);
    v["numeric"]["particles_per_axis"] = serde_json::json!(9);
    let sc = Scenario::from_json(&v.to_string())?;
    let err = match scenario::run(&sc) {
        Err(e) => e,
        Ok(_) => {
            checks.push(Check::new("determinism", "caustic scenario exits 3", 1.0, 0.0));
            return Ok(());
        }
    };
    checks.push(Check::new(
        "determinism",
        "caustic scenario exits 3",
        (err.exit_code() - 3).abs() as f64,
        0.0,
    ));
    let crossing = err
        .to_string()
        .split("t ≈ ")
        .nth(1)
        .and_then(|t| t.split(':').next())
        .and_then(|t| t.trim().parse::<f64>().ok())
        .unwrap_or(f64::NAN);
    checks.push(Check::new(
        "determinism",
        "caustic crossing time estimate 1.0 ± 1e-3",
        (crossing - 1.0).abs(),
        1e-3,
    ));
    Ok(())
}
