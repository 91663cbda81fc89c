//! Generalized entropy functionals and the displacement Hessian.
//!
//! An admissible density `F` satisfies `F(0) = 0` and
//! `s²F″(s) ≥ sF′(s) − F(s) ≥ 0`; its pressure is `G(s) = sF′(s) − F(s)`
//! with `G′(s) = sF″(s)`. Along a displacement interpolant the second time
//! derivative of `∫F(ρ_t)` is
//!
//! ```text
//! d²/dt² F(ρ_t) = ∫ (ρG′(ρ) - G(ρ)) (∇·V)² + G(ρ) K_x(V) dx
//! ```
//!
//! evaluated here by particle quadrature: `∇·V = tr U` with `U = J̇ J^{-1}`
//! from the Jacobian companion, and `K_x(V) = tr(U² + A U + B)` at the
//! particle state. The independent check is a central second difference of
//! `t ↦ ∫F(ρ_t)` with one Richardson refinement.
//!
//! Note: the pressure-coefficient algebra gives `ρG′(ρ) - G(ρ) =
//! ρ²F″(ρ) - ρF′(ρ) + F(ρ)`; reports carry this consistent expansion (a
//! common variant prints `F′` for the trailing term, which the identity
//! check would reject).

use crate::curvature::ab_from_bundle;
use crate::expr::Expr;
use crate::flow::el_rhs;
use crate::jets::jet_lift;
use crate::lagrangian::LagrangianError;
use crate::transport::{DisplacementInterpolant, TransportError};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Transport(#[from] Box<TransportError>),
    #[error("inadmissible entropy density: {reason} at s = {witness}")]
    Inadmissible { reason: String, witness: f64 },
    #[error("density non-positive at a particle (caustic upstream)")]
    NonPositiveDensity,
    #[error("time {0} not on the stored grid")]
    OffGrid(f64),
}

impl From<TransportError> for EntropyError {
    fn from(e: TransportError) -> Self {
        EntropyError::Transport(Box::new(e))
    }
}

/// Entropy density `F` on `[0, ∞)` with `F(0) = 0`.
#[derive(Debug, Clone)]
pub enum EntropySpec {
    /// `s log s`
    Boltzmann,
    /// `(s^m - s)/(m - 1)`, `m > 1`
    Power(f64),
    /// `s²`
    Quadratic,
    /// Closed-form expression in the single variable `s`.
    Custom(Expr),
}

impl EntropySpec {
    pub fn name(&self) -> String {
        match self {
            EntropySpec::Boltzmann => "boltzmann".into(),
            EntropySpec::Power(m) => format!("power({m})"),
            EntropySpec::Quadratic => "quadratic".into(),
            EntropySpec::Custom(_) => "custom".into(),
        }
    }

    /// `(F, F′, F″)` at `s > 0`.
    pub fn derivatives(&self, s: f64) -> Result<(f64, f64, f64), EntropyError> {
        match self {
            EntropySpec::Boltzmann => {
                if s <= 0.0 {
                    return Ok((0.0, f64::NEG_INFINITY, f64::INFINITY));
                }
                Ok((s * s.ln(), s.ln() + 1.0, 1.0 / s))
            }
            EntropySpec::Power(m) => {
                let m = *m;
                let f = (s.powf(m) - s) / (m - 1.0);
                let fp = (m * s.powf(m - 1.0) - 1.0) / (m - 1.0);
                let fpp = m * s.powf(m - 2.0);
                Ok((f, fp, fpp))
            }
            EntropySpec::Quadratic => Ok((s * s, 2.0 * s, 2.0)),
            EntropySpec::Custom(e) => {
                let jet = jet_lift(e, &[s]).map_err(LagrangianError::from)?;
                Ok((jet.value(), jet.grad()[0], jet.hess()[(0, 0)]))
            }
        }
    }

    pub fn f(&self, s: f64) -> Result<f64, EntropyError> {
        if s == 0.0 {
            return Ok(0.0);
        }
        Ok(self.derivatives(s)?.0)
    }

    /// Pressure `G(s) = sF′(s) - F(s)`.
    pub fn g(&self, s: f64) -> Result<f64, EntropyError> {
        let (f, fp, _) = self.derivatives(s)?;
        Ok(s * fp - f)
    }

    /// `G′(s) = sF″(s)`.
    pub fn g_prime(&self, s: f64) -> Result<f64, EntropyError> {
        let (_, _, fpp) = self.derivatives(s)?;
        Ok(s * fpp)
    }

    /// `ρG′(ρ) - G(ρ) = ρ²F″ - ρF′ + F`.
    pub fn pressure_coefficient(&self, s: f64) -> Result<f64, EntropyError> {
        let (f, fp, fpp) = self.derivatives(s)?;
        Ok(s * s * fpp - s * fp + f)
    }
}

// ============================================================================
// Admissibility
// ============================================================================

/// Outcome of the `F(0) = 0` / `s²F″ ≥ sF′ - F ≥ 0` checks.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// Worst margin of `s²F″ - (sF′ - F)` over the sample grid.
    pub worst_upper_margin: f64,
    /// Worst margin of `sF′ - F` over the sample grid.
    pub worst_lower_margin: f64,
    /// Location of the worst margin.
    pub witness: f64,
    pub f_at_zero: f64,
}

/// Log-spaced sample grid `s ∈ [1e-6, 1e3]`.
fn f2_grid() -> Vec<f64> {
    let n = 400;
    (0..=n)
        .map(|k| 10f64.powf(-6.0 + 9.0 * k as f64 / n as f64))
        .collect()
}

/// Checks F1 exactly and F2 on the log-spaced grid; errors with a witness
/// when a margin is genuinely negative.
pub fn validate_entropy(spec: &EntropySpec) -> Result<AdmissibilityReport, EntropyError> {
    let f0 = spec.f(0.0)?;
    if f0.abs() > 1e-12 {
        return Err(EntropyError::Inadmissible {
            reason: format!("F(0) = {f0} != 0"),
            witness: 0.0,
        });
    }
    let mut worst_upper = f64::INFINITY;
    let mut worst_lower = f64::INFINITY;
    let mut witness = 1.0;
    for s in f2_grid() {
        let (f, fp, fpp) = spec.derivatives(s)?;
        let lower = s * fp - f;
        let upper = s * s * fpp - lower;
        let scale = 1.0 + f.abs() + s * fp.abs();
        if upper / scale < worst_upper {
            worst_upper = upper / scale;
        }
        if lower / scale < worst_lower {
            worst_lower = lower / scale;
            witness = s;
        }
        if lower / scale < -1e-12 || upper / scale < -1e-12 {
            return Err(EntropyError::Inadmissible {
                reason: format!(
                    "condition F2 fails: sF'-F = {lower:.6e}, s²F''-(sF'-F) = {upper:.6e}"
                ),
                witness: s,
            });
        }
    }
    Ok(AdmissibilityReport {
        admissible: true,
        worst_upper_margin: worst_upper,
        worst_lower_margin: worst_lower,
        witness,
        f_at_zero: f0,
    })
}

/// Discrete convexity/monotonicity report for `φ(s) = s^d F(s^{-d})`.
#[derive(Debug, Clone)]
pub struct McCannReport {
    /// Max of the first differences (≤ 0 means non-increasing).
    pub max_first_difference: f64,
    /// Min of the second differences (≥ 0 means convex).
    pub min_second_difference: f64,
    pub non_increasing: bool,
    pub convex: bool,
}

/// Samples the displacement-convexity criterion for "straight line"
/// interpolants: `φ(s) = s^d F(s^{-d})` convex and non-increasing.
pub fn mccann_check(spec: &EntropySpec, dim: usize) -> Result<McCannReport, EntropyError> {
    let n = 400;
    let (lo, hi) = (0.5f64, 2.0f64);
    let h = (hi - lo) / n as f64;
    let mut phi = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let s = lo + k as f64 * h;
        let arg = s.powi(-(dim as i32));
        phi.push(s.powi(dim as i32) * spec.f(arg)?);
    }
    let mut max_fd = f64::NEG_INFINITY;
    for w in phi.windows(2) {
        max_fd = max_fd.max((w[1] - w[0]) / h);
    }
    let mut min_sd = f64::INFINITY;
    for w in phi.windows(3) {
        min_sd = min_sd.min((w[2] - 2.0 * w[1] + w[0]) / (h * h));
    }
    Ok(McCannReport {
        max_first_difference: max_fd,
        min_second_difference: min_sd,
        non_increasing: max_fd <= 1e-9,
        convex: min_sd >= -1e-7,
    })
}

// ============================================================================
// Entropy along an interpolant
// ============================================================================

/// `∫ F(ρ_t)` by particle quadrature at a stored node.
pub fn entropy_value_at_node(
    spec: &EntropySpec,
    interp: &DisplacementInterpolant,
    node: usize,
) -> Result<f64, EntropyError> {
    let mut acc = 0.0;
    for i in 0..interp.n_particles() {
        let det = interp.trajectories[i].det_jacobian(node).unwrap();
        if det <= 0.0 {
            return Err(EntropyError::NonPositiveDensity);
        }
        let rho = interp.rho0.value(&interp.seeds[i]) / det;
        acc += interp.weights[i] * spec.f(rho)? * det;
    }
    Ok(acc)
}

/// `∫ F(ρ_t)` at an arbitrary (off-grid, possibly negative) time by
/// re-integrating every particle.
pub fn entropy_value_at_time(
    spec: &EntropySpec,
    interp: &DisplacementInterpolant,
    t: f64,
) -> Result<f64, EntropyError> {
    if let Some(node) = interp.node_at(t) {
        return entropy_value_at_node(spec, interp, node);
    }
    let mut acc = 0.0;
    for i in 0..interp.n_particles() {
        let st = interp.particle_state_at(i, t)?;
        let det = st.det_j();
        if det <= 0.0 {
            return Err(EntropyError::NonPositiveDensity);
        }
        let rho = interp.rho0.value(&interp.seeds[i]) / det;
        acc += interp.weights[i] * spec.f(rho)? * det;
    }
    Ok(acc)
}

/// Convective acceleration `W = V̇ + ∇V·V` along a particle, which equals
/// the Euler-Lagrange acceleration of its trajectory.
pub fn material_acceleration(
    interp: &DisplacementInterpolant,
    t: f64,
    particle: usize,
) -> Result<DVector<f64>, EntropyError> {
    let st = interp.particle_state_at(particle, t)?;
    let (_, vdot) = el_rhs(&interp.lagrangian, &st.x, &st.v)
        .map_err(|e| EntropyError::Transport(Box::new(TransportError::Flow(Box::new(e)))))?;
    Ok(vdot)
}

/// Displacement Hessian by the particle-quadrature formula.
pub fn displacement_hessian(
    spec: &EntropySpec,
    interp: &DisplacementInterpolant,
    t: f64,
) -> Result<f64, EntropyError> {
    validate_entropy(spec)?;
    let mut acc = 0.0;
    for i in 0..interp.n_particles() {
        let st = interp.particle_state_at(i, t)?;
        let det = st.det_j();
        if det <= 0.0 {
            return Err(EntropyError::NonPositiveDensity);
        }
        let u = st.u_matrix().ok_or(EntropyError::NonPositiveDensity)?;
        let div_v = u.trace();
        let rho = interp.rho0.value(&interp.seeds[i]) / det;

        let b = interp.lagrangian.derivatives(&st.x, &st.v)?;
        let accel = b.el_acceleration()?;
        let (a, bb) = ab_from_bundle(&b, &accel)?;
        let k_v = (&u * &u + a * &u + bb).trace();

        let integrand =
            spec.pressure_coefficient(rho)? * div_v * div_v + spec.g(rho)? * k_v;
        acc += interp.weights[i] * integrand * det;
    }
    Ok(acc)
}

/// Central second difference of `t ↦ ∫F(ρ_t)` with one Richardson step.
pub fn hessian_fd_oracle(
    spec: &EntropySpec,
    interp: &DisplacementInterpolant,
    t: f64,
    h: f64,
) -> Result<f64, EntropyError> {
    let f0 = entropy_value_at_time(spec, interp, t)?;
    let d2 = |hh: f64| -> Result<f64, EntropyError> {
        let fp = entropy_value_at_time(spec, interp, t + hh)?;
        let fm = entropy_value_at_time(spec, interp, t - hh)?;
        Ok((fp - 2.0 * f0 + fm) / (hh * hh))
    };
    let d_h = d2(h)?;
    let d_h2 = d2(0.5 * h)?;
    Ok((4.0 * d_h2 - d_h) / 3.0)
}

/// Convexity survey along the interpolant's grid.
#[derive(Debug, Clone)]
pub struct ConvexityReport {
    pub entropies: Vec<(f64, f64)>,
    /// Max of `F(ρ_t) - ((T-t)/T F(ρ_0) + t/T F(ρ_T))`; ≤ 0 means no
    /// chord violation.
    pub max_chord_violation: f64,
    /// Min displacement Hessian over the sampled nodes.
    pub min_hessian: f64,
}

/// Evaluates the entropy on the time grid and the displacement Hessian on
/// a coarse subsample of nodes.
pub fn convexity_report(
    spec: &EntropySpec,
    interp: &DisplacementInterpolant,
) -> Result<ConvexityReport, EntropyError> {
    let times = interp.times().to_vec();
    let n = times.len();
    let mut entropies = Vec::with_capacity(n);
    for (k, &t) in times.iter().enumerate() {
        entropies.push((t, entropy_value_at_node(spec, interp, k)?));
    }
    let (t0, f_0) = entropies[0];
    let (t1, f_1) = *entropies.last().unwrap();
    let span = t1 - t0;
    let mut worst = f64::NEG_INFINITY;
    for &(t, f) in &entropies {
        let chord = f_0 * (t1 - t) / span + f_1 * (t - t0) / span;
        worst = worst.max(f - chord);
    }
    let mut min_h = f64::INFINITY;
    let stride = (n / 8).max(1);
    for k in (0..n).step_by(stride) {
        min_h = min_h.min(displacement_hessian(spec, interp, times[k])?);
    }
    Ok(ConvexityReport {
        entropies,
        max_chord_violation: worst,
        min_hessian: min_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{LagrangianModel, MetricMap, Potential};
    use crate::transport::{build_interpolant, BumpDensity};
    use nalgebra::DVector;

    fn bump2() -> BumpDensity {
        BumpDensity::normalized(2, 1.0, DVector::zeros(2))
    }

    #[test]
    fn presets_admissible() {
        for spec in [
            EntropySpec::Boltzmann,
            EntropySpec::Power(2.0),
            EntropySpec::Power(1.5),
            EntropySpec::Quadratic,
        ] {
            let rep = validate_entropy(&spec).unwrap();
            assert!(rep.admissible, "{} should be admissible", spec.name());
        }
    }

    #[test]
    fn negative_quadratic_rejected_with_witness() {
        let spec = EntropySpec::Custom(Expr::parse("-(s^2)", &["s"]).unwrap());
        match validate_entropy(&spec) {
            Err(EntropyError::Inadmissible { witness, .. }) => {
                assert!(witness > 0.0);
            }
            other => panic!("expected inadmissibility, got {other:?}"),
        }
    }

    #[test]
    fn g_identities() {
        let specs = [
            EntropySpec::Boltzmann,
            EntropySpec::Power(2.0),
            EntropySpec::Quadratic,
        ];
        for spec in &specs {
            for &s in &[1e-4, 0.3, 1.0, 7.5, 120.0] {
                let (f, fp, fpp) = spec.derivatives(s).unwrap();
                let g = spec.g(s).unwrap();
                assert!((g - (s * fp - f)).abs() < 1e-10 * (1.0 + g.abs()));
                let gp = spec.g_prime(s).unwrap();
                assert!((gp - s * fpp).abs() < 1e-10 * (1.0 + gp.abs()));
                let pc = spec.pressure_coefficient(s).unwrap();
                assert!(
                    (pc - (s * gp - g)).abs() < 1e-10 * (1.0 + pc.abs()),
                    "pressure coefficient identity"
                );
            }
        }
        // boltzmann closed forms: G(s) = s, G'(s) = 1, ρG'-G = 0
        let b = EntropySpec::Boltzmann;
        assert!((b.g(0.7).unwrap() - 0.7).abs() < 1e-14);
        assert!((b.g_prime(0.7).unwrap() - 1.0).abs() < 1e-14);
        assert!(b.pressure_coefficient(0.7).unwrap().abs() < 1e-14);
    }

    #[test]
    fn mccann_closed_forms() {
        // boltzmann: φ(s) = -d log s, convex and decreasing
        for d in [1usize, 2, 3] {
            let rep = mccann_check(&EntropySpec::Boltzmann, d).unwrap();
            assert!(rep.non_increasing && rep.convex);
            // second difference of -d log s at s = 1 is d
            assert!(rep.min_second_difference > 0.0);
        }
        // power m=2, d=1: φ(s) = 1/s - 1
        let rep = mccann_check(&EntropySpec::Power(2.0), 1).unwrap();
        assert!(rep.non_increasing && rep.convex);
        // linear F: φ constant (boundary case)
        let lin = EntropySpec::Custom(Expr::parse("s", &["s"]).unwrap());
        let rep = mccann_check(&lin, 2).unwrap();
        assert!(rep.max_first_difference.abs() < 1e-9);
        assert!(rep.min_second_difference.abs() < 1e-6);
    }

    fn dilation_interpolant() -> DisplacementInterpolant {
        let l = LagrangianModel::euclidean(2);
        build_interpolant(&l, &Potential::quadratic(2, 1.0), &bump2(), 1.0, 41, 64).unwrap()
    }

    /// Finer seeding for the entropy-value examples: the quadrature error
    /// of ∫ρ log ρ at 41²/axis is ~1e-5, at 61²/axis ~4e-7.
    fn dilation_interpolant_fine() -> DisplacementInterpolant {
        let l = LagrangianModel::euclidean(2);
        build_interpolant(&l, &Potential::quadratic(2, 1.0), &bump2(), 1.0, 61, 32).unwrap()
    }

    #[test]
    fn dilation_entropy_closed_form() {
        // F(ρ_t) = S0 - d log(1+t) for boltzmann under dilation
        let interp = dilation_interpolant_fine();
        let spec = EntropySpec::Boltzmann;
        let s0 = entropy_value_at_node(&spec, &interp, 0).unwrap();
        for &t in &[0.25, 0.5, 1.0] {
            let node = interp.node_at(t).unwrap();
            let val = entropy_value_at_node(&spec, &interp, node).unwrap();
            let expect = s0 - 2.0 * (1.0 + t).ln();
            assert!(
                (val - expect).abs() < 1e-6,
                "dilation entropy at t={t}: {val} vs {expect}"
            );
        }
    }

    #[test]
    fn entropy_at_zero_matches_direct_quadrature() {
        let interp = dilation_interpolant_fine();
        let spec = EntropySpec::Boltzmann;
        let s0 = entropy_value_at_node(&spec, &interp, 0).unwrap();
        // independent quadrature on a finer grid
        let (seeds, weights) = crate::transport::seed_grid(&interp.rho0, 151);
        let mut direct = 0.0;
        for (s, w) in seeds.iter().zip(&weights) {
            direct += w * spec.f(interp.rho0.value(s)).unwrap();
        }
        assert!(
            (s0 - direct).abs() < 1e-6,
            "entropy quadrature {s0} vs direct {direct}"
        );
    }

    #[test]
    fn translation_entropy_constant_and_hessian_zero() {
        let l = LagrangianModel::euclidean(2);
        let interp =
            build_interpolant(&l, &Potential::linear(&[0.4, -0.3]), &bump2(), 1.0, 31, 40)
                .unwrap();
        let spec = EntropySpec::Boltzmann;
        let f0 = entropy_value_at_node(&spec, &interp, 0).unwrap();
        let f1 = entropy_value_at_node(&spec, &interp, interp.node_at(1.0).unwrap()).unwrap();
        assert!((f0 - f1).abs() < 1e-12);
        let h = displacement_hessian(&spec, &interp, 0.5).unwrap();
        assert!(h.abs() < 1e-8, "translation hessian {h:.3e}");
        let o = hessian_fd_oracle(&spec, &interp, 0.5, 1e-2).unwrap();
        assert!(o.abs() < 1e-8, "translation fd oracle {o:.3e}");
    }

    #[test]
    fn dilation_hessian_closed_form() {
        // d²/dt² [S0 - d log(1+t)] = d/(1+t)²
        let interp = dilation_interpolant();
        let spec = EntropySpec::Boltzmann;
        let h0 = displacement_hessian(&spec, &interp, 0.0).unwrap();
        assert!((h0 - 2.0).abs() < 1e-4, "hessian at 0: {h0}");
        let h1 = displacement_hessian(&spec, &interp, 1.0).unwrap();
        assert!((h1 - 0.5).abs() < 1e-4, "hessian at 1: {h1}");
        let o0 = hessian_fd_oracle(&spec, &interp, 0.0, 1e-2).unwrap();
        assert!((o0 - 2.0).abs() < 1e-3, "fd oracle at 0: {o0}");
    }

    #[test]
    fn material_acceleration_closed_forms() {
        // euclidean: W = 0; mechanical |x|²/2: W = σ
        let interp = dilation_interpolant();
        let w = material_acceleration(&interp, 0.5, 7).unwrap();
        assert!(w.norm() < 1e-12);

        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let im = build_interpolant(&l, &Potential::quadratic(2, 0.3), &bump2(), 0.3, 13, 50)
            .unwrap();
        let st = im.particle_state_at(5, 0.2).unwrap();
        let w = material_acceleration(&im, 0.2, 5).unwrap();
        assert!((w - st.x).norm() < 1e-10);
    }

    #[test]
    fn mechanical_hessian_matches_fd_oracle() {
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let interp = build_interpolant(&l, &Potential::quadratic(2, 0.3), &bump2(), 0.4, 41, 80)
            .unwrap();
        let spec = EntropySpec::Boltzmann;
        let t = 0.2;
        let formula = displacement_hessian(&spec, &interp, t).unwrap();
        let oracle = hessian_fd_oracle(&spec, &interp, t, 1e-2).unwrap();
        assert!(
            (formula - oracle).abs() < 5e-4,
            "hessian {formula} vs oracle {oracle}"
        );
    }

    #[test]
    fn dilation_convexity_report() {
        let interp = dilation_interpolant();
        let rep = convexity_report(&EntropySpec::Boltzmann, &interp).unwrap();
        assert!(rep.max_chord_violation <= 1e-9, "chord violation");
        // min over grid of d/(1+t)² is d/(1+T)² = 0.5
        assert!((rep.min_hessian - 0.5).abs() < 1e-3);
        // σ(0, x) = x, so det ∇σ(0, ·) = 1 for every particle
        for p in 0..interp.n_particles() {
            assert_eq!(interp.trajectories[p].det_jacobian(0).unwrap(), 1.0);
        }
    }

    #[test]
    fn perturbed_scenario_convexity_nonnegative() {
        // velocity-perturbed product metric with curvature certified
        // non-negative on the box: the hessian stays ≥ -1e-6 and the
        // pointwise curvature along particles stays ≥ 0.
        let g = MetricMap::product_exp(2, 0.05);
        let phi = Potential::new(
            2,
            crate::expr::Expr::parse("0.0001*exp(-(x1^2+x2^2))", &["x1", "x2"]).unwrap(),
        );
        let l = LagrangianModel::perturbed_riemannian(g, phi);
        let rho0 = BumpDensity::normalized(2, 0.6, DVector::zeros(2));
        let u0 = Potential::quadratic(2, 0.3);
        let interp = build_interpolant(&l, &u0, &rho0, 0.3, 21, 60).unwrap();

        // pointwise K_x(V) along all particles at a mid-grid node
        let node = interp.node_at(0.15).unwrap();
        let mut min_k = f64::INFINITY;
        for p in 0..interp.n_particles() {
            let (x, v) = &interp.trajectories[p].states[node];
            let (j, jd) = &interp.trajectories[p].jacobian.as_ref().unwrap()[node];
            let u = jd * j.clone().try_inverse().unwrap();
            let b = interp.lagrangian.derivatives(x, v).unwrap();
            let accel = b.el_acceleration().unwrap();
            let (a, bb) = crate::curvature::ab_from_bundle(&b, &accel).unwrap();
            min_k = min_k.min((&u * &u + a * &u + bb).trace());
        }
        assert!(min_k >= -1e-9, "pointwise curvature dipped to {min_k:.3e}");

        let rep = convexity_report(&EntropySpec::Boltzmann, &interp).unwrap();
        assert!(
            rep.min_hessian >= -1e-6,
            "perturbed-scenario min hessian {:.3e}",
            rep.min_hessian
        );
        assert!(rep.max_chord_violation <= 1e-9);
    }
}
