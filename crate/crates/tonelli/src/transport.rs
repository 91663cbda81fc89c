//! Smooth displacement interpolants built from potentials.
//!
//! Given a `C³` potential `u₀` and a compactly supported smooth density
//! `ρ₀`, the interpolant flows seed particles with initial velocity
//! `V₀(x) = ∇_p H(x, ∇u₀(x))`, co-integrating the spatial Jacobian
//! `∇σ(t, ·)`. Densities come from the change of variables
//! `ρ_t(σ(t,x)) = ρ₀(x) / det ∇σ(t,x)`, so every integral over the moving
//! support reduces to a fixed quadrature over the seed grid.
//!
//! The continuity-equation residual is evaluated in Eulerian form at fixed
//! points: `∂ρ/∂t` by central time differences (each evaluation Newton-
//! inverts the flow map by re-integration), `∇·(ρV)` from tight spatial
//! differences of the same inversion plus the exact `tr(J̇ J^{-1})`.

use crate::field::VectorFieldSpec;
use crate::flow::{
    integrate, FlowError, IntegrationOptions, Trajectory, VariationIc,
};
use crate::lagrangian::{hamiltonian_grad, LagrangianError, LagrangianModel, Potential};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Flow(#[from] Box<FlowError>),
    #[error("particle {particle} hits a caustic at t ≈ {time_estimate:.6}: det ∇σ

 ≤ 0")]
    CausticAbort { particle: usize, time_estimate: f64 },
    #[error("no seed particles inside the density support")]
    EmptySupport,
    #[error("flow-map inversion stalled (residual {0:.3e})")]
    Inversion(f64),
    #[error("time {0} outside the stored grid")]
    TimeOutOfRange(f64),
}

impl From<FlowError> for TransportError {
    fn from(e: FlowError) -> Self {
        TransportError::Flow(Box::new(e))
    }
}

// ============================================================================
// Compactly supported bump density
// ============================================================================

/// `ρ₀(x) = c · exp(1/(|x-x₀|²/r² - 1))` inside the ball of radius `r`,
/// zero outside, with `c` fixed by numerical normalization.
#[derive(Debug, Clone)]
pub struct BumpDensity {
    dim: usize,
    radius: f64,
    center: DVector<f64>,
    amplitude: f64,
}

/// Relative support threshold for particle seeding.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

impl BumpDensity {
    pub fn normalized(dim: usize, radius: f64, center: DVector<f64>) -> BumpDensity {
        assert!(radius > 0.0 && dim >= 1 && center.len() == dim);
        // radial quadrature: ∫ = c r^d S_{d-1} ∫_0^1 u^{d-1} e^{1/(u²-1)} du
        let n = 200_001;
        let h = 1.0 / (n - 1) as f64;
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let u = k as f64 * h;
            let w = u * u - 1.0;
            let f = if w < 0.0 { (1.0 / w).exp() } else { 0.0 };
            vals.push(u.powi(dim as i32 - 1) * f);
        }
        let radial = crate::flow::simpson_uniform(&vals, h);
        let sphere = match dim {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            3 => 4.0 * std::f64::consts::PI,
            d => {
                // S_{d-1} = 2 π^{d/2} / Γ(d/2); desk-scale d only
                let pi = std::f64::consts::PI;
                2.0 * pi.powf(d as f64 / 2.0) / gamma_half(d)
            }
        };
        let integral = radius.powi(dim as i32) * sphere * radial;
        BumpDensity {
            dim,
            radius,
            center,
            amplitude: 1.0 / integral,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let s2 = (x - &self.center).norm_squared() / (self.radius * self.radius);
        if s2 >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 / (s2 - 1.0)).exp()
        }
    }

    /// Peak value `c·e^{-1}` at the center.
    pub fn peak(&self) -> f64 {
        self.amplitude * (-1.0f64).exp()
    }

    pub fn support_box(&self) -> (DVector<f64>, DVector<f64>) {
        let r = DVector::from_element(self.dim, self.radius);
        (&self.center - &r, &self.center + &r)
    }
}

fn gamma_half(d: usize) -> f64 {
    // Γ(d/2) for integer d >= 1
    if d.is_multiple_of(2) {
        let mut acc = 1.0;
        for k in 2..(d / 2) {
            acc *= k as f64;
        }
        if d / 2 >= 2 {
            acc
        } else {
            1.0
        }
    } else {
        // Γ(1/2 + n) = (2n)!/(4^n n!) sqrt(pi)
        let n = d / 2;
        let mut acc = std::f64::consts::PI.sqrt();
        for k in 0..n {
            acc *= k as f64 + 0.5;
        }
        acc
    }
}

// ============================================================================
// Displacement interpolant
// ============================================================================

/// Particle representation of a displacement interpolant on `[0, T]`.
#[derive(Debug)]
pub struct DisplacementInterpolant {
    pub lagrangian: LagrangianModel,
    pub u0: Potential,
    pub rho0: BumpDensity,
    pub t_final: f64,
    pub steps: usize,
    pub seeds: Vec<DVector<f64>>,
    /// Riemann weight (seed cell volume) per particle.
    pub weights: Vec<f64>,
    /// Per-particle trajectory with the `(J, J̇)` companion.
    pub trajectories: Vec<Trajectory>,
}

/// `V₀(x) = ∇_p H(x, ∇u₀(x))`.
pub fn initial_velocity(
    lagrangian: &LagrangianModel,
    u0: &Potential,
    x: &DVector<f64>,
) -> Result<DVector<f64>, LagrangianError> {
    let p = u0.gradient(x)?;
    hamiltonian_grad(lagrangian, x, &p)
}

/// Seeds a tensor grid over the support box, clipped to the support.
pub fn seed_grid(rho0: &BumpDensity, per_axis: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let d = rho0.dim();
    let (lo, hi) = rho0.support_box();
    let delta: Vec<f64> = (0..d).map(|i| (hi[i] - lo[i]) / per_axis as f64).collect();
    let cell: f64 = delta.iter().product();
    let threshold = SUPPORT_THRESHOLD * rho0.peak();
    let mut seeds = Vec::new();
    let mut weights = Vec::new();
    let mut index = vec![0usize; d];
    loop {
        let x = DVector::from_fn(d, |i, _| lo[i] + (index[i] as f64 + 0.5) * delta[i]);
        if rho0.value(&x) > threshold {
            seeds.push(x);
            weights.push(cell);
        }
        // advance the multi-index
        let mut axis = 0;
        loop {
            index[axis] += 1;
            if index[axis] < per_axis {
                break;
            }
            index[axis] = 0;
            axis += 1;
            if axis == d {
                return (seeds, weights);
            }
        }
    }
}

/// Builds the interpolant: flows every seed with the gradient field of
/// `u₀`, storing Jacobian companions and rejecting caustics.
pub fn build_interpolant(
    lagrangian: &LagrangianModel,
    u0: &Potential,
    rho0: &BumpDensity,
    t_final: f64,
    particles_per_axis: usize,
    steps: usize,
) -> Result<DisplacementInterpolant, TransportError> {
    let (seeds, weights) = seed_grid(rho0, particles_per_axis);
    if seeds.is_empty() {
        return Err(TransportError::EmptySupport);
    }
    let field = VectorFieldSpec::gradient(u0.clone(), lagrangian.clone());
    let mut trajectories = Vec::with_capacity(seeds.len());
    for (idx, seed) in seeds.iter().enumerate() {
        let jet = field.eval(seed)?;
        let traj = integrate(
            lagrangian,
            seed,
            &jet.value,
            t_final,
            steps,
            IntegrationOptions {
                variation: Some(VariationIc::Field(jet.jac.clone())),
                riccati: None,
            },
        )?;
        if let Some(c) = traj.caustic {
            return Err(TransportError::CausticAbort {
                particle: idx,
                time_estimate: c.time_estimate,
            });
        }
        trajectories.push(traj);
    }
    Ok(DisplacementInterpolant {
        lagrangian: lagrangian.clone(),
        u0: u0.clone(),
        rho0: rho0.clone(),
        t_final,
        steps,
        seeds,
        weights,
        trajectories,
    })
}

/// Full particle state at a (possibly off-grid, possibly negative) time.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub j: DMatrix<f64>,
    pub jdot: DMatrix<f64>,
}

impl ParticleState {
    pub fn det_j(&self) -> f64 {
        self.j.determinant()
    }

    /// `U = J̇ J^{-1}` (the velocity gradient along the particle).
    pub fn u_matrix(&self) -> Option<DMatrix<f64>> {
        Some(&self.jdot * self.j.clone().try_inverse()?)
    }
}

impl DisplacementInterpolant {
    pub fn n_particles(&self) -> usize {
        self.seeds.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.trajectories[0].times
    }

    /// Index of the stored node at time `t`, if `t` is on the grid.
    pub fn node_at(&self, t: f64) -> Option<usize> {
        let times = self.times();
        let h = times[1] - times[0];
        let k = ((t - times[0]) / h).round() as isize;
        if k < 0 || k as usize >= times.len() {
            return None;
        }
        let k = k as usize;
        ((times[k] - t).abs() < 1e-9 * (1.0 + t.abs())).then_some(k)
    }

    /// `ρ_t` at the particle's position, node-indexed.
    pub fn density_at_node(&self, particle: usize, node: usize) -> f64 {
        let det = self.trajectories[particle].det_jacobian(node).unwrap();
        self.rho0.value(&self.seeds[particle]) / det
    }

    /// Re-integrates particle `particle` from the nearest stored node to an
    /// arbitrary time (negative times integrate backward from t = 0).
    pub fn particle_state_at(
        &self,
        particle: usize,
        t: f64,
    ) -> Result<ParticleState, TransportError> {
        let traj = &self.trajectories[particle];
        let times = &traj.times;
        let h = times[1] - times[0];
        let idx = if t <= times[0] {
            0
        } else {
            (((t - times[0]) / h).floor() as usize).min(times.len() - 1)
        };
        let (x, v) = &traj.states[idx];
        let (j, jd) = &traj.jacobian.as_ref().unwrap()[idx];
        let dt = t - times[idx];
        if dt.abs() < 1e-14 {
            return Ok(ParticleState {
                x: x.clone(),
                v: v.clone(),
                j: j.clone(),
                jdot: jd.clone(),
            });
        }
        let substeps = ((dt.abs() / h).ceil() as usize * 8).clamp(8, 4000);
        let tr = integrate(
            &self.lagrangian,
            x,
            v,
            dt,
            substeps,
            IntegrationOptions {
                variation: Some(VariationIc::Custom(j.clone(), jd.clone())),
                riccati: None,
            },
        )?;
        let (xe, ve) = tr.end_state();
        let (je, jde) = tr.jacobian.as_ref().unwrap().last().unwrap();
        Ok(ParticleState {
            x: xe.clone(),
            v: ve.clone(),
            j: je.clone(),
            jdot: jde.clone(),
        })
    }

    /// Quadrature of `ρ_t` over the transported support: `|mass - 1|`.
    pub fn mass_check(&self, node: usize) -> f64 {
        let mass: f64 = (0..self.n_particles())
            .map(|i| {
                let det = self.trajectories[i].det_jacobian(node).unwrap();
                let rho_t = self.density_at_node(i, node);
                self.weights[i] * rho_t * det
            })
            .sum();
        (mass - 1.0).abs()
    }

    /// Max over particles of |Simpson-quadratured action - stored running
    /// action increment| — the calibrated-curve consistency check.
    pub fn action_consistency(&self) -> Result<f64, TransportError> {
        let mut worst: f64 = 0.0;
        for traj in &self.trajectories {
            let simpson = crate::flow::action(&self.lagrangian, traj)
                .map_err(|e| TransportError::Flow(Box::new(e)))?;
            let stored = *traj.action_running.last().unwrap();
            worst = worst.max((simpson - stored).abs());
        }
        Ok(worst)
    }

    /// Solves `σ(s, w) = y` for the seed `w`, starting from `guess`.
    /// Returns the converged seed and its state at `s`.
    fn invert_flow_at(
        &self,
        y: &DVector<f64>,
        s: f64,
        guess: &DVector<f64>,
    ) -> Result<(DVector<f64>, ParticleState), TransportError> {
        let field = VectorFieldSpec::gradient(self.u0.clone(), self.lagrangian.clone());
        let scale = 1.0 + y.norm();
        let mut w = guess.clone();
        let mut last_res = f64::INFINITY;
        for _ in 0..15 {
            let jet = field.eval(&w)?;
            let state = if s == 0.0 {
                ParticleState {
                    x: w.clone(),
                    v: jet.value.clone(),
                    j: DMatrix::identity(w.len(), w.len()),
                    jdot: jet.jac.clone(),
                }
            } else {
                let substeps = ((s.abs() / self.t_final * self.steps as f64).ceil() as usize)
                    .clamp(16, 8 * self.steps.max(1));
                let tr = integrate(
                    &self.lagrangian,
                    &w,
                    &jet.value,
                    s,
                    substeps,
                    IntegrationOptions {
                        variation: Some(VariationIc::Field(jet.jac.clone())),
                        riccati: None,
                    },
                )?;
                let (xe, ve) = tr.end_state();
                let (je, jde) = tr.jacobian.as_ref().unwrap().last().unwrap();
                ParticleState {
                    x: xe.clone(),
                    v: ve.clone(),
                    j: je.clone(),
                    jdot: jde.clone(),
                }
            };
            let r = &state.x - y;
            last_res = r.norm();
            if last_res <= 1e-12 * scale {
                return Ok((w, state));
            }
            let delta = state
                .j
                .clone()
                .lu()
                .solve(&r)
                .ok_or(TransportError::Inversion(last_res))?;
            w -= delta;
        }
        Err(TransportError::Inversion(last_res))
    }

    /// `ρ(s, y)` at a fixed Eulerian point by flow-map inversion.
    fn density_at(
        &self,
        y: &DVector<f64>,
        s: f64,
        guess: &DVector<f64>,
    ) -> Result<f64, TransportError> {
        let (w, state) = self.invert_flow_at(y, s, guess)?;
        Ok(self.rho0.value(&w) / state.det_j())
    }

    /// Max Eulerian continuity residual `|∂ρ/∂t + ∇·(ρV)|` over interior
    /// evaluation points at time `t`, with time step `h_t` for the central
    /// difference. Spatial derivatives use a fixed tight step so the
    /// returned residual scales as `O(h_t²)`.
    pub fn continuity_residual(&self, t: f64, h_t: f64) -> Result<f64, TransportError> {
        if t - h_t < -1e-12 || t + h_t > self.t_final + 1e-12 {
            return Err(TransportError::TimeOutOfRange(t));
        }
        let d = self.rho0.dim();
        // interior evaluation points: highest-density seeds, spread apart
        let mut order: Vec<usize> = (0..self.n_particles()).collect();
        order.sort_by(|&a, &b| {
            self.rho0
                .value(&self.seeds[b])
                .partial_cmp(&self.rho0.value(&self.seeds[a]))
                .unwrap()
        });
        let eval: Vec<usize> = order
            .into_iter()
            .step_by((self.n_particles() / 24).max(1))
            .take(5)
            .collect();

        let delta = 1e-4 * self.rho0.radius();
        let mut worst: f64 = 0.0;
        for &i in &eval {
            let z = &self.seeds[i];
            let st = self.particle_state_at(i, t)?;
            let y = st.x.clone();
            let v = st.v.clone();
            let tr_u = st
                .u_matrix()
                .ok_or(TransportError::Inversion(f64::INFINITY))?
                .trace();
            let rho = self.rho0.value(z) / st.det_j();

            // ∂ρ/∂t by central difference at fixed y
            let rp = self.density_at(&y, t + h_t, z)?;
            let rm = self.density_at(&y, t - h_t, z)?;
            let drho_dt = (rp - rm) / (2.0 * h_t);

            // ∇ρ(t,·)(y) by tight central differences at fixed t
            let mut grad_rho = DVector::zeros(d);
            for axis in 0..d {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[axis] += delta;
                ym[axis] -= delta;
                let vp = self.density_at(&yp, t, z)?;
                let vm = self.density_at(&ym, t, z)?;
                grad_rho[axis] = (vp - vm) / (2.0 * delta);
            }

            let residual = drho_dt + grad_rho.dot(&v) + rho * tr_u;
            worst = worst.max(residual.abs());
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::MetricMap;
    use nalgebra::dvector;

    fn bump2() -> BumpDensity {
        BumpDensity::normalized(2, 1.0, DVector::zeros(2))
    }

    #[test]
    fn bump_normalizes() {
        for d in 1..=3 {
            let b = BumpDensity::normalized(d, 0.8, DVector::zeros(d));
            let (seeds, weights) = seed_grid(&b, 101);
            let mass: f64 = seeds.iter().zip(&weights).map(|(s, w)| w * b.value(s)).sum();
            assert!(
                (mass - 1.0).abs() < 1e-6,
                "d={d} bump mass {mass} not normalized"
            );
        }
    }

    #[test]
    fn initial_velocity_closed_forms() {
        let l = LagrangianModel::euclidean(2);
        let u = Potential::quadratic(2, 1.0);
        let x = dvector![0.3, -0.4];
        let v = initial_velocity(&l, &u, &x).unwrap();
        assert!((v - &x).norm() < 1e-12);

        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let u = Potential::linear(&[1.0, 1.0]);
        let v = initial_velocity(&l, &u, &x).unwrap();
        assert!((v - dvector![0.5, 1.0]).norm() < 1e-12);
    }

    #[test]
    fn dilation_interpolant_closed_form() {
        // euclidean, u0 = |x|²/2: σ(t,x) = (1+t)x, det∇σ = (1+t)^d
        let l = LagrangianModel::euclidean(2);
        let u0 = Potential::quadratic(2, 1.0);
        let rho0 = bump2();
        let interp = build_interpolant(&l, &u0, &rho0, 1.0, 41, 50).unwrap();
        let node = interp.node_at(1.0).unwrap();
        for i in (0..interp.n_particles()).step_by(17) {
            let (x_t, _) = &interp.trajectories[i].states[node];
            let expect = &interp.seeds[i] * 2.0;
            assert!((x_t - expect).norm() < 1e-10);
            let det = interp.trajectories[i].det_jacobian(node).unwrap();
            assert!((det - 4.0).abs() < 1e-9);
            // ρ_t(y) = ρ₀(y/2)/4
            let rho_t = interp.density_at_node(i, node);
            let y = x_t.clone();
            assert!((rho_t - rho0.value(&(y / 2.0)) / 4.0).abs() < 1e-10);
        }
        assert!(interp.mass_check(node) < 1e-5);
        assert!(interp.mass_check(0) < 1e-5);
    }

    #[test]
    fn translation_interpolant() {
        // u0 = <a, x>: pure translation
        let l = LagrangianModel::euclidean(2);
        let a = dvector![0.4, -0.3];
        let u0 = Potential::linear(&[0.4, -0.3]);
        let rho0 = bump2();
        let interp = build_interpolant(&l, &u0, &rho0, 1.0, 21, 40).unwrap();
        let node = interp.node_at(1.0).unwrap();
        for i in (0..interp.n_particles()).step_by(13) {
            let (x_t, _) = &interp.trajectories[i].states[node];
            assert!((x_t - (&interp.seeds[i] + &a)).norm() < 1e-12);
            let det = interp.trajectories[i].det_jacobian(node).unwrap();
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mechanical_endpoints_match_reintegration() {
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let u0 = Potential::quadratic(2, 0.3);
        let rho0 = bump2();
        let interp = build_interpolant(&l, &u0, &rho0, 0.2, 13, 60).unwrap();
        let field = VectorFieldSpec::gradient(u0.clone(), l.clone());
        for i in (0..interp.n_particles()).step_by(11) {
            let seed = &interp.seeds[i];
            let v0 = field.value(seed).unwrap();
            let solo = crate::flow::lagrangian_flow(&l, seed, &v0, 0.2, 60).unwrap();
            let (xa, _) = solo.end_state();
            let (xb, _) = interp.trajectories[i].end_state();
            assert!((xa - xb).norm() < 1e-9);
        }
    }

    #[test]
    fn caustic_abort_contracting_potential() {
        // u0 = -|x|²/2 collapses at t = 1
        let l = LagrangianModel::euclidean(2);
        let u0 = Potential::quadratic(2, -1.0);
        let rho0 = bump2();
        let err = build_interpolant(&l, &u0, &rho0, 2.0, 9, 400);
        match err {
            Err(TransportError::CausticAbort { time_estimate, .. }) => {
                assert!(
                    (time_estimate - 1.0).abs() < 1e-3,
                    "crossing estimate {time_estimate}"
                );
            }
            other => panic!("expected caustic abort, got {other:?}"),
        }
    }

    #[test]
    fn action_consistency_calibration() {
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let u0 = Potential::quadratic(2, 0.3);
        let interp = build_interpolant(&l, &u0, &bump2(), 0.4, 9, 200).unwrap();
        let worst = interp.action_consistency().unwrap();
        assert!(worst < 1e-8, "action consistency {worst:.3e}");
    }

    #[test]
    fn continuity_residual_translation_and_dilation() {
        let l = LagrangianModel::euclidean(2);
        let rho0 = bump2();
        let translation = build_interpolant(
            &l,
            &Potential::linear(&[0.4, -0.3]),
            &rho0,
            1.0,
            21,
            50,
        )
        .unwrap();
        let r = translation.continuity_residual(0.5, 1e-3).unwrap();
        assert!(r < 1e-6, "translation continuity residual {r:.3e}");

        let dilation = build_interpolant(&l, &Potential::quadratic(2, 1.0), &rho0, 1.0, 21, 50)
            .unwrap();
        let r = dilation.continuity_residual(0.5, 1e-3).unwrap();
        assert!(r < 1e-6, "dilation continuity residual {r:.3e}");
    }

    #[test]
    fn continuity_residual_second_order_in_time_step() {
        // a genuinely curved flow so the h² term dominates
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let u0 = Potential::new(
            2,
            crate::expr::Expr::parse("0.3*(x1^2+x2^2)/2 + 0.1*x1", &["x1", "x2"]).unwrap(),
        );
        let interp = build_interpolant(&l, &u0, &bump2(), 0.5, 15, 100).unwrap();
        let r1 = interp.continuity_residual(0.25, 2e-3).unwrap();
        let r2 = interp.continuity_residual(0.25, 1e-3).unwrap();
        let ratio = r1 / r2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "continuity O(h²) ratio {ratio} (r1={r1:.3e}, r2={r2:.3e})"
        );
    }

    #[test]
    fn pushforward_consistency_test_function() {
        // ∫ φ(σ(t,x)) ρ₀ dx = ∫ φ(y) ρ_t(y) dy with the two quadrature routes
        let l = LagrangianModel::euclidean(2);
        let interp =
            build_interpolant(&l, &Potential::quadratic(2, 1.0), &bump2(), 1.0, 41, 50).unwrap();
        let node = interp.node_at(1.0).unwrap();
        let phi = |y: &DVector<f64>| 1.0 + y[0] + y[0] * y[1] + y[1] * y[1] * y[0];
        let mut lhs = 0.0; // seed-side quadrature
        let mut rhs = 0.0; // transported-side quadrature (change of variables)
        for i in 0..interp.n_particles() {
            let (y, _) = &interp.trajectories[i].states[node];
            let w = interp.weights[i] * interp.rho0.value(&interp.seeds[i]);
            lhs += w * phi(y);
            let det = interp.trajectories[i].det_jacobian(node).unwrap();
            rhs += interp.weights[i] * det * interp.density_at_node(i, node) * phi(y);
        }
        assert!((lhs - rhs).abs() < 1e-5, "pushforward mismatch {lhs} {rhs}");
    }
}
