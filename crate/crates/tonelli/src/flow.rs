//! Euler-Lagrange dynamics: trajectories, action, two-point cost, and the
//! Jacobian / Riccati companion equations.
//!
//! The base system is `ẋ = v`, `v̇ = hvv^{-1}(∇_x L - ∇²_vx L · v)`,
//! integrated with fixed-step RK4. The running action rides along as an
//! extra state, and the per-node energy `H(x, ∇_v L)` is stored as the
//! conservation diagnostic. Variation matrices `J` solve
//!
//! ```text
//! J̈ + A(σ, σ̇) J̇ + B(σ, σ̇) J = 0
//! ```
//!
//! with `J(0) = I, J̇(0) = ∇V₀` for spatial variations of a flowed field
//! (`∇σ`), or `J(0) = 0, J̇(0) = I` for the velocity variations used by the
//! shooting solver. The matrix `U = J̇ J^{-1}` alternatively evolves by the
//! Riccati equation `U̇ + U² + A U + B = 0`.

use crate::curvature::ab_from_bundle;
use crate::field::VectorFieldSpec;
use crate::lagrangian::{LagrangianError, LagrangianModel};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum FlowError {
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error("invalid integration setup: {0}")]
    Invalid(String),
    #[error("Riccati blow-up near t = {t_estimate:.6} (matrix norm {norm:.3e})")]
    RiccatiBlowup { t_estimate: f64, norm: f64 },
    #[error(
        "two-point cost failed: no shooting branch converged (best endpoint residual {best_residual:.3e})"
    )]
    CostFailure { best_residual: f64 },
    #[error("trajectory hit a caustic at t ≈ {time_estimate:.6}")]
    Caustic { time_estimate: f64 },
}

/// Caustic marker: first node where `det ∇σ` dropped below tolerance, with
/// an estimate of the crossing time.
#[derive(Debug, Clone, Copy)]
pub struct Caustic {
    pub node_index: usize,
    pub time_estimate: f64,
}

/// Discrete Euler-Lagrange solution with optional companions.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<(DVector<f64>, DVector<f64>)>,
    /// `H(x, ∇_v L(x, v))` per node.
    pub hamiltonian: Vec<f64>,
    /// Accumulated action `∫_0^t L` per node (RK4-integrated).
    pub action_running: Vec<f64>,
    /// `(J, J̇)` per node when a variation was co-integrated.
    pub jacobian: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
    /// `U` per node when the Riccati equation was co-integrated.
    pub riccati: Option<Vec<DMatrix<f64>>>,
    pub caustic: Option<Caustic>,
}

impl Trajectory {
    pub fn end_state(&self) -> (&DVector<f64>, &DVector<f64>) {
        let (x, v) = self.states.last().expect("empty trajectory");
        (x, v)
    }

    pub fn det_jacobian(&self, node: usize) -> Option<f64> {
        self.jacobian.as_ref().map(|j| j[node].0.determinant())
    }

    /// Max relative energy drift from the initial value.
    pub fn energy_drift(&self) -> f64 {
        let h0 = self.hamiltonian[0];
        let scale = h0.abs().max(1e-12);
        self.hamiltonian
            .iter()
            .map(|h| (h - h0).abs() / scale)
            .fold(0.0, f64::max)
    }
}

/// Right-hand side of the Euler-Lagrange system in first-order form.
pub fn el_rhs(
    lagrangian: &LagrangianModel,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), FlowError> {
    let b = lagrangian.derivatives(x, v)?;
    let a = b.el_acceleration()?;
    Ok((v.clone(), a))
}

/// Initial conditions for the variation matrix.
#[derive(Debug, Clone)]
pub enum VariationIc {
    /// `J(0) = I, J̇(0) = ∇V₀(x₀)`: spatial Jacobian `∇σ` of a flowed field.
    Field(DMatrix<f64>),
    /// `J(0) = 0, J̇(0) = I`: sensitivity to the initial velocity.
    Velocity,
    /// Arbitrary `(J(0), J̇(0))`, for re-seeding from a stored node.
    Custom(DMatrix<f64>, DMatrix<f64>),
}

#[derive(Debug, Clone, Default)]
pub struct IntegrationOptions {
    pub variation: Option<VariationIc>,
    /// Riccati initial value (usually `∇V₀(x₀)`).
    pub riccati: Option<DMatrix<f64>>,
}

/// Determinant threshold below which the flow map is flagged caustic.
pub const CAUSTIC_DET_TOL: f64 = 1e-6;
const RICCATI_NORM_LIMIT: f64 = 1e8;

struct StageDerivative {
    xdot: DVector<f64>,
    vdot: DVector<f64>,
    ldot: f64,
    jdot: Option<(DMatrix<f64>, DMatrix<f64>)>,
    udot: Option<DMatrix<f64>>,
}

struct State {
    x: DVector<f64>,
    v: DVector<f64>,
    action: f64,
    j: Option<(DMatrix<f64>, DMatrix<f64>)>,
    u: Option<DMatrix<f64>>,
}

impl State {
    fn axpy(&mut self, c: f64, d: &StageDerivative) {
        self.x.axpy(c, &d.xdot, 1.0);
        self.v.axpy(c, &d.vdot, 1.0);
        self.action += c * d.ldot;
        if let (Some((j, jd)), Some((djd, djdd))) = (self.j.as_mut(), d.jdot.as_ref()) {
            *j += djd * c;
            *jd += djdd * c;
        }
        if let (Some(u), Some(du)) = (self.u.as_mut(), d.udot.as_ref()) {
            *u += du * c;
        }
    }

    fn stepped(&self, c: f64, d: &StageDerivative) -> State {
        let mut s = State {
            x: self.x.clone(),
            v: self.v.clone(),
            action: self.action,
            j: self.j.clone(),
            u: self.u.clone(),
        };
        s.axpy(c, d);
        s
    }
}

fn stage_derivative(
    lagrangian: &LagrangianModel,
    s: &State,
) -> Result<StageDerivative, FlowError> {
    let b = lagrangian.derivatives(&s.x, &s.v)?;
    let accel = b.el_acceleration()?;
    let needs_ab = s.j.is_some() || s.u.is_some();
    let ab = if needs_ab {
        Some(ab_from_bundle(&b, &accel)?)
    } else {
        None
    };
    let jdot = s.j.as_ref().map(|(j, jd)| {
        let (a, bb) = ab.as_ref().unwrap();
        (jd.clone(), -(a * jd) - bb * j)
    });
    let udot = s.u.as_ref().map(|u| {
        let (a, bb) = ab.as_ref().unwrap();
        -(u * u) - a * u - bb
    });
    Ok(StageDerivative {
        xdot: s.v.clone(),
        vdot: accel,
        ldot: b.value,
        jdot,
        udot,
    })
}

/// Fixed-step RK4 integration of the Euler-Lagrange system with optional
/// variation and Riccati companions.
pub fn integrate(
    lagrangian: &LagrangianModel,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    t_final: f64,
    steps: usize,
    options: IntegrationOptions,
) -> Result<Trajectory, FlowError> {
    if steps == 0 {
        return Err(FlowError::Invalid("steps must be >= 1".into()));
    }
    if t_final == 0.0 {
        return Err(FlowError::Invalid("T must be nonzero".into()));
    }
    let d = lagrangian.dim();
    let h = t_final / steps as f64;

    let mut state = State {
        x: x0.clone(),
        v: v0.clone(),
        action: 0.0,
        j: options.variation.as_ref().map(|ic| match ic {
            VariationIc::Field(grad) => (DMatrix::identity(d, d), grad.clone()),
            VariationIc::Velocity => (DMatrix::zeros(d, d), DMatrix::identity(d, d)),
            VariationIc::Custom(j0, jd0) => (j0.clone(), jd0.clone()),
        }),
        u: options.riccati.clone(),
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut hamiltonian = Vec::with_capacity(steps + 1);
    let mut action_running = Vec::with_capacity(steps + 1);
    let mut jacobian = state.j.as_ref().map(|_| Vec::with_capacity(steps + 1));
    let mut riccati = state.u.as_ref().map(|_| Vec::with_capacity(steps + 1));
    let mut caustic: Option<Caustic> = None;
    // (t, -1/tr U) history for the caustic crossing estimate
    let mut beta_history: Vec<(f64, f64)> = Vec::new();

    for k in 0..=steps {
        let t = k as f64 * h;
        let b = lagrangian.derivatives(&state.x, &state.v)?;
        times.push(t);
        states.push((state.x.clone(), state.v.clone()));
        hamiltonian.push(b.energy());
        action_running.push(state.action);
        if let (Some(store), Some((j, jd))) = (jacobian.as_mut(), state.j.as_ref()) {
            store.push((j.clone(), jd.clone()));
            let det = j.determinant();
            if caustic.is_none() {
                if det <= CAUSTIC_DET_TOL {
                    let time_estimate =
                        estimate_caustic_time(&beta_history).unwrap_or(t);
                    caustic = Some(Caustic {
                        node_index: k,
                        time_estimate,
                    });
                } else if let Some(ju) = j.clone().try_inverse() {
                    let tr_u = (jd * ju).trace();
                    if tr_u < 0.0 {
                        beta_history.push((t, -1.0 / tr_u));
                        if beta_history.len() > 4 {
                            beta_history.remove(0);
                        }
                    } else {
                        beta_history.clear();
                    }
                }
            }
        }
        if let (Some(store), Some(u)) = (riccati.as_mut(), state.u.as_ref()) {
            store.push(u.clone());
            let norm = linalg::frobenius(u);
            if !norm.is_finite() || norm > RICCATI_NORM_LIMIT {
                return Err(FlowError::RiccatiBlowup {
                    t_estimate: if norm.is_finite() { t + 1.0 / norm } else { t },
                    norm,
                });
            }
        }
        if k == steps {
            break;
        }

        let k1 = stage_derivative(lagrangian, &state)?;
        let k2 = stage_derivative(lagrangian, &state.stepped(0.5 * h, &k1))?;
        let k3 = stage_derivative(lagrangian, &state.stepped(0.5 * h, &k2))?;
        let k4 = stage_derivative(lagrangian, &state.stepped(h, &k3))?;
        state.axpy(h / 6.0, &k1);
        state.axpy(h / 3.0, &k2);
        state.axpy(h / 3.0, &k3);
        state.axpy(h / 6.0, &k4);
    }

    Ok(Trajectory {
        times,
        states,
        hamiltonian,
        action_running,
        jacobian,
        riccati,
        caustic,
    })
}

/// Extrapolates the time where `det J` vanishes from the last samples of
/// `beta = -1/tr U`. Near a power-law caustic `det J ~ (t* - t)^m`,
/// `beta = (t* - t)/m`, so two samples determine both `m` and `t*`;
/// exact for the pure dilation collapse.
fn estimate_caustic_time(history: &[(f64, f64)]) -> Option<f64> {
    if history.len() < 2 {
        return None;
    }
    let (t1, b1) = history[history.len() - 2];
    let (t2, b2) = history[history.len() - 1];
    if b1 <= b2 {
        return None;
    }
    let m = (t2 - t1) / (b1 - b2);
    if !(m.is_finite() && m > 0.0) {
        return None;
    }
    Some(t1 + m * b1)
}

/// Integrates the Lagrangian flow from `(x0, v0)` over `[0, T]`.
pub fn lagrangian_flow(
    lagrangian: &LagrangianModel,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    t_final: f64,
    steps: usize,
) -> Result<Trajectory, FlowError> {
    integrate(
        lagrangian,
        x0,
        v0,
        t_final,
        steps,
        IntegrationOptions::default(),
    )
}

/// Flows `x0` with initial velocity `field(x0)` while co-integrating the
/// spatial Jacobian `∇σ` (and `∇σ̇`).
pub fn jacobian_flow(
    lagrangian: &LagrangianModel,
    x0: &DVector<f64>,
    field: &VectorFieldSpec,
    t_final: f64,
    steps: usize,
) -> Result<Trajectory, FlowError> {
    let jet = field.eval(x0)?;
    integrate(
        lagrangian,
        x0,
        &jet.value,
        t_final,
        steps,
        IntegrationOptions {
            variation: Some(VariationIc::Field(jet.jac.clone())),
            riccati: None,
        },
    )
}

/// Flows `x0` with the Riccati companion `U̇ + U² + AU + B = 0`,
/// `U(0) = ∇V₀(x0)`.
pub fn riccati_flow(
    lagrangian: &LagrangianModel,
    x0: &DVector<f64>,
    field: &VectorFieldSpec,
    t_final: f64,
    steps: usize,
) -> Result<Trajectory, FlowError> {
    let jet = field.eval(x0)?;
    integrate(
        lagrangian,
        x0,
        &jet.value,
        t_final,
        steps,
        IntegrationOptions {
            variation: Some(VariationIc::Field(jet.jac.clone())),
            riccati: Some(jet.jac.clone()),
        },
    )
}

/// Composite Simpson quadrature of `L(γ, γ̇)` over the stored uniform grid.
pub fn action(lagrangian: &LagrangianModel, traj: &Trajectory) -> Result<f64, FlowError> {
    let n = traj.times.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut values = Vec::with_capacity(n);
    for (x, v) in &traj.states {
        values.push(lagrangian.value(x, v)?);
    }
    let h = traj.times[1] - traj.times[0];
    Ok(simpson_uniform(&values, h))
}

/// Simpson on a uniform grid; falls back to a 3/8 tail when the interval
/// count is odd.
pub fn simpson_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    if n == 2 {
        return 0.5 * h * (values[0] + values[1]);
    }
    let intervals = n - 1;
    let (simpson_end, mut total) = if intervals.is_multiple_of(2) {
        (n - 1, 0.0)
    } else {
        // 3/8 rule on the last three intervals
        let tail = 3.0 * h / 8.0
            * (values[n - 4] + 3.0 * values[n - 3] + 3.0 * values[n - 2] + values[n - 1]);
        (n - 4, tail)
    };
    if simpson_end >= 2 {
        let mut acc = values[0] + values[simpson_end];
        let mut i = 1;
        while i < simpson_end {
            acc += 4.0 * values[i];
            if i + 1 < simpson_end {
                acc += 2.0 * values[i + 1];
            }
            i += 2;
        }
        total += acc * h / 3.0;
    }
    total
}

/// Result of the two-point boundary value solve.
#[derive(Debug, Clone)]
pub struct CostResult {
    pub cost: f64,
    pub v0: DVector<f64>,
    pub endpoint_residual: f64,
    pub trajectory: Trajectory,
    pub branches: usize,
}

/// Default number of RK4 steps per unit time in the shooting solver.
const SHOOTING_STEPS_PER_UNIT: usize = 256;
const SHOOTING_MIN_STEPS: usize = 128;

/// Solves `c_{L,T}(x, y)` by multiple shooting over the initial velocity.
///
/// Seeds are the straight-line velocity plus eight deterministic random
/// perturbations; each Newton iteration uses the velocity-variation matrix
/// as the exact Jacobian of the endpoint map. The branch of minimal action
/// wins; ties break toward the smaller initial speed.
pub fn cost(
    lagrangian: &LagrangianModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    t_final: f64,
    tol: f64,
) -> Result<CostResult, FlowError> {
    if t_final <= 0.0 {
        return Err(FlowError::Invalid("T must be positive".into()));
    }
    let d = lagrangian.dim();
    let steps =
        ((t_final * SHOOTING_STEPS_PER_UNIT as f64).ceil() as usize).max(SHOOTING_MIN_STEPS);
    let straight = (y - x) / t_final;
    let scale = straight.norm().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC057);
    let mut seeds = vec![straight.clone()];
    for _ in 0..8 {
        let mut p = straight.clone();
        for i in 0..d {
            p[i] += 0.5 * scale * (rng.random::<f64>() * 2.0 - 1.0);
        }
        seeds.push(p);
    }

    let mut best: Option<(f64, DVector<f64>, f64, Trajectory)> = None;
    let mut best_residual = f64::INFINITY;
    let mut branches = 0usize;

    'seed: for seed in seeds {
        let mut v0 = seed;
        let mut prev_norm = f64::INFINITY;
        for _ in 0..60 {
            let traj = match integrate(
                lagrangian,
                x,
                &v0,
                t_final,
                steps,
                IntegrationOptions {
                    variation: Some(VariationIc::Velocity),
                    riccati: None,
                },
            ) {
                Ok(t) => t,
                Err(_) => continue 'seed,
            };
            let (xt, _) = traj.end_state();
            let r = xt - y;
            let rnorm = r.norm();
            best_residual = best_residual.min(rnorm);
            if rnorm <= tol {
                let act = *traj.action_running.last().unwrap();
                branches += 1;
                let better = match &best {
                    None => true,
                    Some((a, v, _, _)) => {
                        act < a - 1e-10 || (act < a + 1e-10 && v0.norm() < v.norm())
                    }
                };
                if better {
                    best = Some((act, v0.clone(), rnorm, traj));
                }
                continue 'seed;
            }
            if rnorm > 0.9999 * prev_norm && prev_norm.is_finite() {
                // stalled; Newton still worth trying once more with damping below
            }
            prev_norm = rnorm;
            let m = traj.jacobian.as_ref().unwrap().last().unwrap().0.clone();
            let delta = match m.lu().solve(&r) {
                Some(sol) => -sol,
                None => continue 'seed,
            };
            // backtracking on the endpoint residual
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..14 {
                let cand = &v0 + &delta * lambda;
                let probe = integrate(
                    lagrangian,
                    x,
                    &cand,
                    t_final,
                    steps,
                    IntegrationOptions::default(),
                );
                if let Ok(tr) = probe {
                    let (xt, _) = tr.end_state();
                    if (xt - y).norm() < (1.0 - 1e-4 * lambda) * rnorm {
                        v0 = cand;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                continue 'seed;
            }
        }
    }

    match best {
        Some((act, v0, residual, trajectory)) => Ok(CostResult {
            cost: act,
            v0,
            endpoint_residual: residual,
            trajectory,
            branches,
        }),
        None => Err(FlowError::CostFailure { best_residual }),
    }
}

/// Re-integrates from a stored node to an arbitrary time within (or
/// slightly beyond) the grid; used by oracles needing off-grid states.
pub fn state_at(
    lagrangian: &LagrangianModel,
    traj: &Trajectory,
    t: f64,
    substeps: usize,
) -> Result<(DVector<f64>, DVector<f64>), FlowError> {
    // nearest stored node at or before t (clamped)
    let t0 = traj.times[0];
    let h = traj.times[1] - traj.times[0];
    let idx = (((t - t0) / h).floor() as isize).clamp(0, traj.times.len() as isize - 1) as usize;
    let (x, v) = &traj.states[idx];
    let dt = t - traj.times[idx];
    if dt.abs() < 1e-15 {
        return Ok((x.clone(), v.clone()));
    }
    let tr = integrate(
        lagrangian,
        x,
        v,
        dt,
        substeps,
        IntegrationOptions::default(),
    )?;
    let (xe, ve) = tr.end_state();
    Ok((xe.clone(), ve.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{MetricMap, Potential};
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn euclidean_straight_lines() {
        let l = LagrangianModel::euclidean(2);
        let tr = lagrangian_flow(&l, &dvector![0.0, 0.0], &dvector![1.0, 0.0], 2.0, 100).unwrap();
        let (x, v) = tr.end_state();
        assert!((x - dvector![2.0, 0.0]).norm() < 1e-12);
        assert!((v - dvector![1.0, 0.0]).norm() < 1e-12);
        assert!(tr.energy_drift() < 1e-14);
    }

    #[test]
    fn el_rhs_signs() {
        // mechanical with +U convention: v̇ = +∇U
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let (xd, vd) = el_rhs(&l, &dvector![1.0, 0.0], &dvector![0.0, 0.0]).unwrap();
        assert!((xd - dvector![0.0, 0.0]).norm() < 1e-14);
        assert!((vd - dvector![1.0, 0.0]).norm() < 1e-14);

        // constant metric: no x-dependence, zero acceleration
        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let (_, vd) = el_rhs(&l, &dvector![0.3, 0.4], &dvector![1.0, -1.0]).unwrap();
        assert!(vd.norm() < 1e-14);
    }

    #[test]
    fn mechanical_cosh_solution() {
        // L = |v|^2/2 + |x|^2/2 gives ẍ = +x, so x(t) = cosh(t) x0 from rest.
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let t = 1.25;
        let tr = lagrangian_flow(&l, &dvector![1.0, 0.0], &dvector![0.0, 0.0], t, 2000).unwrap();
        let (x, v) = tr.end_state();
        assert!((x[0] - t.cosh()).abs() < 1e-9);
        assert!((v[0] - t.sinh()).abs() < 1e-9);
        assert!(x[1].abs() < 1e-12);
    }

    #[test]
    fn action_of_straight_line() {
        let l = LagrangianModel::euclidean(2);
        let tr = lagrangian_flow(&l, &dvector![0.0, 0.0], &dvector![1.0, 1.0], 1.0, 64).unwrap();
        let a = action(&l, &tr).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        // zero curve
        let tr0 = lagrangian_flow(&l, &dvector![0.5, 0.5], &dvector![0.0, 0.0], 1.0, 16).unwrap();
        assert!(action(&l, &tr0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn euclidean_cost_closed_form() {
        let l = LagrangianModel::euclidean(2);
        let r = cost(&l, &dvector![0.0, 0.0], &dvector![1.0, 1.0], 1.0, 1e-10).unwrap();
        assert!((r.cost - 1.0).abs() < 1e-10);
        assert!((r.v0.clone() - dvector![1.0, 1.0]).norm() < 1e-9);
        let r = cost(&l, &dvector![0.0, 0.0], &dvector![1.0, 1.0], 2.0, 1e-10).unwrap();
        assert!((r.cost - 0.5).abs() < 1e-10);
    }

    #[test]
    fn jacobian_flow_linear_field() {
        // euclidean with field Mx: J(t) = I + tM exactly
        let l = LagrangianModel::euclidean(2);
        let m = dmatrix![0.3, 0.1; -0.2, 0.5];
        let field = VectorFieldSpec::linear(m.clone());
        let x0 = dvector![0.4, -0.7];
        let tr = jacobian_flow(&l, &x0, &field, 1.5, 150).unwrap();
        let (j, jd) = tr.jacobian.as_ref().unwrap().last().unwrap();
        let expect = DMatrix::identity(2, 2) + &m * 1.5;
        assert!((j - expect).norm() < 1e-10);
        assert!((jd - m).norm() < 1e-10);
        assert!(tr.caustic.is_none());
    }

    #[test]
    fn dilation_jacobian_and_riccati() {
        // field x: J = (1+t) I, U = I/(1+t)
        let l = LagrangianModel::euclidean(2);
        let field = VectorFieldSpec::linear(DMatrix::identity(2, 2));
        let x0 = dvector![0.3, 0.2];
        let tr = riccati_flow(&l, &x0, &field, 1.0, 200).unwrap();
        let u = tr.riccati.as_ref().unwrap().last().unwrap();
        let expect = DMatrix::identity(2, 2) * 0.5;
        assert!((u - expect).norm() < 1e-9);
        let det = tr.det_jacobian(tr.times.len() - 1).unwrap();
        assert!((det - 4.0).abs() < 1e-9);
    }

    #[test]
    fn riccati_closed_form_general_matrix() {
        // euclidean: U(t) = M (I + tM)^{-1}
        let l = LagrangianModel::euclidean(2);
        let m = dmatrix![0.4, 0.2; 0.1, 0.3];
        let field = VectorFieldSpec::linear(m.clone());
        let tr = riccati_flow(&l, &dvector![0.0, 0.0], &field, 1.0, 200).unwrap();
        let u = tr.riccati.as_ref().unwrap().last().unwrap();
        let expect = &m
            * (DMatrix::identity(2, 2) + &m)
                .try_inverse()
                .unwrap();
        assert!((u - expect).norm() < 1e-10);
    }

    #[test]
    fn caustic_detection_dilation_collapse() {
        // field -x: J = (1 - t) I vanishes at t = 1
        let l = LagrangianModel::euclidean(2);
        let field = VectorFieldSpec::linear(-DMatrix::identity(2, 2));
        let tr = jacobian_flow(&l, &dvector![0.5, 0.1], &field, 2.0, 2000).unwrap();
        let c = tr.caustic.expect("caustic must be flagged");
        assert!(
            (c.time_estimate - 1.0).abs() < 1e-3,
            "crossing estimate {} should be 1.0",
            c.time_estimate
        );
    }

    #[test]
    fn riccati_blowup_reported_near_caustic() {
        // contraction field -x: U(t) = -I/(1-t) blows up at t = 1
        let l = LagrangianModel::euclidean(2);
        let field = VectorFieldSpec::linear(-DMatrix::identity(2, 2));
        let err = riccati_flow(&l, &dvector![0.4, 0.1], &field, 2.0, 4000);
        match err {
            Err(FlowError::RiccatiBlowup { t_estimate, .. }) => {
                assert!(
                    (t_estimate - 1.0).abs() < 1e-2,
                    "blow-up estimate {t_estimate}"
                );
            }
            other => panic!("expected riccati blow-up, got {other:?}"),
        }
    }

    /// Discretized-action oracle for `L = |v|²/2 + |x|²/2`: piecewise-linear
    /// curves on a fixed node grid, each segment integrated exactly
    /// (Simpson is exact for the quadratic potential), minimized by
    /// coordinate descent with golden-section line searches on the local
    /// two-segment action.
    fn discretized_action_minimum(
        x: &DVector<f64>,
        y: &DVector<f64>,
        t_final: f64,
        nodes: usize,
        sweeps: usize,
    ) -> f64 {
        let d = x.len();
        let h = t_final / (nodes - 1) as f64;
        let potential = |p: &DVector<f64>| 0.5 * p.norm_squared();
        let segment = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
            let kinetic = (b - a).norm_squared() / (2.0 * h);
            let mid = (a + b) * 0.5;
            kinetic + h / 6.0 * (potential(a) + 4.0 * potential(&mid) + potential(b))
        };
        let mut z: Vec<DVector<f64>> = (0..nodes)
            .map(|k| {
                let s = k as f64 / (nodes - 1) as f64;
                x * (1.0 - s) + y * s
            })
            .collect();
        for _ in 0..sweeps {
            for k in 1..nodes - 1 {
                for c in 0..d {
                    let local = |val: f64, z: &mut Vec<DVector<f64>>| -> f64 {
                        z[k][c] = val;
                        segment(&z[k - 1], &z[k]) + segment(&z[k], &z[k + 1])
                    };
                    let base = z[k][c];
                    let mut lo = base - 0.25;
                    let mut hi = base + 0.25;
                    for _ in 0..48 {
                        let m1 = lo + 0.381_966 * (hi - lo);
                        let m2 = hi - 0.381_966 * (hi - lo);
                        let a1 = local(m1, &mut z);
                        let a2 = local(m2, &mut z);
                        if a1 < a2 {
                            hi = m2;
                        } else {
                            lo = m1;
                        }
                    }
                    z[k][c] = 0.5 * (lo + hi);
                }
            }
        }
        (0..nodes - 1).map(|k| segment(&z[k], &z[k + 1])).sum()
    }

    #[test]
    fn mechanical_cost_matches_discretized_action_oracle() {
        // L = |v|²/2 + |x|²/2 from (0,0) to (1,0) in T = 1: the minimizer
        // is sinh(t)/sinh(1) with action coth(1)/2.
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let x = dvector![0.0, 0.0];
        let y = dvector![1.0, 0.0];
        let r = cost(&l, &x, &y, 1.0, 1e-10).unwrap();
        let closed_form = 0.5 / 1f64.tanh();
        assert!(
            (r.cost - closed_form).abs() < 1e-6,
            "cost {} vs closed form {closed_form}",
            r.cost
        );
        let oracle = discretized_action_minimum(&x, &y, 1.0, 50, 1200);
        assert!(
            (r.cost - oracle).abs() < 1e-4,
            "cost {} vs oracle {oracle}",
            r.cost
        );
    }

    #[test]
    fn cost_lower_bounds_random_test_curves() {
        // minimality: cost ≤ action of any admissible curve
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 0.7));
        let x = dvector![0.2, -0.1];
        let y = dvector![0.9, 0.5];
        let t_final = 1.2;
        let r = cost(&l, &x, &y, t_final, 1e-9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let nodes = 40;
        let h = t_final / (nodes - 1) as f64;
        for _ in 0..20 {
            let z: Vec<DVector<f64>> = (0..nodes)
                .map(|k| {
                    let s = k as f64 / (nodes - 1) as f64;
                    let bump = (std::f64::consts::PI * s).sin();
                    let mut p = &x * (1.0 - s) + &y * s;
                    for c in 0..2 {
                        p[c] += 0.3 * bump * (rng.random::<f64>() - 0.5);
                    }
                    p
                })
                .collect();
            let mut action = 0.0;
            for k in 0..nodes - 1 {
                let v = (&z[k + 1] - &z[k]) / h;
                action += 0.5
                    * h
                    * (l.value(&z[k], &v).unwrap() + l.value(&z[k + 1], &v).unwrap());
            }
            assert!(
                r.cost <= action + 1e-6,
                "cost {} exceeds test-curve action {action}",
                r.cost
            );
        }
    }

    #[test]
    fn flow_property_composition() {
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 0.7));
        let x0 = dvector![0.4, -0.3];
        let v0 = dvector![0.2, 0.6];
        let full = lagrangian_flow(&l, &x0, &v0, 1.0, 1000).unwrap();
        let half = lagrangian_flow(&l, &x0, &v0, 0.5, 500).unwrap();
        let (xm, vm) = half.end_state();
        let second = lagrangian_flow(&l, xm, vm, 0.5, 500).unwrap();
        let (xa, va) = full.end_state();
        let (xb, vb) = second.end_state();
        assert!((xa - xb).norm() < 1e-7);
        assert!((va - vb).norm() < 1e-7);
    }

    #[test]
    fn rk4_order_check() {
        // halving the step should reduce endpoint error ~16x
        let l = LagrangianModel::mechanical(MetricMap::identity(1), Potential::quadratic(1, 1.0));
        let x0 = dvector![1.0];
        let v0 = dvector![0.0];
        let t: f64 = 1.0;
        let exact = t.cosh();
        let err = |steps: usize| {
            let tr = lagrangian_flow(&l, &x0, &v0, t, steps).unwrap();
            (tr.end_state().0[0] - exact).abs()
        };
        let e1 = err(50);
        let e2 = err(100);
        let ratio = e1 / e2;
        assert!(
            (8.0..32.0).contains(&ratio),
            "RK4 order ratio {ratio} out of range"
        );
    }
}
