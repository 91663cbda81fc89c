//! The generalized curvature `K_x(ξ)` and its three evaluation routes.
//!
//! For a `C³` Tonelli Lagrangian the coefficient matrices are
//!
//! ```text
//! A(x,v) = hvv^{-1} [ d/dt hvv |_{EL curve} + hvx - hxv ]
//! B(x,v) = hvv^{-1} [ d/dt hvx |_{EL curve} - hxx ]
//! ```
//!
//! with the time derivatives expanded by the chain rule along the
//! Euler-Lagrange curve through `(x, v)` — third derivatives contracted
//! against the velocity and the EL acceleration, never numerical time
//! stepping. The three routes to `K_x(ξ)`:
//!
//! 1. trace definition `tr(∇ξ² + A∇ξ + B)`;
//! 2. divergence identity `-∇·(Γ_L(ξ)) - <ξ, ∇(∇·ξ)>`, differentiated
//!    through the matrix inverse with first-order jets;
//! 3. the index formula for gradient-type fields, eight Einstein-summed
//!    groups in `hvv^{-1}` and the third-derivative slices.
//!
//! The index groups here restore the positional part of the material time
//! derivatives (the `x∂v∂v`-with-`ξ` and `x∂x∂v` contractions); with those
//! two groups present and the mixed-block contractions taken against the
//! velocity slot, all three routes agree to machine precision on every
//! built-in family.

use crate::field::{gradient_field_eval, FieldJet, VectorFieldSpec};
use crate::flow::{integrate, FlowError, IntegrationOptions, VariationIc};
use crate::lagrangian::{
    DerivativeBundle, LagrangianError, LagrangianModel, MetricMap, Potential,
};
use crate::linalg::{self, Jet1};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurvatureError {
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Flow(#[from] Box<FlowError>),
    #[error("index formula requires a gradient-type field")]
    NeedsGradientField,
    #[error("flow inversion for the field extension did not converge (residual {0:.3e})")]
    ExtensionInversion(f64),
}

impl From<FlowError> for CurvatureError {
    fn from(e: FlowError) -> Self {
        CurvatureError::Flow(Box::new(e))
    }
}

// ============================================================================
// A and B coefficient matrices
// ============================================================================

/// Assembles `A`, `B` from a derivative bundle and the EL acceleration at
/// the same point.
pub fn ab_from_bundle(
    b: &DerivativeBundle,
    accel: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LagrangianError> {
    let d = b.x.len();
    let mut hvv_dot = DMatrix::zeros(d, d);
    let mut hvx_dot = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut dvv = 0.0;
            let mut dvx = 0.0;
            for k in 0..d {
                dvv += b.txvv.get(k, i, j) * b.v[k] + b.tvvv.get(i, j, k) * accel[k];
                dvx += b.txxv.get(j, k, i) * b.v[k] + b.txvv.get(j, i, k) * accel[k];
            }
            hvv_dot[(i, j)] = dvv;
            hvx_dot[(i, j)] = dvx;
        }
    }
    let hvx = b.hxv.transpose();
    let chol = b
        .hvv
        .clone()
        .cholesky()
        .ok_or_else(|| LagrangianError::TonelliViolation {
            x: b.x.iter().cloned().collect(),
            v: b.v.iter().cloned().collect(),
        })?;
    let a = chol.solve(&(&hvv_dot + &hvx - &b.hxv));
    let bb = chol.solve(&(&hvx_dot - &b.hxx));
    Ok((a, bb))
}

/// `A(x, v)`.
pub fn matrix_a(
    l: &LagrangianModel,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>, CurvatureError> {
    let b = l.derivatives(x, v)?;
    let accel = b.el_acceleration()?;
    Ok(ab_from_bundle(&b, &accel)?.0)
}

/// `B(x, v)`.
pub fn matrix_b(
    l: &LagrangianModel,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DMatrix<f64>, CurvatureError> {
    let b = l.derivatives(x, v)?;
    let accel = b.el_acceleration()?;
    Ok(ab_from_bundle(&b, &accel)?.1)
}

// ============================================================================
// Gamma operator and the trace route
// ============================================================================

/// `Γ_L(ξ)(x) = hvv^{-1}(∇_x L - ∇²_vx L ξ) - (∇ξ) ξ`, blocks at `(x, ξ(x))`.
pub fn gamma_l(
    l: &LagrangianModel,
    field: &VectorFieldSpec,
    x: &DVector<f64>,
) -> Result<DVector<f64>, CurvatureError> {
    let jet = field.eval(x)?;
    let b = l.derivatives(x, &jet.value)?;
    let accel = b.el_acceleration()?;
    Ok(accel - &jet.jac * &jet.value)
}

/// Trace-definition curvature from a precomputed 1-jet of the field.
pub fn curvature_def_from_parts(
    l: &LagrangianModel,
    x: &DVector<f64>,
    xi: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> Result<f64, CurvatureError> {
    let b = l.derivatives(x, xi)?;
    let accel = b.el_acceleration()?;
    let (a, bb) = ab_from_bundle(&b, &accel)?;
    Ok((jac * jac + a * jac + bb).trace())
}

/// `K_x(ξ) = tr(∇ξ² + A ∇ξ + B)` at `(x, ξ(x))`.
pub fn curvature_def(
    l: &LagrangianModel,
    field: &VectorFieldSpec,
    x: &DVector<f64>,
) -> Result<f64, CurvatureError> {
    let jet = field.eval(x)?;
    curvature_def_from_parts(l, x, &jet.value, &jet.jac)
}

// ============================================================================
// Divergence route
// ============================================================================

/// `K_x(ξ) = -(∇·Γ_L(ξ))(x) - <ξ(x), ∇(∇·ξ)(x)>`, with the divergence of
/// `Γ_L` obtained by first-order jet differentiation through the matrix
/// solve (no finite differences).
pub fn curvature_divergence(
    l: &LagrangianModel,
    field: &VectorFieldSpec,
    x: &DVector<f64>,
) -> Result<f64, CurvatureError> {
    let jet = field.eval(x)?;
    let d = x.len();
    let b = l.derivatives(x, &jet.value)?;
    let xi = &jet.value;
    let jac = &jet.jac;

    // hvv(x, ξ(x)) entries as Jet1 in x
    let mut a_mat: Vec<Vec<Jet1>> = Vec::with_capacity(d);
    for i in 0..d {
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let mut g = DVector::zeros(d);
            for lx in 0..d {
                let mut acc = b.txvv.get(lx, i, j);
                for m in 0..d {
                    acc += b.tvvv.get(i, j, m) * jac[(m, lx)];
                }
                g[lx] = acc;
            }
            row.push(Jet1::new(b.hvv[(i, j)], g));
        }
        a_mat.push(row);
    }

    // rhs_i = ∇_x L_i - (∇²_vx L ξ)_i as Jet1 in x
    let mut rhs: Vec<Jet1> = Vec::with_capacity(d);
    for i in 0..d {
        let mut w = 0.0;
        for k in 0..d {
            w += b.hxv[(k, i)] * xi[k];
        }
        let mut g = DVector::zeros(d);
        for lx in 0..d {
            // d/dx_l of ∇_x L_i(x, ξ(x))
            let mut acc = b.hxx[(lx, i)];
            for m in 0..d {
                acc += b.hxv[(i, m)] * jac[(m, lx)];
            }
            // minus d/dx_l of (∇²_vx L ξ)_i
            for k in 0..d {
                let mut dk = b.txxv.get(lx, k, i);
                for m in 0..d {
                    dk += b.txvv.get(k, i, m) * jac[(m, lx)];
                }
                acc -= dk * xi[k] + b.hxv[(k, i)] * jac[(k, lx)];
            }
            g[lx] = acc;
        }
        rhs.push(Jet1::new(b.gx[i] - w, g));
    }

    let accel = linalg::solve_jet1(&a_mat, &rhs).ok_or_else(|| {
        CurvatureError::Lagrangian(LagrangianError::TonelliViolation {
            x: x.iter().cloned().collect(),
            v: xi.iter().cloned().collect(),
        })
    })?;

    // Γ_i = accel_i - (∇ξ ξ)_i as Jet1
    let mut div_gamma = 0.0;
    for i in 0..d {
        let mut conv_v = 0.0;
        let mut conv_g = DVector::zeros(d);
        for k in 0..d {
            conv_v += jac[(i, k)] * xi[k];
            for lx in 0..d {
                conv_g[lx] += jet.hess[i][(k, lx)] * xi[k] + jac[(i, k)] * jac[(k, lx)];
            }
        }
        let gamma_i = accel[i].sub(&Jet1::new(conv_v, conv_g));
        div_gamma += gamma_i.g[i];
    }

    let mut advected = 0.0;
    for j in 0..d {
        for i in 0..d {
            advected += xi[j] * jet.hess[i][(i, j)];
        }
    }

    Ok(-div_gamma - advected)
}

// ============================================================================
// Index formula (gradient-type fields)
// ============================================================================

pub const TERM_NAMES: [&str; 8] = [
    "term_i", "term_ii", "term_iii", "term_iv", "term_v", "term_vi", "term_vii", "term_viii",
];

/// Values of the eight index-formula groups.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermBreakdown {
    pub groups: [f64; 8],
}

impl TermBreakdown {
    pub fn sum(&self) -> f64 {
        self.groups.iter().sum()
    }
}

/// Index-formula curvature for the gradient-type field of `u`, with the
/// per-group breakdown.
pub fn curvature_indexed(
    l: &LagrangianModel,
    u: &Potential,
    x: &DVector<f64>,
) -> Result<(f64, TermBreakdown), CurvatureError> {
    let (jet, b) = gradient_field_eval(l, u, x)?;
    curvature_indexed_from_parts(&b, &jet)
}

/// Same as [`curvature_indexed`], rejecting non-gradient fields.
pub fn curvature_indexed_field(
    l: &LagrangianModel,
    field: &VectorFieldSpec,
    x: &DVector<f64>,
) -> Result<(f64, TermBreakdown), CurvatureError> {
    if !field.is_gradient_type() {
        return Err(CurvatureError::NeedsGradientField);
    }
    let jet = field.eval(x)?;
    let b = l.derivatives(x, &jet.value)?;
    curvature_indexed_from_parts(&b, &jet)
}

fn curvature_indexed_from_parts(
    b: &DerivativeBundle,
    jet: &FieldJet,
) -> Result<(f64, TermBreakdown), CurvatureError> {
    let d = b.x.len();
    let xi = &jet.value;
    let jac = &jet.jac;
    let q = linalg::inverse_spd(&b.hvv).ok_or_else(|| {
        CurvatureError::Lagrangian(LagrangianError::TonelliViolation {
            x: b.x.iter().cloned().collect(),
            v: xi.iter().cloned().collect(),
        })
    })?;

    // L^{kl} ∂L/∂x_l  and  L^{kl} (∇²_vx L ξ)_l
    let qgx = &q * &b.gx;
    let mut w = DVector::zeros(d);
    for lv in 0..d {
        for m in 0..d {
            w[lv] += b.hxv[(m, lv)] * xi[m];
        }
    }
    let qw = &q * &w;

    let mut t = TermBreakdown::default();

    // I: L^{ik} ξ_{j,k} Lv_j v_l ξ_{l,i}
    t.groups[0] = (&q * (jac.transpose() * &b.hvv * jac)).trace();

    // II: + L^{ij} ∂³L/∂x_l∂v_j∂v_k ξ_l ξ_{k,i}
    let mut g2 = 0.0;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let mut inner = 0.0;
                for lx in 0..d {
                    inner += b.txvv.get(lx, j, k) * xi[lx];
                }
                g2 += q[(i, j)] * inner * jac[(k, i)];
            }
        }
    }
    t.groups[1] = g2;

    // III / IV: ± L^{im} ∂³L/∂v_m∂v_j∂v_k (L^{kl} ∂L/∂x_l resp. L^{kl}(∇²_vx L ξ)_l) ξ_{j,i}
    let mut g3 = 0.0;
    let mut g4 = 0.0;
    for i in 0..d {
        for m in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let base = q[(i, m)] * b.tvvv.get(m, j, k) * jac[(j, i)];
                    g3 += base * qgx[k];
                    g4 -= base * qw[k];
                }
            }
        }
    }
    t.groups[2] = g3;
    t.groups[3] = g4;

    // V: + L^{ij} ∂³L/∂x_i∂x_l∂v_j ξ_l
    let mut g5 = 0.0;
    for i in 0..d {
        for j in 0..d {
            for lx in 0..d {
                g5 += q[(i, j)] * b.txxv.get(i, lx, j) * xi[lx];
            }
        }
    }
    t.groups[4] = g5;

    // VI / VII: ± L^{ij} ∂³L/∂x_i∂v_j∂v_k (L^{kl} ∂L/∂x_l resp. L^{kl}(∇²_vx L ξ)_l)
    let mut g6 = 0.0;
    let mut g7 = 0.0;
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let base = q[(i, j)] * b.txvv.get(i, j, k);
                g6 += base * qgx[k];
                g7 -= base * qw[k];
            }
        }
    }
    t.groups[5] = g6;
    t.groups[6] = g7;

    // VIII: - L^{ij} ∂²L/∂x_j∂x_i
    t.groups[7] = -(&q * &b.hxx).trace();

    Ok((t.sum(), t))
}

// ============================================================================
// Extension (Bochner) residual
// ============================================================================

const INVERSION_STEPS: usize = 32;
const INVERSION_TOL: f64 = 1e-13;

/// Flows the extension of `field` to time `s` and reports `∇·V(s, ·)`
/// evaluated at the fixed point `x`, by Newton inversion of the flow map.
fn divergence_of_extension_at(
    l: &LagrangianModel,
    field: &VectorFieldSpec,
    x: &DVector<f64>,
    s: f64,
) -> Result<f64, CurvatureError> {
    let scale = 1.0 + x.norm();
    let mut z = x - field.value(x)? * s;
    for _ in 0..12 {
        let jet = field.eval(&z)?;
        let traj = integrate(
            l,
            &z,
            &jet.value,
            s,
            INVERSION_STEPS,
            IntegrationOptions {
                variation: Some(VariationIc::Field(jet.jac.clone())),
                riccati: None,
            },
        )?;
        let (sigma, _) = traj.end_state();
        let (j, jd) = traj.jacobian.as_ref().unwrap().last().unwrap();
        let r = sigma - x;
        if r.norm() <= INVERSION_TOL * scale {
            let j_inv = j
                .clone()
                .try_inverse()
                .ok_or(FlowError::Caustic {
                    time_estimate: s,
                })?;
            return Ok((jd * j_inv).trace());
        }
        let delta = j
            .clone()
            .lu()
            .solve(&r)
            .ok_or(FlowError::Caustic { time_estimate: s })?;
        z -= delta;
    }
    // accept the last iterate if it is nearly converged
    let jet = field.eval(&z)?;
    let traj = integrate(
        l,
        &z,
        &jet.value,
        s,
        INVERSION_STEPS,
        IntegrationOptions {
            variation: Some(VariationIc::Field(jet.jac.clone())),
            riccati: None,
        },
    )?;
    let (sigma, _) = traj.end_state();
    let res = (sigma - x).norm();
    if res <= 1e-10 * scale {
        let (j, jd) = traj.jacobian.as_ref().unwrap().last().unwrap();
        let j_inv = j.clone().try_inverse().ok_or(FlowError::Caustic {
            time_estimate: s,
        })?;
        return Ok((jd * j_inv).trace());
    }
    Err(CurvatureError::ExtensionInversion(res))
}

/// Absolute value of the left side of the evolution identity
///
/// ```text
/// ∇·V̇(0,x) + <ξ(x), ∇(∇·ξ)(x)> + tr(∇ξ² + A∇ξ + B) = 0
/// ```
///
/// where `V` extends `ξ` so its integral curves satisfy the EL equation.
/// `∇·V̇(0,x)` is the only time-stepped quantity: a central difference with
/// step `h` of `∇·V(±h, ·)` at fixed `x`, so the residual decays as `h²`.
pub fn bochner_residual(
    l: &LagrangianModel,
    field: &VectorFieldSpec,
    x: &DVector<f64>,
    h: f64,
) -> Result<f64, CurvatureError> {
    let jet = field.eval(x)?;
    let d = x.len();

    let div_plus = divergence_of_extension_at(l, field, x, h)?;
    let div_minus = divergence_of_extension_at(l, field, x, -h)?;
    let div_vdot = (div_plus - div_minus) / (2.0 * h);

    let mut advected = 0.0;
    for j in 0..d {
        for i in 0..d {
            advected += jet.value[j] * jet.hess[i][(i, j)];
        }
    }
    let trace_part = curvature_def_from_parts(l, x, &jet.value, &jet.jac)?;
    Ok((div_vdot + advected + trace_part).abs())
}

// ============================================================================
// Riemannian comparison: Bakry-Emery tensor
// ============================================================================

/// Bakry-Emery evaluation at a point, with both Hessian conventions for
/// the weight `½ log det g` (the source display does not fix one).
#[derive(Debug, Clone)]
pub struct BakryEmery {
    /// `(Ric + covariant Hessian)(ξ, ξ)`
    pub be_cov: f64,
    /// `(Ric + Euclidean Hessian)(ξ, ξ)`
    pub be_euclid: f64,
    pub ricci: DMatrix<f64>,
    pub hess_cov: DMatrix<f64>,
    pub hess_euclid: DMatrix<f64>,
}

/// Christoffel symbols `Γ^k_{ij}` and their first derivatives from a
/// metric jet.
struct Christoffel {
    d: usize,
    /// `gamma[k][(i,j)]`
    gamma: Vec<DMatrix<f64>>,
    /// `dgamma[m][k][(i,j)] = ∂_m Γ^k_{ij}`
    dgamma: Vec<Vec<DMatrix<f64>>>,
}

fn christoffel(g: &MetricMap, x: &DVector<f64>) -> Result<Christoffel, LagrangianError> {
    let d = g.dim();
    let gj = g.eval(x)?;
    let ginv = linalg::inverse_spd(&gj.g).ok_or_else(|| LagrangianError::MetricNotSpd {
        x: x.iter().cloned().collect(),
    })?;
    // ∂_m g^{kl} = -(g^{-1} ∂_m g g^{-1})^{kl}
    let mut dginv = Vec::with_capacity(d);
    for m in 0..d {
        let mut dgm = DMatrix::zeros(d, d);
        for a in 0..d {
            for bq in 0..d {
                dgm[(a, bq)] = gj.dg.get(m, a, bq);
            }
        }
        dginv.push(-(&ginv * dgm * &ginv));
    }
    let half_bracket = |i: usize, j: usize, lx: usize| -> f64 {
        0.5 * (gj.dg.get(i, j, lx) + gj.dg.get(j, i, lx) - gj.dg.get(lx, i, j))
    };
    let dhalf_bracket = |m: usize, i: usize, j: usize, lx: usize| -> f64 {
        0.5 * (gj.ddg(m, i, j, lx) + gj.ddg(m, j, i, lx) - gj.ddg(m, lx, i, j))
    };
    let mut gamma = vec![DMatrix::zeros(d, d); d];
    let mut dgamma = vec![vec![DMatrix::zeros(d, d); d]; d];
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for lx in 0..d {
                    acc += ginv[(k, lx)] * half_bracket(i, j, lx);
                }
                gamma[k][(i, j)] = acc;
                for m in 0..d {
                    let mut dacc = 0.0;
                    for lx in 0..d {
                        dacc += dginv[m][(k, lx)] * half_bracket(i, j, lx)
                            + ginv[(k, lx)] * dhalf_bracket(m, i, j, lx);
                    }
                    dgamma[m][k][(i, j)] = dacc;
                }
            }
        }
    }
    Ok(Christoffel { d, gamma, dgamma })
}

fn ricci(ch: &Christoffel) -> DMatrix<f64> {
    let d = ch.d;
    let mut ric = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += ch.dgamma[k][k][(i, j)] - ch.dgamma[j][k][(i, k)];
                for lx in 0..d {
                    acc += ch.gamma[k][(k, lx)] * ch.gamma[lx][(i, j)]
                        - ch.gamma[k][(j, lx)] * ch.gamma[lx][(i, k)];
                }
            }
            ric[(i, j)] = acc;
        }
    }
    ric
}

/// Evaluates the Bakry-Emery quadratic form `BE_g(ξ, ξ)` at `x` via
/// Christoffel symbols, the Ricci tensor and the Hessian of `½ log det g`.
pub fn bakry_emery(
    g: &MetricMap,
    x: &DVector<f64>,
    xi: &DVector<f64>,
) -> Result<BakryEmery, CurvatureError> {
    let d = g.dim();
    let gj = g.eval(x)?;
    let ginv = linalg::inverse_spd(&gj.g).ok_or_else(|| {
        CurvatureError::Lagrangian(LagrangianError::MetricNotSpd {
            x: x.iter().cloned().collect(),
        })
    })?;
    let ch = christoffel(g, x)?;
    let ric = ricci(&ch);

    // V = ½ log det g: ∂_i V = ½ tr(g^{-1} ∂_i g),
    // ∂_i∂_j V = ½ [tr(g^{-1} ∂_i∂_j g) - tr(g^{-1} ∂_i g g^{-1} ∂_j g)]
    let dgm = |m: usize| -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d, d);
        for a in 0..d {
            for bq in 0..d {
                out[(a, bq)] = gj.dg.get(m, a, bq);
            }
        }
        out
    };
    let mut grad_v = DVector::zeros(d);
    for i in 0..d {
        grad_v[i] = 0.5 * (&ginv * dgm(i)).trace();
    }
    let mut hess_euclid = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut ddg = DMatrix::zeros(d, d);
            for a in 0..d {
                for bq in 0..d {
                    ddg[(a, bq)] = gj.ddg(i, j, a, bq);
                }
            }
            hess_euclid[(i, j)] =
                0.5 * ((&ginv * ddg).trace() - (&ginv * dgm(i) * &ginv * dgm(j)).trace());
        }
    }
    let mut hess_cov = hess_euclid.clone();
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                hess_cov[(i, j)] -= ch.gamma[k][(i, j)] * grad_v[k];
            }
        }
    }

    let quad = |m: &DMatrix<f64>| xi.dot(&(m * xi));
    Ok(BakryEmery {
        be_cov: quad(&(&ric + &hess_cov)),
        be_euclid: quad(&(&ric + &hess_euclid)),
        ricci: ric,
        hess_cov,
        hess_euclid,
    })
}

/// Residual report for the Riemannian decomposition
/// `K_x(ξ) = ||∇ξ||²_HS-type + BE_g(ξ, ξ)` on gradient-type fields.
#[derive(Debug, Clone)]
pub struct RiemannianIdentity {
    /// `|K - tr((∇^cov ξ)²) - BE_cov(ξ,ξ)|` — the calibrated identity.
    pub residual: f64,
    /// `|K - termI(partial derivatives) - BE_euclid(ξ,ξ)|` for comparison.
    pub residual_printed: f64,
    pub k_def: f64,
    pub hs_covariant: f64,
    /// `g^{ik} ξ_{j,k} g_{jl} ξ_{l,i}` with partial derivatives, as printed.
    pub hs_printed: f64,
    pub be_cov: f64,
    pub be_euclid: f64,
}

/// Checks the decomposition of the curvature into a Hilbert-Schmidt square
/// and the Bakry-Emery form for `L = ½<v, g(x) v>` and `ξ = g^{-1}∇u`.
///
/// Calibration result: the identity closes with covariant contractions on
/// both terms (`tr((∇^cov ξ)²)` and the covariant Hessian in `BE`); the
/// partial-derivative reading of the printed HS weighting is reported
/// alongside rather than silently chosen.
pub fn riemannian_identity(
    g: &MetricMap,
    u: &Potential,
    x: &DVector<f64>,
) -> Result<RiemannianIdentity, CurvatureError> {
    let d = g.dim();
    let l = LagrangianModel::riemannian(g.clone());
    let (jet, b) = gradient_field_eval(&l, u, x)?;
    let xi = &jet.value;
    let jac = &jet.jac;

    let k_def = {
        let accel = b.el_acceleration()?;
        let (a, bb) = ab_from_bundle(&b, &accel)?;
        (jac * jac + a * jac + bb).trace()
    };

    let gj = g.eval(x)?;
    let ginv = linalg::inverse_spd(&gj.g).ok_or_else(|| {
        CurvatureError::Lagrangian(LagrangianError::MetricNotSpd {
            x: x.iter().cloned().collect(),
        })
    })?;
    let ch = christoffel(g, x)?;

    // covariant derivative (∇ξ)^i_j = ∂_j ξ^i + Γ^i_{jm} ξ^m
    let mut ncov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = jac[(i, j)];
            for m in 0..d {
                acc += ch.gamma[i][(j, m)] * xi[m];
            }
            ncov[(i, j)] = acc;
        }
    }
    let hs_covariant = (&ncov * &ncov).trace();
    let hs_printed = (&ginv * (jac.transpose() * &gj.g * jac)).trace();

    let be = bakry_emery(g, x, xi)?;
    Ok(RiemannianIdentity {
        residual: (k_def - hs_covariant - be.be_cov).abs(),
        residual_printed: (k_def - hs_printed - be.be_euclid).abs(),
        k_def,
        hs_covariant,
        hs_printed,
        be_cov: be.be_cov,
        be_euclid: be.be_euclid,
    })
}
