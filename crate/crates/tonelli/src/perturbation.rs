//! Velocity-perturbation workbench for Riemannian kinetic Lagrangians.
//!
//! For `L = ½<v, g(x)v>` with a curvature lower bound
//! `K_x(ξ) ≥ c_g ||∇ξ||² + k_g ||ξ||²` on a compact box, a small velocity
//! perturbation `L~ = L + φ(v)` keeps the generalized curvature
//! non-negative provided `ε ≤ min{c_g/10, k_g/12}` and the second and
//! third derivatives of `φ` are small enough that the eight-group term
//! ledger stays within `5ε||∇ξ||² + 6ε||ξ||²`.
//!
//! `estimate_bounds` certifies `(c_g, k_g)` on sampled points: `c_g` is
//! the minimum eigenvalue of the quadratic form `N ↦ tr(g^{-1}N^T g N)`,
//! and `k_g` the largest constant such that the full curvature quadratic
//! form dominates `c_g||∇ξ||²_F + k_g||ξ||²` on the gradient-type
//! constraint manifold (a Schur complement per sample — the raw
//! Bakry-Emery eigenvalue ignores the `ξ ⊗ ∇ξ` cross terms and is
//! reported alongside for both Hessian conventions).

use crate::curvature::{bakry_emery, curvature_def_from_parts, CurvatureError};
use crate::expr::Expr;
use crate::field::gradient_field_eval;
use crate::lagrangian::{LagrangianError, LagrangianModel, MetricMap, Potential};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerturbationError {
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Curvature(#[from] Box<CurvatureError>),
    #[error("scenario rejected: no positive curvature bound on the box (k_g = {k_g:.3e})")]
    ScenarioRejected { c_g: f64, k_g: f64 },
    #[error("perturbation budget needs positive bounds, got c_g = {0}, k_g = {1}")]
    NonPositiveBounds(f64, f64),
}

impl From<CurvatureError> for PerturbationError {
    fn from(e: CurvatureError) -> Self {
        PerturbationError::Curvature(Box::new(e))
    }
}

// ============================================================================
// Scenario
// ============================================================================

/// Gaussian-type velocity perturbation `φ(v) = α exp(-|v|²/β)`.
#[derive(Debug, Clone, Copy)]
pub struct PhiSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl PhiSpec {
    pub fn as_potential(&self, dim: usize) -> Potential {
        let e = Expr::norm_sq(&(0..dim).collect::<Vec<_>>())
            .cmul(-1.0 / self.beta)
            .exp()
            .cmul(self.alpha);
        Potential::new(dim, e)
    }

    /// `(max ||∇²φ||_op, max |∂³φ|)` over the velocity box `|v|_∞ ≤ vmax`.
    pub fn derivative_bounds(&self, dim: usize, vmax: f64, per_axis: usize) -> (f64, f64) {
        let phi = self.as_potential(dim);
        let mut worst_hess: f64 = 0.0;
        let mut worst_third: f64 = 0.0;
        let mut idx = vec![0usize; dim];
        loop {
            let v = DVector::from_fn(dim, |i, _| {
                -vmax + 2.0 * vmax * (idx[i] as f64) / (per_axis.max(2) - 1) as f64
            });
            let jet = phi.jet(&v).expect("phi is entire");
            worst_hess = worst_hess.max(linalg::operator_norm(&jet.hess().clone_owned()));
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        worst_third = worst_third.max(jet.third(i, j, k).abs());
                    }
                }
            }
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
                if axis == dim {
                    return (worst_hess, worst_third);
                }
            }
        }
    }
}

/// The perturbation scenario: metric, box, perturbation, field bank and the
/// certified constants.
#[derive(Debug, Clone)]
pub struct PerturbationScenario {
    pub dim: usize,
    pub g: MetricMap,
    pub phi: PhiSpec,
    pub box_lo: DVector<f64>,
    pub box_hi: DVector<f64>,
    /// Velocity box half-width for φ-derivative sampling.
    pub velocity_box: f64,
    /// Gradient-type field bank potentials.
    pub field_bank: Vec<Potential>,
    pub c_g: f64,
    pub k_g: f64,
    pub eps: f64,
}

/// Deterministic field bank: one quadratic, ten random degree-3
/// polynomials, one bump-modulated potential.
pub fn default_field_bank(dim: usize, seed: u64) -> Vec<Potential> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = vec![Potential::quadratic(dim, 1.0)];
    for _ in 0..10 {
        let mut e = Expr::c(0.0);
        for i in 0..dim {
            let lin = 0.4 * (rng.random::<f64>() - 0.5);
            let quad = 0.25 * (rng.random::<f64>() - 0.5);
            let cub = 0.15 * (rng.random::<f64>() - 0.5);
            e = e
                .add(Expr::var(i).cmul(lin))
                .add(Expr::var(i).powi(2).cmul(quad))
                .add(Expr::var(i).powi(3).cmul(cub));
            for j in (i + 1)..dim {
                let cross = 0.2 * (rng.random::<f64>() - 0.5);
                e = e.add(Expr::var(i).mul(Expr::var(j)).cmul(cross));
            }
        }
        bank.push(Potential::new(dim, e));
    }
    let bump = Expr::norm_sq(&(0..dim).collect::<Vec<_>>())
        .cmul(-1.0)
        .exp()
        .cmul(0.3);
    bank.push(Potential::new(dim, bump));
    bank
}

impl PerturbationScenario {
    /// The shipped working example: diagonal metric
    /// `g = diag(exp(2a x_i²))`, `a = 0.05`, on `[-1, 1]^d`.
    ///
    /// (A conformal factor cannot work here in d = 2: the Bakry-Emery
    /// tensor of `e^{2λ}I` is trace-free, so its smallest eigenvalue is
    /// never positive; per-axis weights avoid the cancellation.)
    pub fn product_metric_example(dim: usize, alpha: f64) -> PerturbationScenario {
        PerturbationScenario {
            dim,
            g: MetricMap::product_exp(dim, 0.05),
            phi: PhiSpec { alpha, beta: 1.0 },
            box_lo: DVector::from_element(dim, -1.0),
            box_hi: DVector::from_element(dim, 1.0),
            velocity_box: 2.0,
            field_bank: default_field_bank(dim, 0x6a6),
            c_g: 0.0,
            k_g: 0.0,
            eps: 0.0,
        }
    }

    pub fn lagrangian_unperturbed(&self) -> LagrangianModel {
        LagrangianModel::riemannian(self.g.clone())
    }

    pub fn lagrangian_perturbed(&self) -> LagrangianModel {
        LagrangianModel::perturbed_riemannian(self.g.clone(), self.phi.as_potential(self.dim))
    }

    pub fn sample_points(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let d = self.dim;
        let mut out = Vec::new();
        let mut idx = vec![0usize; d];
        loop {
            let x = DVector::from_fn(d, |i, _| {
                self.box_lo[i]
                    + (self.box_hi[i] - self.box_lo[i]) * (idx[i] as f64 + 0.5)
                        / per_axis as f64
            });
            out.push(x);
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
                if axis == d {
                    return out;
                }
            }
        }
    }
}

// ============================================================================
// Bound estimation
// ============================================================================

/// Certified and raw curvature lower-bound constants.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    /// Min eigenvalue of the `tr(g^{-1}N^T g N)` form over samples.
    pub c_raw: f64,
    /// Chain constant `0.9 c_raw`: backing off the gradient-term share
    /// leaves slack to absorb the `ξ ⊗ ∇ξ` cross terms in the Schur
    /// complement (at `c_raw` itself the complement degenerates).
    pub c_g: f64,
    /// Largest `k` with `K ≥ c_g||∇ξ||² + k||ξ||²` on the gradient-type
    /// constraint manifold, over samples.
    pub k_g: f64,
    /// Raw `min λ(BE)` with the covariant Hessian convention.
    pub k_raw_covariant: f64,
    /// Raw `min λ(BE)` with the Euclidean Hessian convention.
    pub k_raw_euclidean: f64,
    pub samples: usize,
}

/// Symmetric-matrix basis of dimension d(d+1)/2 (unit entries).
fn sym_basis(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut m = DMatrix::zeros(d, d);
            m[(i, j)] = 1.0;
            m[(j, i)] = 1.0;
            out.push(m);
        }
    }
    out
}

/// Estimates `(c_g, k_g)` over a tensor sample grid on the scenario box.
pub fn estimate_bounds(
    scenario: &PerturbationScenario,
    per_axis: usize,
) -> Result<BoundsReport, PerturbationError> {
    let d = scenario.dim;
    let l = scenario.lagrangian_unperturbed();
    let samples = scenario.sample_points(per_axis);
    let sym = sym_basis(d);
    let n_s = sym.len();
    let n_tot = n_s + d;

    let mut c_raw = f64::INFINITY;
    let mut k_raw_cov = f64::INFINITY;
    let mut k_raw_euc = f64::INFINITY;

    // pass 1: c_raw = min eigenvalue of N ↦ tr(g^{-1} N^T g N), plus the
    // raw Bakry-Emery eigenvalue minima for the report
    for x in &samples {
        let gj = scenario.g.eval(x)?;
        let ginv = linalg::inverse_spd(&gj.g).ok_or_else(|| {
            PerturbationError::Lagrangian(LagrangianError::MetricNotSpd {
                x: x.iter().cloned().collect(),
            })
        })?;
        let term1 = |n: &DMatrix<f64>| (&ginv * (n.transpose() * &gj.g * n)).trace();
        let mut form = DMatrix::zeros(d * d, d * d);
        let basis_n: Vec<DMatrix<f64>> = (0..d * d)
            .map(|k| {
                let mut m = DMatrix::zeros(d, d);
                m[(k / d, k % d)] = 1.0;
                m
            })
            .collect();
        for a in 0..d * d {
            for b in a..d * d {
                let fab = 0.5
                    * (term1(&(&basis_n[a] + &basis_n[b]))
                        - term1(&basis_n[a])
                        - term1(&basis_n[b]));
                form[(a, b)] = fab;
                form[(b, a)] = fab;
            }
        }
        c_raw = c_raw.min(linalg::min_eigenvalue_sym(&form));

        let be = bakry_emery(&scenario.g, x, &DVector::zeros(d))?;
        k_raw_cov = k_raw_cov.min(linalg::min_eigenvalue_sym(&(&be.ricci + &be.hess_cov)));
        k_raw_euc = k_raw_euc.min(linalg::min_eigenvalue_sym(&(&be.ricci + &be.hess_euclid)));
    }

    // pass 2: the largest k with K ≥ c_chain ||∇ξ||² + k ||ξ||² on the
    // gradient-type constraint manifold, per sample.
    let c_chain = 0.9 * c_raw;
    let mut k_g = f64::INFINITY;
    for x in &samples {
        let gj = scenario.g.eval(x)?;
        let ginv = linalg::inverse_spd(&gj.g).ok_or_else(|| {
            PerturbationError::Lagrangian(LagrangianError::MetricNotSpd {
                x: x.iter().cloned().collect(),
            })
        })?;
        // Parameters (S, ξ): ∇ξ = g^{-1}(S - W(ξ)), W(ξ)_{ij} = Σ_m ∂_j g_{im} ξ_m
        let jac_of = |s: &DMatrix<f64>, xi: &DVector<f64>| -> DMatrix<f64> {
            let mut w = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    for m in 0..d {
                        w[(i, j)] += gj.dg.get(j, i, m) * xi[m];
                    }
                }
            }
            &ginv * (s - w)
        };
        let eval_n = |s: &DMatrix<f64>, xi: &DVector<f64>| -> Result<f64, PerturbationError> {
            let jac = jac_of(s, xi);
            let k = curvature_def_from_parts(&l, x, xi, &jac)?;
            Ok(k - c_chain * linalg::frobenius(&jac).powi(2))
        };
        let param = |k: usize| -> (DMatrix<f64>, DVector<f64>) {
            if k < n_s {
                (sym[k].clone(), DVector::zeros(d))
            } else {
                let mut xi = DVector::zeros(d);
                xi[k - n_s] = 1.0;
                (DMatrix::zeros(d, d), xi)
            }
        };
        // polarize N(S, ξ) = K - c_chain P into a symmetric matrix
        let mut n_form = DMatrix::zeros(n_tot, n_tot);
        let mut singles = Vec::with_capacity(n_tot);
        for a in 0..n_tot {
            let (s, xi) = param(a);
            singles.push(eval_n(&s, &xi)?);
        }
        for a in 0..n_tot {
            for b in a..n_tot {
                let (sa, xa) = param(a);
                let (sb, xb) = param(b);
                let pair = eval_n(&(&sa + &sb), &(&xa + &xb))?;
                let fab = 0.5 * (pair - singles[a] - singles[b]);
                n_form[(a, b)] = fab;
                n_form[(b, a)] = fab;
            }
        }
        // Schur complement of the S-block (pseudo-inverse on its range)
        let nss = n_form.view((0, 0), (n_s, n_s)).clone_owned();
        let nsx = n_form.view((0, n_s), (n_s, d)).clone_owned();
        let nxx = n_form.view((n_s, n_s), (d, d)).clone_owned();
        let eig = ((&nss + nss.transpose()) * 0.5).symmetric_eigen();
        // absolute floor: a numerically zero block (flat space) must read
        // as null directions, not indefiniteness
        let scale = n_form.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        let clip = 1e-9 * scale;
        let mut pinv = DMatrix::zeros(n_s, n_s);
        let mut defective = false;
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < -clip {
                defective = true; // indefinite in pure gradient directions
                break;
            }
            let v = eig.eigenvectors.column(i);
            if lam > clip {
                pinv += v * v.transpose() / lam;
            } else if (v.transpose() * &nsx).norm() > 1e-7 * (1.0 + scale) {
                // null direction coupled to ξ: k unbounded below
                defective = true;
                break;
            }
        }
        let k_here = if defective {
            f64::NEG_INFINITY
        } else {
            let schur = &nxx - nsx.transpose() * pinv * &nsx;
            linalg::min_eigenvalue_sym(&schur)
        };
        k_g = k_g.min(k_here);
    }

    Ok(BoundsReport {
        c_raw,
        c_g: c_chain,
        k_g,
        k_raw_covariant: k_raw_cov,
        k_raw_euclidean: k_raw_euc,
        samples: samples.len(),
    })
}

/// `ε = min{c_g/10, k_g/12}`, computed as `min(6 c_g, 5 k_g)/60` so that
/// decimal inputs hitting the tie (`c_g = 1.0, k_g = 1.2`) round to the
/// decimal answer rather than one ulp below it.
pub fn perturbation_budget(c_g: f64, k_g: f64) -> Result<f64, PerturbationError> {
    if c_g <= 0.0 || k_g <= 0.0 {
        return Err(PerturbationError::NonPositiveBounds(c_g, k_g));
    }
    Ok((6.0 * c_g).min(5.0 * k_g) / 60.0)
}

// ============================================================================
// Printed term ledger
// ============================================================================

pub const LEDGER_NAMES: [&str; 8] = [
    "I~-I", "V~-V", "VI~-VI", "VII~-VII", "VIII~-VIII", "II~", "III~", "IV~",
];

/// The eight §-display group values for one `(x, ξ)` pair, as printed.
#[derive(Debug, Clone, Copy, Default)]
pub struct DisplayGroups {
    pub i: f64,
    pub v: f64,
    pub vi: f64,
    pub vii: f64,
    pub viii: f64,
    /// Only nonzero for the perturbed Lagrangian.
    pub ii: f64,
    pub iii: f64,
    pub iv: f64,
}

/// Evaluates the printed display groups for either the unperturbed
/// (`phi = None`) or perturbed Lagrangian.
fn display_groups(
    g: &MetricMap,
    phi: Option<&Potential>,
    x: &DVector<f64>,
    xi: &DVector<f64>,
    jac: &DMatrix<f64>,
) -> Result<DisplayGroups, PerturbationError> {
    let d = g.dim();
    let gj = g.eval(x)?;
    let mut hvv = gj.g.clone();
    let mut phi3 = None;
    if let Some(p) = phi {
        let jet = p.jet(xi)?;
        hvv += jet.hess();
        let mut t = vec![0.0; d * d * d];
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t[(i * d + j) * d + k] = jet.third(i, j, k);
                }
            }
        }
        phi3 = Some(t);
    }
    let q = linalg::inverse_spd(&hvv).ok_or_else(|| {
        PerturbationError::Lagrangian(LagrangianError::TonelliViolation {
            x: x.iter().cloned().collect(),
            v: xi.iter().cloned().collect(),
        })
    })?;

    let mut out = DisplayGroups::default();
    // I: L^{ik} ξ_{j,k} (∂²L/∂v_j∂v_l) ξ_{l,i}
    out.i = (&q * (jac.transpose() * &hvv * jac)).trace();
    // V: L^{kl} ∂g_{jl}/∂x_k (∇ξ ξ)_j
    let conv = jac * xi; // (∇ξ ξ)_j
    for k in 0..d {
        for lv in 0..d {
            for j in 0..d {
                out.v += q[(k, lv)] * gj.dg.get(k, j, lv) * conv[j];
            }
        }
    }
    // VI / VII: L^{ij} ∂g_{jk}/∂x_i L^{kl} ∂g_{mn}/∂x_l ξ_m ξ_n  (index-twin)
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for lv in 0..d {
                    let lead = q[(i, j)] * gj.dg.get(i, j, k) * q[(k, lv)];
                    for m in 0..d {
                        for n in 0..d {
                            out.vi += lead * gj.dg.get(lv, m, n) * xi[m] * xi[n];
                            out.vii += lead * gj.dg.get(lv, n, m) * xi[n] * xi[m];
                        }
                    }
                }
            }
        }
    }
    // VIII: L^{ij} ∂²g_{kl}/∂x_j∂x_i ξ_k ξ_l
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                for lv in 0..d {
                    out.viii += q[(i, j)] * gj.ddg(j, i, k, lv) * xi[k] * xi[lv];
                }
            }
        }
    }
    if let Some(t3) = &phi3 {
        let t = |a: usize, b: usize, c: usize| t3[(a * d + b) * d + c];
        // II~: L~^{im} ∂³φ_{mjk} ξ_l ξ_{j,i} ξ_{k,l}
        for i in 0..d {
            for m in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let lead = q[(i, m)] * t(m, j, k) * jac[(j, i)];
                        for lv in 0..d {
                            out.ii += lead * xi[lv] * jac[(k, lv)];
                        }
                    }
                }
            }
        }
        // III~: L~^{im} ∂³φ_{mjk} L~^{kl} ∂g_{nr}/∂x_l ξ_n ξ_r ξ_{j,i}
        // IV~:  L~^{ir} ∂³φ_{rjk} L~^{kl} ∂g_{mn}/∂x_l ξ_n ξ_{j,i} ξ_m
        for i in 0..d {
            for m in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let lead = q[(i, m)] * t(m, j, k) * jac[(j, i)];
                        for lv in 0..d {
                            let lead2 = lead * q[(k, lv)];
                            for n in 0..d {
                                for r in 0..d {
                                    out.iii += lead2 * gj.dg.get(lv, n, r) * xi[n] * xi[r];
                                    out.iv += lead2 * gj.dg.get(lv, r, n) * xi[n] * xi[r];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Margins of the eight ledger bounds at one sample; positive = satisfied.
#[derive(Debug, Clone)]
pub struct LedgerMargins {
    pub margins: [f64; 8],
    pub grad_norm: f64,
    pub xi_norm: f64,
    /// `5ε||∇ξ||² + 6ε||ξ||² - Σ |differences|`
    pub summed_margin: f64,
}

fn ledger_margins(
    un: &DisplayGroups,
    pe: &DisplayGroups,
    eps: f64,
    grad_norm: f64,
    xi_norm: f64,
) -> LedgerMargins {
    let gn2 = grad_norm * grad_norm;
    let xn2 = xi_norm * xi_norm;
    let cross = grad_norm * xi_norm;
    let diffs = [
        (pe.i - un.i).abs(),
        (pe.v - un.v).abs(),
        (pe.vi - un.vi).abs(),
        (pe.vii - un.vii).abs(),
        (pe.viii - un.viii).abs(),
        pe.ii.abs(),
        pe.iii.abs(),
        pe.iv.abs(),
    ];
    let bounds = [
        eps * gn2,
        2.0 * eps * cross,
        eps * xn2,
        eps * xn2,
        eps * xn2,
        eps * gn2,
        2.0 * eps * cross,
        2.0 * eps * cross,
    ];
    let mut margins = [0.0; 8];
    for k in 0..8 {
        margins[k] = bounds[k] - diffs[k];
    }
    let total: f64 = diffs.iter().sum();
    LedgerMargins {
        margins,
        grad_norm,
        xi_norm,
        summed_margin: 5.0 * eps * gn2 + 6.0 * eps * xn2 - total,
    }
}

/// Result of sampling the φ-budget term ledger over box × field bank.
#[derive(Debug, Clone)]
pub struct PhiBudgetReport {
    pub hess_norm: f64,
    pub third_norm: f64,
    /// Worst margin per ledger group over all samples.
    pub worst_margins: [f64; 8],
    pub worst_summed_margin: f64,
    /// First violated group name, if any margin is negative.
    pub violated: Option<&'static str>,
    /// `|VI - VII|` must vanish (the printed groups are index twins).
    pub vi_vii_gap: f64,
}

/// Samples the §-display difference ledger for the scenario's φ and ε.
pub fn phi_budget_check(
    scenario: &PerturbationScenario,
    eps: f64,
    per_axis: usize,
) -> Result<PhiBudgetReport, PerturbationError> {
    let d = scenario.dim;
    let phi = scenario.phi.as_potential(d);
    let (hess_norm, third_norm) =
        scenario
            .phi
            .derivative_bounds(d, scenario.velocity_box, 17);
    let l_un = scenario.lagrangian_unperturbed();

    let mut worst = [f64::INFINITY; 8];
    let mut worst_sum = f64::INFINITY;
    let mut violated = None;
    let mut vi_vii_gap: f64 = 0.0;
    for x in scenario.sample_points(per_axis) {
        for u in &scenario.field_bank {
            let (jet, _) = gradient_field_eval(&l_un, u, &x)?;
            let un = display_groups(&scenario.g, None, &x, &jet.value, &jet.jac)?;
            let pe = display_groups(&scenario.g, Some(&phi), &x, &jet.value, &jet.jac)?;
            vi_vii_gap = vi_vii_gap.max((un.vi - un.vii).abs()).max((pe.vi - pe.vii).abs());
            let m = ledger_margins(
                &un,
                &pe,
                eps,
                linalg::frobenius(&jet.jac),
                jet.value.norm(),
            );
            for k in 0..8 {
                if m.margins[k] < worst[k] {
                    worst[k] = m.margins[k];
                }
                if m.margins[k] < 0.0 && violated.is_none() {
                    violated = Some(LEDGER_NAMES[k]);
                }
            }
            worst_sum = worst_sum.min(m.summed_margin);
        }
    }
    Ok(PhiBudgetReport {
        hess_norm,
        third_norm,
        worst_margins: worst,
        worst_summed_margin: worst_sum,
        violated,
        vi_vii_gap,
    })
}

/// Halves α until the ledger margins pass; returns the passing α.
pub fn tune_alpha(
    scenario: &PerturbationScenario,
    eps: f64,
    per_axis: usize,
) -> Result<(f64, PhiBudgetReport), PerturbationError> {
    let mut s = scenario.clone();
    for _ in 0..60 {
        let rep = phi_budget_check(&s, eps, per_axis)?;
        if rep.violated.is_none() {
            return Ok((s.phi.alpha, rep));
        }
        s.phi.alpha *= 0.5;
    }
    let rep = phi_budget_check(&s, eps, per_axis)?;
    Ok((s.phi.alpha, rep))
}

// ============================================================================
// Non-negativity certification
// ============================================================================

/// Pointwise certification chain over box × field bank.
#[derive(Debug, Clone)]
pub struct NonnegReport {
    pub min_curvature_perturbed: f64,
    pub min_curvature_unperturbed: f64,
    /// Worst margin of `(c/2)||∇ξ||² + (k/2)||ξ||² - |K~ - K|`.
    pub worst_perturbation_margin: f64,
    /// Worst margin of `K - c||∇ξ||² - k||ξ||²`.
    pub worst_lower_bound_margin: f64,
    /// First violated chain link, if any.
    pub chain_violation: Option<&'static str>,
    pub pairs: usize,
}

/// Evaluates `K~` over samples × bank and checks the §-chain
/// `K~ ≥ K - (c/2)||∇ξ||² - (k/2)||ξ||² ≥ (c/2)||∇ξ||² + (k/2)||ξ||² ≥ 0`.
pub fn perturbed_nonneg_check(
    scenario: &PerturbationScenario,
    per_axis: usize,
) -> Result<NonnegReport, PerturbationError> {
    let l_un = scenario.lagrangian_unperturbed();
    let l_pe = scenario.lagrangian_perturbed();
    let (c, k) = (scenario.c_g, scenario.k_g);

    let mut min_pe = f64::INFINITY;
    let mut min_un = f64::INFINITY;
    let mut worst_pm = f64::INFINITY;
    let mut worst_lb = f64::INFINITY;
    let mut violation: Option<&'static str> = None;
    let mut pairs = 0usize;

    for x in scenario.sample_points(per_axis) {
        for u in &scenario.field_bank {
            let (jet, _) = gradient_field_eval(&l_un, u, &x)?;
            let k_un = curvature_def_from_parts(&l_un, &x, &jet.value, &jet.jac)?;
            let k_pe = curvature_def_from_parts(&l_pe, &x, &jet.value, &jet.jac)?;
            let gn2 = linalg::frobenius(&jet.jac).powi(2);
            let xn2 = jet.value.norm_squared();

            min_pe = min_pe.min(k_pe);
            min_un = min_un.min(k_un);
            let pm = 0.5 * (c * gn2 + k * xn2) - (k_pe - k_un).abs();
            let lb = k_un - c * gn2 - k * xn2;
            worst_pm = worst_pm.min(pm);
            worst_lb = worst_lb.min(lb);
            if violation.is_none() {
                if pm < 0.0 {
                    violation = Some("perturbation exceeds (c/2)||∇ξ||² + (k/2)||ξ||²");
                } else if lb < -1e-9 {
                    violation = Some("curvature lower bound c||∇ξ||² + k||ξ||² fails");
                } else if k_pe < -1e-8 {
                    violation = Some("perturbed curvature negative");
                }
            }
            pairs += 1;
        }
    }
    Ok(NonnegReport {
        min_curvature_perturbed: min_pe,
        min_curvature_unperturbed: min_un,
        worst_perturbation_margin: worst_pm,
        worst_lower_bound_margin: worst_lb,
        chain_violation: violation,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_arithmetic() {
        assert_eq!(perturbation_budget(1.0, 1.2).unwrap(), 0.1);
        assert_eq!(perturbation_budget(0.5, 12.0).unwrap(), 0.05);
        assert_eq!(perturbation_budget(10.0, 0.12).unwrap(), 0.01);
        assert!(matches!(
            perturbation_budget(0.0, 1.0),
            Err(PerturbationError::NonPositiveBounds(..))
        ));
    }

    #[test]
    fn flat_space_rejected() {
        let mut s = PerturbationScenario::product_metric_example(2, 0.0);
        s.g = MetricMap::identity(2);
        let b = estimate_bounds(&s, 7).unwrap();
        assert!(
            (b.c_raw - 1.0).abs() < 1e-10,
            "c_raw = {} for identity",
            b.c_raw
        );
        assert!(b.k_g.abs() < 1e-8, "k_g = {} for identity", b.k_g);
        assert!(perturbation_budget(b.c_g, b.k_g).is_err());
    }

    #[test]
    fn constant_metric_rejected() {
        let mut s = PerturbationScenario::product_metric_example(2, 0.0);
        s.g = MetricMap::const_diag(&[2.0, 1.0]);
        let b = estimate_bounds(&s, 7).unwrap();
        assert!(b.c_raw > 0.0 && b.c_raw <= 0.5 + 1e-10);
        assert!(b.k_g.abs() < 1e-8);
    }

    #[test]
    fn conformal_metric_has_no_positive_bound() {
        // BE of e^{2λ}I is trace-free in d=2: k_g ≤ 0 whatever the sign of λ
        let mut s = PerturbationScenario::product_metric_example(2, 0.0);
        s.g = MetricMap::conformal(2, Expr::norm_sq(&[0, 1]).cmul(0.05));
        let b = estimate_bounds(&s, 9).unwrap();
        assert!(
            b.k_g <= 1e-9,
            "conformal d=2 cannot certify k_g > 0, got {}",
            b.k_g
        );
        assert!(b.k_raw_covariant <= 1e-9);
        assert!(b.k_raw_euclidean <= 1e-9);
    }

    #[test]
    fn product_metric_certifies_positive_bound() {
        let s = PerturbationScenario::product_metric_example(2, 0.0);
        let b = estimate_bounds(&s, 9).unwrap();
        assert!(b.c_raw > 0.5, "c_raw = {}", b.c_raw);
        assert!(
            b.k_g > 0.05,
            "product metric should certify k_g > 0; got {}",
            b.k_g
        );
        let eps = perturbation_budget(b.c_g, b.k_g).unwrap();
        assert!(eps > 0.0);
    }

    #[test]
    fn phi_zero_margins_trivially_pass_and_curvatures_agree() {
        let mut s = PerturbationScenario::product_metric_example(2, 0.0);
        let b = estimate_bounds(&s, 7).unwrap();
        s.c_g = b.c_g;
        s.k_g = b.k_g;
        s.eps = perturbation_budget(b.c_g, b.k_g).unwrap();
        let rep = phi_budget_check(&s, s.eps, 5).unwrap();
        assert!(rep.violated.is_none());
        for m in rep.worst_margins {
            assert!(m >= 0.0);
        }
        // with φ ≡ 0 the two Lagrangians give identical curvature
        let nn = perturbed_nonneg_check(&s, 5).unwrap();
        assert!(
            (nn.min_curvature_perturbed - nn.min_curvature_unperturbed).abs() < 1e-9
        );
        assert!(nn.chain_violation.is_none(), "{:?}", nn.chain_violation);
    }

    #[test]
    fn tuned_alpha_passes_and_certifies() {
        let mut s = PerturbationScenario::product_metric_example(2, 1e-3);
        let b = estimate_bounds(&s, 9).unwrap();
        s.c_g = b.c_g;
        s.k_g = b.k_g;
        s.eps = perturbation_budget(b.c_g, b.k_g).unwrap();
        let (alpha, rep) = tune_alpha(&s, s.eps, 5).unwrap();
        assert!(rep.violated.is_none(), "tuned alpha {alpha} still violates");
        assert!(alpha > 0.0);
        s.phi.alpha = alpha;
        let nn = perturbed_nonneg_check(&s, 7).unwrap();
        assert!(nn.chain_violation.is_none(), "{:?}", nn.chain_violation);
        assert!(
            nn.min_curvature_perturbed >= -1e-8,
            "min perturbed curvature {}",
            nn.min_curvature_perturbed
        );
        assert!(rep.vi_vii_gap < 1e-12, "printed twins must agree");
    }

    #[test]
    fn adversarial_alpha_triggers_violation() {
        let mut s = PerturbationScenario::product_metric_example(2, 1e-3);
        let b = estimate_bounds(&s, 7).unwrap();
        s.c_g = b.c_g;
        s.k_g = b.k_g;
        s.eps = perturbation_budget(b.c_g, b.k_g).unwrap();
        let (alpha, _) = tune_alpha(&s, s.eps, 5).unwrap();
        s.phi.alpha = alpha * 10.0;
        let rep = phi_budget_check(&s, s.eps, 5).unwrap();
        let nn = perturbed_nonneg_check(&s, 5).unwrap();
        assert!(
            rep.violated.is_some() || nn.chain_violation.is_some(),
            "10x budget must trip a flag"
        );
    }

    #[test]
    fn budget_monotonicity_in_alpha() {
        let mut s = PerturbationScenario::product_metric_example(2, 2e-3);
        let b = estimate_bounds(&s, 7).unwrap();
        s.c_g = b.c_g;
        s.k_g = b.k_g;
        s.eps = perturbation_budget(b.c_g, b.k_g).unwrap();
        let big = phi_budget_check(&s, s.eps, 5).unwrap();
        s.phi.alpha *= 0.5;
        let small = phi_budget_check(&s, s.eps, 5).unwrap();
        for k in 0..8 {
            assert!(
                small.worst_margins[k] >= big.worst_margins[k] - 1e-12,
                "margin {k} not monotone"
            );
        }
    }
}
