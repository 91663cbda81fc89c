//! Tonelli Lagrangians on `R^d` and their derivative bundles.
//!
//! A [`LagrangianModel`] evaluates `L(x, v)` together with every partial
//! derivative the rest of the crate needs: gradients, the three second-order
//! blocks and the third-order slices in `v∂v∂v`, `x∂v∂v` and `x∂x∂v`. The
//! built-in families are
//!
//! * `euclidean`:             `L = |v|^2 / 2`
//! * `riemannian(g)`:         `L = <v, g(x) v> / 2`
//! * `mechanical(g, U)`:      `L = <v, g(x) v> / 2 + U(x)`
//! * `perturbed_riemannian`:  `L = <v, g(x) v> / 2 + phi(v)`
//! * `custom(expr)`:          any expression in `x1..xd, v1..vd`
//!
//! plus a linear change-of-coordinates wrapper used by the coordinate
//! invariance checks. Positive-definiteness of `∂²L/∂v∂v` is enforced at
//! every evaluation (Cholesky).

use crate::expr::Expr;
use crate::jets::{jet_lift, Jet3, JetError};
use crate::linalg;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum LagrangianError {
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("velocity Hessian not positive definite at x={x:?}, v={v:?}")]
    TonelliViolation { x: Vec<f64>, v: Vec<f64> },
    #[error("metric not positive definite at x={x:?}")]
    MetricNotSpd { x: Vec<f64> },
    #[error("metric entry ({0},{1}) differs from its transpose")]
    NonSymmetricMetric(usize, usize),
    #[error(
        "Legendre solve did not converge at x={x:?}, p={p:?}: residual {residual:.3e} after {iterations} iterations (last iterate {last:?})"
    )]
    LegendreFailure {
        x: Vec<f64>,
        p: Vec<f64>,
        last: Vec<f64>,
        residual: f64,
        iterations: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

// ============================================================================
// Rank-3 tensor with dense storage
// ============================================================================

/// Dense `d x d x d` tensor of third derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Tensor3 {
        Tensor3 {
            d,
            data: vec![0.0; d * d * d],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.d + j) * self.d + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + k] = v;
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

// ============================================================================
// Metric maps and scalar potentials
// ============================================================================

/// Smooth map `x -> g(x)` into symmetric positive-definite `d x d` matrices,
/// with entries given by closed-form expressions in `x1..xd`.
#[derive(Debug, Clone)]
pub struct MetricMap {
    dim: usize,
    /// Row-major `d*d` entry expressions; kept symmetric.
    entries: Vec<Expr>,
}

/// Metric data at a point: values, first and second entry derivatives.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub g: DMatrix<f64>,
    /// `dg.get(i, j, k) = ∂g_jk / ∂x_i`
    pub dg: Tensor3,
    /// `ddg[i*d+l].get(., j, k)` flattened: see [`MetricJet::ddg`].
    ddg: Vec<f64>,
    dim: usize,
}

impl MetricJet {
    /// `∂² g_jk / ∂x_i ∂x_l`
    #[inline]
    pub fn ddg(&self, i: usize, l: usize, j: usize, k: usize) -> f64 {
        let d = self.dim;
        self.ddg[((i * d + l) * d + j) * d + k]
    }
}

impl MetricMap {
    pub fn identity(dim: usize) -> MetricMap {
        MetricMap::const_diag(&vec![1.0; dim])
    }

    pub fn const_diag(diag: &[f64]) -> MetricMap {
        let d = diag.len();
        let mut entries = Vec::with_capacity(d * d);
        for (i, &di) in diag.iter().enumerate() {
            for j in 0..d {
                entries.push(Expr::c(if i == j { di } else { 0.0 }));
            }
        }
        MetricMap { dim: d, entries }
    }

    /// Conformal metric `exp(2 lambda(x)) * I`.
    pub fn conformal(dim: usize, lambda: Expr) -> MetricMap {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                if i == j {
                    entries.push(lambda.clone().cmul(2.0).exp());
                } else {
                    entries.push(Expr::c(0.0));
                }
            }
        }
        MetricMap { dim, entries }
    }

    /// Diagonal metric `diag(exp(2 a x_1^2), ..., exp(2 a x_d^2))`.
    ///
    /// Unlike a conformal factor, each axis carries its own weight; in d >= 2
    /// this is the built-in family with a strictly positive Bakry-Emery
    /// bound on compact boxes.
    pub fn product_exp(dim: usize, a: f64) -> MetricMap {
        let mut entries = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                if i == j {
                    entries.push(Expr::var(i).powi(2).cmul(2.0 * a).exp());
                } else {
                    entries.push(Expr::c(0.0));
                }
            }
        }
        MetricMap { dim, entries }
    }

    pub fn from_entries(dim: usize, entries: Vec<Expr>) -> MetricMap {
        assert_eq!(entries.len(), dim * dim);
        MetricMap { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<MetricJet, LagrangianError> {
        let d = self.dim;
        let xs: Vec<f64> = x.iter().cloned().collect();
        let mut jets: Vec<Jet3> = Vec::with_capacity(d * d);
        for e in &self.entries {
            jets.push(jet_lift(e, &xs)?);
        }
        let mut g = DMatrix::zeros(d, d);
        let mut dg = Tensor3::zeros(d);
        let mut ddg = vec![0.0; d * d * d * d];
        for j in 0..d {
            for k in 0..d {
                let jet = &jets[j * d + k];
                let jet_t = &jets[k * d + j];
                if (jet.value() - jet_t.value()).abs() > 1e-12 * (1.0 + jet.value().abs()) {
                    return Err(LagrangianError::NonSymmetricMetric(j, k));
                }
                g[(j, k)] = jet.value();
                for i in 0..d {
                    dg.set(i, j, k, jet.grad()[i]);
                    for l in 0..d {
                        ddg[((i * d + l) * d + j) * d + k] = jet.hess()[(i, l)];
                    }
                }
            }
        }
        // symmetrize against entry-level rounding
        let gs = (&g + g.transpose()) * 0.5;
        if gs.clone().cholesky().is_none() {
            return Err(LagrangianError::MetricNotSpd {
                x: xs,
            });
        }
        Ok(MetricJet {
            g: gs,
            dg,
            ddg,
            dim: d,
        })
    }
}

/// Smooth scalar map of `d` variables defined by an expression.
#[derive(Debug, Clone)]
pub struct Potential {
    dim: usize,
    expr: Expr,
}

impl Potential {
    pub fn new(dim: usize, expr: Expr) -> Potential {
        Potential { dim, expr }
    }

    /// `|x|^2 / 2` scaled by `c`.
    pub fn quadratic(dim: usize, c: f64) -> Potential {
        Potential::new(dim, Expr::norm_sq(&(0..dim).collect::<Vec<_>>()).cmul(0.5 * c))
    }

    /// `<a, x>`.
    pub fn linear(a: &[f64]) -> Potential {
        let e = a
            .iter()
            .enumerate()
            .map(|(i, &c)| Expr::var(i).cmul(c))
            .reduce(|p, q| p.add(q))
            .unwrap_or(Expr::c(0.0));
        Potential::new(a.len(), e)
    }

    pub fn zero(dim: usize) -> Potential {
        Potential::new(dim, Expr::c(0.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn jet(&self, x: &DVector<f64>) -> Result<Jet3, LagrangianError> {
        let xs: Vec<f64> = x.iter().cloned().collect();
        Ok(jet_lift(&self.expr, &xs)?)
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64, LagrangianError> {
        let xs: Vec<f64> = x.iter().cloned().collect();
        Ok(self.expr.eval_f64(&xs)?)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, LagrangianError> {
        Ok(self.jet(x)?.grad().clone())
    }
}

// ============================================================================
// Lagrangian model
// ============================================================================

#[derive(Debug, Clone)]
pub enum LagrangianKind {
    Euclidean,
    Riemannian {
        g: MetricMap,
    },
    Mechanical {
        g: MetricMap,
        potential: Potential,
    },
    PerturbedRiemannian {
        g: MetricMap,
        /// Perturbation of the velocity only.
        phi: Potential,
    },
    Custom {
        /// Expression in `x1..xd, v1..vd`.
        expr: Expr,
    },
    /// `L~(y, w) = L(P^-1 y, P^-1 w)` for an invertible linear map `P`.
    Transformed {
        p_inv: DMatrix<f64>,
        inner: Box<LagrangianModel>,
    },
}

#[derive(Debug, Clone)]
pub struct LagrangianModel {
    dim: usize,
    kind: LagrangianKind,
}

/// All partial derivatives of `L` at one phase-space point, through the
/// third-order slices needed by the curvature formulas.
///
/// Index conventions: `hxv[(i,j)] = ∂²L/∂x_i∂v_j` (so `∇²_vx L = hxv^T`),
/// `tvvv(i,j,k) = ∂³L/∂v_i∂v_j∂v_k`, `txvv(i,j,k) = ∂³L/∂x_i∂v_j∂v_k`,
/// `txxv(i,j,k) = ∂³L/∂x_i∂x_j∂v_k`.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub value: f64,
    pub gx: DVector<f64>,
    pub gv: DVector<f64>,
    pub hxx: DMatrix<f64>,
    pub hxv: DMatrix<f64>,
    pub hvv: DMatrix<f64>,
    pub tvvv: Tensor3,
    pub txvv: Tensor3,
    pub txxv: Tensor3,
}

impl DerivativeBundle {
    /// `∇²_vx L = hxv^T` applied to `w`: `(hvx w)_i = Σ_j ∂²L/∂v_i∂x_j w_j`.
    pub fn hvx_mul(&self, w: &DVector<f64>) -> DVector<f64> {
        self.hxv.transpose() * w
    }

    /// Energy `H(x, ∇_v L(x,v)) = <∇_v L, v> - L` at the bundle's point.
    pub fn energy(&self) -> f64 {
        self.gv.dot(&self.v) - self.value
    }

    /// Euler-Lagrange acceleration `hvv^{-1} (∇_x L - ∇²_vx L · v)`.
    pub fn el_acceleration(&self) -> Result<DVector<f64>, LagrangianError> {
        let rhs = &self.gx - self.hvx_mul(&self.v);
        linalg::solve_spd(&self.hvv, &rhs).ok_or_else(|| LagrangianError::TonelliViolation {
            x: self.x.iter().cloned().collect(),
            v: self.v.iter().cloned().collect(),
        })
    }
}

impl LagrangianModel {
    pub fn euclidean(dim: usize) -> Self {
        LagrangianModel {
            dim,
            kind: LagrangianKind::Euclidean,
        }
    }

    pub fn riemannian(g: MetricMap) -> Self {
        LagrangianModel {
            dim: g.dim(),
            kind: LagrangianKind::Riemannian { g },
        }
    }

    pub fn mechanical(g: MetricMap, potential: Potential) -> Self {
        assert_eq!(g.dim(), potential.dim());
        LagrangianModel {
            dim: g.dim(),
            kind: LagrangianKind::Mechanical { g, potential },
        }
    }

    pub fn perturbed_riemannian(g: MetricMap, phi: Potential) -> Self {
        assert_eq!(g.dim(), phi.dim());
        LagrangianModel {
            dim: g.dim(),
            kind: LagrangianKind::PerturbedRiemannian { g, phi },
        }
    }

    pub fn custom(dim: usize, expr: Expr) -> Self {
        LagrangianModel {
            dim,
            kind: LagrangianKind::Custom { expr },
        }
    }

    /// The Lagrangian in coordinates `y = P x` (velocities transform the
    /// same way). `P` must be invertible.
    pub fn linearly_transformed(&self, p: &DMatrix<f64>) -> Option<Self> {
        let p_inv = p.clone().try_inverse()?;
        Some(LagrangianModel {
            dim: self.dim,
            kind: LagrangianKind::Transformed {
                p_inv,
                inner: Box::new(self.clone()),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &LagrangianKind {
        &self.kind
    }

    /// Metric of the Riemannian-type kinds, if any.
    pub fn metric(&self) -> Option<&MetricMap> {
        match &self.kind {
            LagrangianKind::Riemannian { g }
            | LagrangianKind::Mechanical { g, .. }
            | LagrangianKind::PerturbedRiemannian { g, .. } => Some(g),
            _ => None,
        }
    }

    /// Plain value `L(x, v)`.
    pub fn value(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64, LagrangianError> {
        match &self.kind {
            LagrangianKind::Euclidean => Ok(0.5 * v.dot(v)),
            LagrangianKind::Riemannian { g } => {
                let gj = g.eval(x)?;
                Ok(0.5 * v.dot(&(&gj.g * v)))
            }
            LagrangianKind::Mechanical { g, potential } => {
                let gj = g.eval(x)?;
                Ok(0.5 * v.dot(&(&gj.g * v)) + potential.value(x)?)
            }
            LagrangianKind::PerturbedRiemannian { g, phi } => {
                let gj = g.eval(x)?;
                Ok(0.5 * v.dot(&(&gj.g * v)) + phi.value(v)?)
            }
            LagrangianKind::Custom { expr } => {
                let vars: Vec<f64> = x.iter().chain(v.iter()).cloned().collect();
                Ok(expr.eval_f64(&vars)?)
            }
            LagrangianKind::Transformed { p_inv, inner } => {
                inner.value(&(p_inv * x), &(p_inv * v))
            }
        }
    }

    /// Full derivative bundle at `(x, v)`; fails if `∂²L/∂v∂v` is not SPD.
    pub fn derivatives(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<DerivativeBundle, LagrangianError> {
        let d = self.dim;
        if x.len() != d || v.len() != d {
            return Err(LagrangianError::Dimension {
                expected: d,
                got: x.len().max(v.len()),
            });
        }
        let bundle = match &self.kind {
            LagrangianKind::Euclidean => DerivativeBundle {
                x: x.clone(),
                v: v.clone(),
                value: 0.5 * v.dot(v),
                gx: DVector::zeros(d),
                gv: v.clone(),
                hxx: DMatrix::zeros(d, d),
                hxv: DMatrix::zeros(d, d),
                hvv: DMatrix::identity(d, d),
                tvvv: Tensor3::zeros(d),
                txvv: Tensor3::zeros(d),
                txxv: Tensor3::zeros(d),
            },
            LagrangianKind::Riemannian { g } => {
                Self::riemannian_bundle(x, v, &g.eval(x)?, None, None)?
            }
            LagrangianKind::Mechanical { g, potential } => {
                Self::riemannian_bundle(x, v, &g.eval(x)?, Some(potential.jet(x)?), None)?
            }
            LagrangianKind::PerturbedRiemannian { g, phi } => {
                Self::riemannian_bundle(x, v, &g.eval(x)?, None, Some(phi.jet(v)?))?
            }
            LagrangianKind::Custom { expr } => Self::custom_bundle(x, v, expr)?,
            LagrangianKind::Transformed { p_inv, inner } => {
                let base = inner.derivatives(&(p_inv * x), &(p_inv * v))?;
                Self::transform_bundle(x, v, &base, p_inv)
            }
        };
        // Tonelli check: the velocity Hessian must be SPD wherever queried.
        if bundle.hvv.clone().cholesky().is_none() {
            return Err(LagrangianError::TonelliViolation {
                x: x.iter().cloned().collect(),
                v: v.iter().cloned().collect(),
            });
        }
        Ok(bundle)
    }

    fn riemannian_bundle(
        x: &DVector<f64>,
        v: &DVector<f64>,
        gj: &MetricJet,
        potential: Option<Jet3>,
        phi: Option<Jet3>,
    ) -> Result<DerivativeBundle, LagrangianError> {
        let d = x.len();
        let mut value = 0.5 * v.dot(&(&gj.g * v));
        let mut gx = DVector::zeros(d);
        let mut gv = &gj.g * v;
        let mut hxx = DMatrix::zeros(d, d);
        let mut hxv = DMatrix::zeros(d, d);
        let mut hvv = gj.g.clone();
        let mut tvvv = Tensor3::zeros(d);
        let mut txvv = Tensor3::zeros(d);
        let mut txxv = Tensor3::zeros(d);

        for i in 0..d {
            let mut acc = 0.0;
            for m in 0..d {
                for n in 0..d {
                    acc += gj.dg.get(i, m, n) * v[m] * v[n];
                }
            }
            gx[i] = 0.5 * acc;
        }
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for m in 0..d {
                    for n in 0..d {
                        acc += gj.ddg(i, j, m, n) * v[m] * v[n];
                    }
                }
                hxx[(i, j)] = 0.5 * acc;
                let mut cross = 0.0;
                for m in 0..d {
                    cross += gj.dg.get(i, j, m) * v[m];
                }
                hxv[(i, j)] = cross;
                for k in 0..d {
                    txvv.set(i, j, k, gj.dg.get(i, j, k));
                    let mut t = 0.0;
                    for m in 0..d {
                        t += gj.ddg(i, j, k, m) * v[m];
                    }
                    txxv.set(i, j, k, t);
                }
            }
        }
        if let Some(uj) = potential {
            value += uj.value();
            gx += uj.grad();
            hxx += uj.hess();
            // third x-derivatives of U do not enter any stored slice
        }
        if let Some(pj) = phi {
            value += pj.value();
            gv += pj.grad();
            hvv += pj.hess();
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        tvvv.set(i, j, k, pj.third(i, j, k));
                    }
                }
            }
        }
        Ok(DerivativeBundle {
            x: x.clone(),
            v: v.clone(),
            value,
            gx,
            gv,
            hxx,
            hxv,
            hvv,
            tvvv,
            txvv,
            txxv,
        })
    }

    fn custom_bundle(
        x: &DVector<f64>,
        v: &DVector<f64>,
        expr: &Expr,
    ) -> Result<DerivativeBundle, LagrangianError> {
        let d = x.len();
        let vars: Vec<f64> = x.iter().chain(v.iter()).cloned().collect();
        let jet = jet_lift(expr, &vars)?;
        let mut gx = DVector::zeros(d);
        let mut gv = DVector::zeros(d);
        for i in 0..d {
            gx[i] = jet.grad()[i];
            gv[i] = jet.grad()[d + i];
        }
        let mut hxx = DMatrix::zeros(d, d);
        let mut hxv = DMatrix::zeros(d, d);
        let mut hvv = DMatrix::zeros(d, d);
        let mut tvvv = Tensor3::zeros(d);
        let mut txvv = Tensor3::zeros(d);
        let mut txxv = Tensor3::zeros(d);
        for i in 0..d {
            for j in 0..d {
                hxx[(i, j)] = jet.hess()[(i, j)];
                hxv[(i, j)] = jet.hess()[(i, d + j)];
                hvv[(i, j)] = jet.hess()[(d + i, d + j)];
                for k in 0..d {
                    tvvv.set(i, j, k, jet.third(d + i, d + j, d + k));
                    txvv.set(i, j, k, jet.third(i, d + j, d + k));
                    txxv.set(i, j, k, jet.third(i, j, d + k));
                }
            }
        }
        Ok(DerivativeBundle {
            x: x.clone(),
            v: v.clone(),
            value: jet.value(),
            gx,
            gv,
            hxx,
            hxv,
            hvv,
            tvvv,
            txvv,
            txxv,
        })
    }

    /// Pulls a bundle back through `y = P x`: every derivative index
    /// contracts with a column of `S = P^{-1}`.
    fn transform_bundle(
        y: &DVector<f64>,
        w: &DVector<f64>,
        base: &DerivativeBundle,
        s: &DMatrix<f64>,
    ) -> DerivativeBundle {
        let d = y.len();
        let st = s.transpose();
        let contract3 = |t: &Tensor3| {
            let mut out = Tensor3::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let mut acc = 0.0;
                        for a in 0..d {
                            for b in 0..d {
                                for c in 0..d {
                                    acc += s[(a, i)] * s[(b, j)] * s[(c, k)] * t.get(a, b, c);
                                }
                            }
                        }
                        out.set(i, j, k, acc);
                    }
                }
            }
            out
        };
        DerivativeBundle {
            x: y.clone(),
            v: w.clone(),
            value: base.value,
            gx: &st * &base.gx,
            gv: &st * &base.gv,
            hxx: &st * &base.hxx * s,
            hxv: &st * &base.hxv * s,
            hvv: &st * &base.hvv * s,
            tvvv: contract3(&base.tvvv),
            txvv: contract3(&base.txvv),
            txxv: contract3(&base.txxv),
        }
    }
}

// ============================================================================
// Legendre transform (numerical convex conjugate)
// ============================================================================

/// Result of the pointwise Legendre transform.
#[derive(Debug, Clone)]
pub struct LegendreResult {
    /// Maximizer `v*` of `<p, v> - L(x, v)`.
    pub v_star: DVector<f64>,
    /// `H(x, p) = <p, v*> - L(x, v*)`.
    pub h: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub const LEGENDRE_TOL: f64 = 1e-10;
const LEGENDRE_MAX_ITER: usize = 60;

/// Solves `∇_v L(x, v) = p` by damped Newton with exact Jacobian `hvv`.
///
/// Initial guess `v0 = hvv(x, 0)^{-1} p`; Armijo backtracking on the
/// residual norm keeps the iteration globally reliable since `hvv` is SPD.
pub fn legendre(
    lagrangian: &LagrangianModel,
    x: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<LegendreResult, LagrangianError> {
    let d = lagrangian.dim();
    let b0 = lagrangian.derivatives(x, &DVector::zeros(d))?;
    let mut v = linalg::solve_spd(&b0.hvv, p).ok_or_else(|| LagrangianError::TonelliViolation {
        x: x.iter().cloned().collect(),
        v: vec![0.0; d],
    })?;

    let residual_of = |v: &DVector<f64>| -> Result<(DVector<f64>, DerivativeBundle), LagrangianError> {
        let b = lagrangian.derivatives(x, v)?;
        Ok((&b.gv - p, b))
    };

    let (mut f, mut bundle) = residual_of(&v)?;
    let mut fnorm = f.norm();
    for it in 0..LEGENDRE_MAX_ITER {
        if fnorm <= LEGENDRE_TOL {
            let h = p.dot(&v) - bundle.value;
            return Ok(LegendreResult {
                v_star: v,
                h,
                residual: fnorm,
                iterations: it,
            });
        }
        let delta = linalg::solve_spd(&bundle.hvv, &f).ok_or_else(|| {
            LagrangianError::TonelliViolation {
                x: x.iter().cloned().collect(),
                v: v.iter().cloned().collect(),
            }
        })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &v - &delta * lambda;
            match residual_of(&cand) {
                Ok((fc, bc)) => {
                    let fcn = fc.norm();
                    if fcn < (1.0 - 1e-4 * lambda) * fnorm {
                        v = cand;
                        f = fc;
                        bundle = bc;
                        fnorm = fcn;
                        accepted = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if fnorm <= LEGENDRE_TOL {
        let h = p.dot(&v) - bundle.value;
        return Ok(LegendreResult {
            v_star: v,
            h,
            residual: fnorm,
            iterations: LEGENDRE_MAX_ITER,
        });
    }
    Err(LagrangianError::LegendreFailure {
        x: x.iter().cloned().collect(),
        p: p.iter().cloned().collect(),
        last: v.iter().cloned().collect(),
        residual: fnorm,
        iterations: LEGENDRE_MAX_ITER,
    })
}

/// `∇_p H(x, p)`, which is the Legendre maximizer `v*`.
pub fn hamiltonian_grad(
    lagrangian: &LagrangianModel,
    x: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<DVector<f64>, LagrangianError> {
    Ok(legendre(lagrangian, x, p)?.v_star)
}

// ============================================================================
// Tonelli diagnostics
// ============================================================================

/// Diagnostic report from sampling the Tonelli conditions.
#[derive(Debug, Clone)]
pub struct TonelliProbe {
    /// Min eigenvalue of `∂²L/∂v∂v` over all sampled `(x, v)`.
    pub min_hvv_eigenvalue: f64,
    /// Per shell radius: min over samples of `L(x, v) / r` at `|v| = r`.
    pub shell_ratios: Vec<(f64, f64)>,
    /// Set when the shell ratios fail to increase (heuristic only; the
    /// superlinearity condition is asymptotic and not provable by sampling).
    pub superlinearity_warning: bool,
}

/// Samples `hvv` eigenvalues and superlinearity ratios over `xs` and
/// velocity shells `radii`.
pub fn tonelli_probe(
    lagrangian: &LagrangianModel,
    xs: &[DVector<f64>],
    radii: &[f64],
) -> Result<TonelliProbe, LagrangianError> {
    let d = lagrangian.dim();
    let dirs = unit_directions(d, 64);
    let mut min_eig = f64::INFINITY;
    let mut shell_ratios = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst = f64::INFINITY;
        for x in xs {
            for dir in &dirs {
                let v = dir * r;
                let b = lagrangian.derivatives(x, &v)?;
                min_eig = min_eig.min(linalg::min_eigenvalue_sym(&b.hvv));
                worst = worst.min(b.value / r);
            }
        }
        shell_ratios.push((r, worst));
    }
    let superlinearity_warning = shell_ratios
        .windows(2)
        .any(|w| w[1].1 <= w[0].1);
    Ok(TonelliProbe {
        min_hvv_eigenvalue: min_eig,
        shell_ratios,
        superlinearity_warning,
    })
}

/// Deterministic near-uniform unit directions (all of `S^{d-1}` for d = 1,
/// angular grid for d = 2, spiral points for d >= 3).
pub fn unit_directions(d: usize, count: usize) -> Vec<DVector<f64>> {
    match d {
        1 => vec![
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![-1.0]),
        ],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * (k as f64) / (count as f64);
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        _ => {
            // golden-spiral points on S^2, padded to higher d on coordinate planes
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / (count as f64);
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * k as f64;
                    let mut v = DVector::zeros(d);
                    v[0] = r * th.cos();
                    v[1] = r * th.sin();
                    v[2] = z;
                    v
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn euclidean_bundle() {
        let l = LagrangianModel::euclidean(2);
        let b = l
            .derivatives(&dvector![0.3, -0.8], &dvector![1.0, 2.0])
            .unwrap();
        assert_eq!(b.gv, dvector![1.0, 2.0]);
        assert_eq!(b.hvv, DMatrix::identity(2, 2));
        assert_eq!(b.hxx, DMatrix::zeros(2, 2));
        assert_eq!(b.tvvv.get(0, 0, 0), 0.0);
        assert_eq!(b.value, 2.5);
    }

    #[test]
    fn constant_metric_bundle() {
        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let b = l
            .derivatives(&dvector![5.0, -1.0], &dvector![1.0, 1.0])
            .unwrap();
        assert_eq!(b.gv, dvector![2.0, 1.0]);
        assert_eq!(b.hvv[(0, 0)], 2.0);
        assert_eq!(b.hvv[(1, 1)], 1.0);
        assert_eq!(b.gx, dvector![0.0, 0.0]);
    }

    #[test]
    fn mechanical_bundle_quadratic_potential() {
        let l = LagrangianModel::mechanical(MetricMap::identity(2), Potential::quadratic(2, 1.0));
        let b = l
            .derivatives(&dvector![1.0, 0.0], &dvector![0.0, 0.0])
            .unwrap();
        assert_eq!(b.gx, dvector![1.0, 0.0]);
        assert_eq!(b.hxx, DMatrix::identity(2, 2));
    }

    #[test]
    fn custom_matches_builtin() {
        // custom expression for the riemannian diag(2,1) Lagrangian
        let expr = Expr::parse("0.5*(2*v1^2 + v2^2)", &["x1", "x2", "v1", "v2"]).unwrap();
        let lc = LagrangianModel::custom(2, expr);
        let lb = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let x = dvector![0.4, -0.2];
        let v = dvector![1.3, 0.7];
        let bc = lc.derivatives(&x, &v).unwrap();
        let bb = lb.derivatives(&x, &v).unwrap();
        assert!((bc.value - bb.value).abs() < 1e-14);
        assert!((&bc.gv - &bb.gv).norm() < 1e-14);
        assert!((&bc.hvv - &bb.hvv).norm() < 1e-14);
    }

    #[test]
    fn legendre_euclidean_and_constant_metric() {
        let l = LagrangianModel::euclidean(2);
        let r = legendre(&l, &dvector![0.0, 0.0], &dvector![2.0, -1.0]).unwrap();
        assert!((r.v_star - dvector![2.0, -1.0]).norm() < 1e-12);
        assert!((r.h - 2.5).abs() < 1e-12);

        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let r = legendre(&l, &dvector![0.3, 0.3], &dvector![2.0, 0.0]).unwrap();
        assert!((r.v_star - dvector![1.0, 0.0]).norm() < 1e-12);
        assert!((r.h - 1.0).abs() < 1e-12);
    }

    #[test]
    fn legendre_round_trip() {
        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let x = dvector![0.1, 0.2];
        let r = dvector![1.0, 2.0];
        let b = l.derivatives(&x, &r).unwrap();
        let back = hamiltonian_grad(&l, &x, &b.gv).unwrap();
        assert!((back - r).norm() < 1e-10);
    }

    #[test]
    fn legendre_perturbed_matches_grid_search_oracle() {
        // argmax of <p, v> - L over the dense grid [-3, 3]² step 1e-3
        let phi = Potential::new(
            2,
            Expr::parse("0.01*exp(-(x1^2+x2^2))", &["x1", "x2"]).unwrap(),
        );
        let l = LagrangianModel::perturbed_riemannian(MetricMap::identity(2), phi);
        let x = dvector![0.0, 0.0];
        let p = dvector![1.0, 0.0];
        let r = legendre(&l, &x, &p).unwrap();

        let step = 1e-3;
        let n = (6.0 / step) as i64;
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=n {
            let v1 = -3.0 + step * i as f64;
            for j in 0..=n {
                let v2 = -3.0 + step * j as f64;
                let vv = v1 * v1 + v2 * v2;
                let lv = 0.5 * vv + 0.01 * (-vv).exp();
                let obj = p[0] * v1 + p[1] * v2 - lv;
                if obj > best.0 {
                    best = (obj, v1, v2);
                }
            }
        }
        assert!(
            (r.v_star[0] - best.1).abs() <= step && (r.v_star[1] - best.2).abs() <= step,
            "newton {:?} vs grid ({}, {})",
            r.v_star,
            best.1,
            best.2
        );
        assert!((r.h - best.0).abs() < 1e-5);
    }

    #[test]
    fn fenchel_young_inequality_and_equality_case() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let phi = Potential::new(
            2,
            Expr::parse("0.02*exp(-(x1^2+x2^2))", &["x1", "x2"]).unwrap(),
        );
        let l = LagrangianModel::perturbed_riemannian(MetricMap::const_diag(&[1.5, 0.8]), phi);
        for _ in 0..50 {
            let x = dvector![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
            let v = dvector![
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0
            ];
            let p = dvector![
                2.0 * rng.random::<f64>() - 1.0,
                2.0 * rng.random::<f64>() - 1.0
            ];
            let b = l.derivatives(&x, &v).unwrap();
            let h = legendre(&l, &x, &p).unwrap().h;
            assert!(v.dot(&p) <= h + b.value + 1e-9, "Fenchel-Young violated");
            // equality at p = ∇_v L(x, v)
            let h_eq = legendre(&l, &x, &b.gv).unwrap().h;
            assert!(
                (v.dot(&b.gv) - h_eq - b.value).abs() < 1e-8,
                "equality case fails"
            );
        }
    }

    #[test]
    fn custom_lagrangian_derivatives_match_finite_differences() {
        use crate::jets::{jet_check, default_fd_step};
        // random-ish smooth custom Lagrangians over (x, v)
        let names = ["x1", "x2", "v1", "v2"];
        for src in [
            "0.5*(1.3*v1^2 + 0.9*v2^2) + 0.2*sin(x1)*v1*v2 + 0.1*x2^2",
            "0.5*(v1^2+v2^2)*exp(0.1*x1) + 0.05*cos(x2)*v2 + 0.3*x1*x2",
        ] {
            let expr = Expr::parse(src, &names).unwrap();
            let pt = [0.4, -0.3, 0.8, 0.6];
            let rep = jet_check(&expr, &pt, default_fd_step(&pt)).unwrap();
            assert!(
                rep.max_rel < 1e-6,
                "custom Lagrangian FD agreement {src}: {}",
                rep.max_rel
            );
        }
    }

    #[test]
    fn probe_metric_bound_and_perturbed_superlinearity() {
        // riemannian g ⪰ 0.5 I: min hvv eigenvalue ≥ 0.5
        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[0.5, 2.0]));
        let probe = tonelli_probe(&l, &[dvector![0.1, 0.2]], &[1.0, 2.0]).unwrap();
        assert!(probe.min_hvv_eigenvalue >= 0.5 - 1e-12);

        // bounded φ: ratios increase for large r
        let phi = Potential::new(
            2,
            Expr::parse("0.05*exp(-(x1^2+x2^2))", &["x1", "x2"]).unwrap(),
        );
        let l = LagrangianModel::perturbed_riemannian(MetricMap::identity(2), phi);
        let probe =
            tonelli_probe(&l, &[dvector![0.0, 0.0]], &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(!probe.superlinearity_warning);
        let ratios: Vec<f64> = probe.shell_ratios.iter().map(|p| p.1).collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tonelli_violation_detected() {
        // L = -|v|^2/2 has negative-definite hvv
        let expr = Expr::parse("-0.5*(v1^2)", &["x1", "v1"]).unwrap();
        let l = LagrangianModel::custom(1, expr);
        let err = l.derivatives(&dvector![0.0], &dvector![1.0]);
        assert!(matches!(err, Err(LagrangianError::TonelliViolation { .. })));
    }

    #[test]
    fn probe_euclidean_shells() {
        let l = LagrangianModel::euclidean(2);
        let probe = tonelli_probe(
            &l,
            &[dvector![0.0, 0.0]],
            &[1.0, 2.0, 4.0],
        )
        .unwrap();
        assert!((probe.min_hvv_eigenvalue - 1.0).abs() < 1e-12);
        let ratios: Vec<f64> = probe.shell_ratios.iter().map(|p| p.1).collect();
        assert!((ratios[0] - 0.5).abs() < 1e-12);
        assert!((ratios[1] - 1.0).abs() < 1e-12);
        assert!((ratios[2] - 2.0).abs() < 1e-12);
        assert!(!probe.superlinearity_warning);
    }
}
