//! Vector fields on `R^d` with value, Jacobian and second derivatives.
//!
//! Two main forms: explicit component expressions, and gradient-type fields
//! `ξ(x) = ∇_p H(x, ∇u(x))` built from a scalar potential `u` and a
//! Lagrangian. Gradient-type evaluation solves `∇_v L(x, ξ) = ∇u(x)` with
//! the Legendre Newton solve, then obtains `∇ξ` and `∇²ξ` by implicit
//! differentiation of that identity — no finite differences involved.

use crate::expr::Expr;
use crate::jets::jet_lift;
use crate::lagrangian::{legendre, DerivativeBundle, LagrangianError, LagrangianModel, Potential};
use nalgebra::{DMatrix, DVector};

/// Pointwise field data: value, Jacobian and second derivatives.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub value: DVector<f64>,
    /// `jac[(i, j)] = ∂ξ_i / ∂x_j`
    pub jac: DMatrix<f64>,
    /// `hess[i][(j, k)] = ∂²ξ_i / ∂x_j ∂x_k`
    pub hess: Vec<DMatrix<f64>>,
}

/// A smooth vector field specification.
#[derive(Debug, Clone)]
pub enum VectorFieldSpec {
    /// Component expressions in `x1..xd`.
    Explicit { dim: usize, components: Vec<Expr> },
    /// `ξ(x) = ∇_p H(x, ∇u(x))`, equivalently `∇_v L(x, ξ(x)) = ∇u(x)`.
    Gradient {
        potential: Potential,
        lagrangian: LagrangianModel,
    },
    /// `ξ(x) = M x`.
    LinearMap { m: DMatrix<f64> },
    /// `ξ~(y) = P ξ(P^{-1} y)`.
    Transformed {
        p: DMatrix<f64>,
        p_inv: DMatrix<f64>,
        inner: Box<VectorFieldSpec>,
    },
}

impl VectorFieldSpec {
    pub fn explicit(dim: usize, components: Vec<Expr>) -> Self {
        assert_eq!(components.len(), dim);
        VectorFieldSpec::Explicit { dim, components }
    }

    pub fn gradient(potential: Potential, lagrangian: LagrangianModel) -> Self {
        assert_eq!(potential.dim(), lagrangian.dim());
        VectorFieldSpec::Gradient {
            potential,
            lagrangian,
        }
    }

    pub fn linear(m: DMatrix<f64>) -> Self {
        VectorFieldSpec::LinearMap { m }
    }

    pub fn transformed(self, p: &DMatrix<f64>) -> Option<Self> {
        let p_inv = p.clone().try_inverse()?;
        Some(VectorFieldSpec::Transformed {
            p: p.clone(),
            p_inv,
            inner: Box::new(self),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorFieldSpec::Explicit { dim, .. } => *dim,
            VectorFieldSpec::Gradient { potential, .. } => potential.dim(),
            VectorFieldSpec::LinearMap { m } => m.nrows(),
            VectorFieldSpec::Transformed { inner, .. } => inner.dim(),
        }
    }

    pub fn is_gradient_type(&self) -> bool {
        match self {
            VectorFieldSpec::Gradient { .. } => true,
            VectorFieldSpec::Transformed { inner, .. } => inner.is_gradient_type(),
            _ => false,
        }
    }

    /// Value only (cheaper than [`VectorFieldSpec::eval`] for gradient fields).
    pub fn value(&self, x: &DVector<f64>) -> Result<DVector<f64>, LagrangianError> {
        match self {
            VectorFieldSpec::Explicit { components, .. } => {
                let xs: Vec<f64> = x.iter().cloned().collect();
                let mut out = DVector::zeros(components.len());
                for (i, c) in components.iter().enumerate() {
                    out[i] = c.eval_f64(&xs)?;
                }
                Ok(out)
            }
            VectorFieldSpec::Gradient {
                potential,
                lagrangian,
            } => {
                let p = potential.gradient(x)?;
                Ok(legendre(lagrangian, x, &p)?.v_star)
            }
            VectorFieldSpec::LinearMap { m } => Ok(m * x),
            VectorFieldSpec::Transformed { p, p_inv, inner } => {
                Ok(p * inner.value(&(p_inv * x))?)
            }
        }
    }

    /// Value, Jacobian and second derivatives at `x`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<FieldJet, LagrangianError> {
        match self {
            VectorFieldSpec::Explicit { dim, components } => {
                let d = *dim;
                let xs: Vec<f64> = x.iter().cloned().collect();
                let mut value = DVector::zeros(d);
                let mut jac = DMatrix::zeros(d, d);
                let mut hess = vec![DMatrix::zeros(d, d); d];
                for i in 0..d {
                    let jet = jet_lift(&components[i], &xs)?;
                    value[i] = jet.value();
                    for j in 0..d {
                        jac[(i, j)] = jet.grad()[j];
                        for k in 0..d {
                            hess[i][(j, k)] = jet.hess()[(j, k)];
                        }
                    }
                }
                Ok(FieldJet { value, jac, hess })
            }
            VectorFieldSpec::Gradient {
                potential,
                lagrangian,
            } => {
                let (jet, _) = gradient_field_eval(lagrangian, potential, x)?;
                Ok(jet)
            }
            VectorFieldSpec::LinearMap { m } => {
                let d = m.nrows();
                Ok(FieldJet {
                    value: m * x,
                    jac: m.clone(),
                    hess: vec![DMatrix::zeros(d, d); d],
                })
            }
            VectorFieldSpec::Transformed { p, p_inv, inner } => {
                let d = self.dim();
                let base = inner.eval(&(p_inv * x))?;
                let value = p * &base.value;
                let jac = p * &base.jac * p_inv;
                let mut hess = vec![DMatrix::zeros(d, d); d];
                for i in 0..d {
                    for a in 0..d {
                        let transformed = p_inv.transpose() * &base.hess[a] * p_inv;
                        hess[i] += transformed * p[(i, a)];
                    }
                }
                Ok(FieldJet { value, jac, hess })
            }
        }
    }
}

/// Evaluates a gradient-type field and returns both the field jet and the
/// Lagrangian derivative bundle at `(x, ξ(x))`.
///
/// Implicit differentiation of `∇_v L(x, ξ(x)) = ∇u(x)`:
///
/// * first order: `hvx + hvv ∇ξ = ∇²u`
/// * second order: third derivatives of `L` and `u` close the system for
///   `∇²ξ`, again through `hvv^{-1}`.
pub fn gradient_field_eval(
    lagrangian: &LagrangianModel,
    u: &Potential,
    x: &DVector<f64>,
) -> Result<(FieldJet, DerivativeBundle), LagrangianError> {
    let d = lagrangian.dim();
    let ujet = u.jet(x)?;
    let p = ujet.grad().clone();
    let xi = legendre(lagrangian, x, &p)?.v_star;
    let b = lagrangian.derivatives(x, &xi)?;

    let chol = b
        .hvv
        .clone()
        .cholesky()
        .ok_or_else(|| LagrangianError::TonelliViolation {
            x: x.iter().cloned().collect(),
            v: xi.iter().cloned().collect(),
        })?;

    // hvx[(i,j)] = ∂²L/∂v_i∂x_j = hxv[(j,i)]
    let hvx = b.hxv.transpose();
    let jac = chol.solve(&(ujet.hess() - &hvx));

    // Second order: for each (j, m),
    //   Σ_k hvv(i,k) ξ_{k,jm} = u_{ijm} - txxv(m,j,i) - Σ_r txvv(j,i,r) ξ_{r,m}
    //                           - Σ_k [txvv(m,i,k) + Σ_r tvvv(i,k,r) ξ_{r,m}] ξ_{k,j}
    let mut hess = vec![DMatrix::zeros(d, d); d];
    for j in 0..d {
        for m in 0..d {
            let mut rhs = DVector::zeros(d);
            for i in 0..d {
                let mut acc = ujet.third(i, j, m) - b.txxv.get(m, j, i);
                for r in 0..d {
                    acc -= b.txvv.get(j, i, r) * jac[(r, m)];
                }
                for k in 0..d {
                    let mut coef = b.txvv.get(m, i, k);
                    for r in 0..d {
                        coef += b.tvvv.get(i, k, r) * jac[(r, m)];
                    }
                    acc -= coef * jac[(k, j)];
                }
                rhs[i] = acc;
            }
            let col = chol.solve(&rhs);
            for i in 0..d {
                hess[i][(j, m)] = col[i];
            }
        }
    }
    // mixed partials commute; clean up rounding asymmetry
    for h in hess.iter_mut() {
        let sym = (&*h + h.transpose()) * 0.5;
        *h = sym;
    }

    Ok((
        FieldJet {
            value: xi,
            jac,
            hess,
        },
        b,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::MetricMap;
    use nalgebra::{dmatrix, dvector};

    /// Central-difference check of the gradient-field derivatives.
    fn fd_check_gradient_field(l: &LagrangianModel, u: &Potential, x: &DVector<f64>) {
        let d = l.dim();
        let spec = VectorFieldSpec::gradient(u.clone(), l.clone());
        let jet = spec.eval(x).unwrap();
        let h = 1e-5;
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let vp = spec.value(&xp).unwrap();
            let vm = spec.value(&xm).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            for i in 0..d {
                assert!(
                    (jet.jac[(i, j)] - fd[i]).abs() < 5e-8 * (1.0 + fd[i].abs()),
                    "jac({i},{j}) mismatch: {} vs fd {}",
                    jet.jac[(i, j)],
                    fd[i]
                );
            }
            // second derivatives against FD of the Jacobian
            let jp = spec.eval(&xp).unwrap();
            let jm = spec.eval(&xm).unwrap();
            for i in 0..d {
                for k in 0..d {
                    let fd2 = (jp.jac[(i, k)] - jm.jac[(i, k)]) / (2.0 * h);
                    assert!(
                        (jet.hess[i][(k, j)] - fd2).abs() < 5e-6 * (1.0 + fd2.abs()),
                        "hess[{i}]({k},{j}) mismatch: {} vs fd {}",
                        jet.hess[i][(k, j)],
                        fd2
                    );
                }
            }
        }
    }

    #[test]
    fn euclidean_gradient_field_is_grad_u() {
        let l = LagrangianModel::euclidean(2);
        let u = Potential::quadratic(2, 1.0);
        let spec = VectorFieldSpec::gradient(u, l);
        let x = dvector![0.7, -0.3];
        let jet = spec.eval(&x).unwrap();
        assert!((jet.value.clone() - &x).norm() < 1e-12);
        assert!((jet.jac.clone() - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn constant_metric_gradient_field() {
        // ξ = g^{-1} ∇u for linear u: constant field g^{-1} a
        let l = LagrangianModel::riemannian(MetricMap::const_diag(&[2.0, 1.0]));
        let u = Potential::linear(&[3.0, 4.0]);
        let spec = VectorFieldSpec::gradient(u, l);
        let jet = spec.eval(&dvector![0.4, 0.1]).unwrap();
        assert!((jet.value.clone() - dvector![1.5, 4.0]).norm() < 1e-10);
        assert!(jet.jac.norm() < 1e-10);
    }

    #[test]
    fn gradient_field_derivatives_match_fd() {
        let lam = Expr::parse("0.1*sin(x1) + 0.05*x2", &["x1", "x2"]).unwrap();
        let l = LagrangianModel::riemannian(MetricMap::conformal(2, lam));
        let u = Potential::new(
            2,
            Expr::parse("0.5*(x1^2+x2^2) + 0.2*x1*x2 + 0.1*sin(x2)", &["x1", "x2"]).unwrap(),
        );
        fd_check_gradient_field(&l, &u, &dvector![0.3, -0.4]);
    }

    #[test]
    fn perturbed_gradient_field_derivatives_match_fd() {
        let phi = Potential::new(
            2,
            Expr::parse("0.01*exp(-(x1^2+x2^2))", &["x1", "x2"]).unwrap(),
        );
        let l = LagrangianModel::perturbed_riemannian(MetricMap::identity(2), phi);
        let u = Potential::new(
            2,
            Expr::parse("0.5*x1^2 + 0.3*x2^2 + 0.1*x1*x2", &["x1", "x2"]).unwrap(),
        );
        fd_check_gradient_field(&l, &u, &dvector![0.2, 0.5]);
    }

    #[test]
    fn transformed_field_chain_rule() {
        let m = dmatrix![1.0, 2.0; 0.0, 3.0];
        let base = VectorFieldSpec::linear(m.clone());
        let p = dmatrix![2.0, 1.0; 0.5, 1.5];
        let spec = base.transformed(&p).unwrap();
        let x = dvector![0.3, 0.9];
        let jet = spec.eval(&x).unwrap();
        let p_inv = p.clone().try_inverse().unwrap();
        let expect = &p * &m * &p_inv;
        assert!((jet.jac.clone() - &expect).norm() < 1e-12);
        assert!((jet.value.clone() - expect * &x).norm() < 1e-12);
    }
}
