//! Order-3 truncated multivariate Taylor arithmetic.
//!
//! A [`Jet3`] carries the value of a smooth function together with its
//! gradient, Hessian and full third-derivative tensor at a point, propagated
//! exactly (to machine precision) through arithmetic and the supported
//! elementary functions. This is the derivative backend for everything that
//! needs `C^3` data: Lagrangian derivative bundles, metric tensors,
//! potentials and perturbations.
//!
//! The rank-3 tensor is stored densely (`n^3` entries) with full symmetry
//! maintained by construction; the dimensions in play are tiny (`n = 2d`,
//! `d <= 4`).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors from jet evaluation.
#[derive(Debug, Clone, Error)]
pub enum JetError {
    /// An elementary function was evaluated outside its domain.
    #[error("domain error in `{op}` at argument {arg}")]
    Domain { op: &'static str, arg: f64 },
    /// An expression referenced a variable index that does not exist.
    #[error("unknown variable index {0} (have {1} variables)")]
    UnknownVariable(usize, usize),
    /// Operands of a binary operation disagree on the number of variables.
    #[error("jet dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

#[inline]
fn idx3(n: usize, i: usize, j: usize, k: usize) -> usize {
    (i * n + j) * n + k
}

/// Truncated Taylor expansion of order 3 in `n` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet3 {
    n: usize,
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    third: Vec<f64>,
}

impl Jet3 {
    /// Constant jet: value `c`, all derivatives zero.
    pub fn constant(n: usize, c: f64) -> Self {
        Jet3 {
            n,
            value: c,
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
            third: vec![0.0; n * n * n],
        }
    }

    /// Coordinate jet: the `i`-th variable seeded at value `x`.
    pub fn variable(n: usize, i: usize, x: f64) -> Self {
        let mut j = Jet3::constant(n, x);
        j.grad[i] = 1.0;
        j
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn grad(&self) -> &DVector<f64> {
        &self.grad
    }

    pub fn hess(&self) -> &DMatrix<f64> {
        &self.hess
    }

    /// Third derivative `∂³f/∂x_i∂x_j∂x_k`.
    #[inline]
    pub fn third(&self, i: usize, j: usize, k: usize) -> f64 {
        self.third[idx3(self.n, i, j, k)]
    }

    fn check_dims(&self, other: &Jet3) -> Result<(), JetError> {
        if self.n != other.n {
            return Err(JetError::DimMismatch(self.n, other.n));
        }
        Ok(())
    }

    pub fn add(&self, other: &Jet3) -> Result<Jet3, JetError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        out.value += other.value;
        out.grad += &other.grad;
        out.hess += &other.hess;
        for (a, b) in out.third.iter_mut().zip(other.third.iter()) {
            *a += b;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Jet3) -> Result<Jet3, JetError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        out.value -= other.value;
        out.grad -= &other.grad;
        out.hess -= &other.hess;
        for (a, b) in out.third.iter_mut().zip(other.third.iter()) {
            *a -= b;
        }
        Ok(out)
    }

    pub fn neg(&self) -> Jet3 {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Jet3 {
        let mut out = self.clone();
        out.value *= c;
        out.grad *= c;
        out.hess *= c;
        for a in out.third.iter_mut() {
            *a *= c;
        }
        out
    }

    /// Leibniz product through order 3.
    pub fn mul(&self, other: &Jet3) -> Result<Jet3, JetError> {
        self.check_dims(other)?;
        let n = self.n;
        let (f, g) = (self, other);
        let mut out = Jet3::constant(n, f.value * g.value);
        for i in 0..n {
            out.grad[i] = f.grad[i] * g.value + f.value * g.grad[i];
        }
        for i in 0..n {
            for j in 0..n {
                out.hess[(i, j)] = f.hess[(i, j)] * g.value
                    + f.grad[i] * g.grad[j]
                    + f.grad[j] * g.grad[i]
                    + f.value * g.hess[(i, j)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.third[idx3(n, i, j, k)] = f.third[idx3(n, i, j, k)] * g.value
                        + f.hess[(i, j)] * g.grad[k]
                        + f.hess[(i, k)] * g.grad[j]
                        + f.hess[(j, k)] * g.grad[i]
                        + f.grad[i] * g.hess[(j, k)]
                        + f.grad[j] * g.hess[(i, k)]
                        + f.grad[k] * g.hess[(i, j)]
                        + f.value * g.third[idx3(n, i, j, k)];
                }
            }
        }
        Ok(out)
    }

    /// Chain rule for a scalar function with derivatives `c1, c2, c3` at
    /// `self.value`.
    fn compose(&self, f0: f64, c1: f64, c2: f64, c3: f64) -> Jet3 {
        let n = self.n;
        let u = self;
        let mut out = Jet3::constant(n, f0);
        for i in 0..n {
            out.grad[i] = c1 * u.grad[i];
        }
        for i in 0..n {
            for j in 0..n {
                out.hess[(i, j)] = c2 * u.grad[i] * u.grad[j] + c1 * u.hess[(i, j)];
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.third[idx3(n, i, j, k)] = c3 * u.grad[i] * u.grad[j] * u.grad[k]
                        + c2 * (u.hess[(i, j)] * u.grad[k]
                            + u.hess[(i, k)] * u.grad[j]
                            + u.hess[(j, k)] * u.grad[i])
                        + c1 * u.third[idx3(n, i, j, k)];
                }
            }
        }
        out
    }

    pub fn recip(&self) -> Result<Jet3, JetError> {
        let u = self.value;
        if u == 0.0 {
            return Err(JetError::Domain { op: "recip", arg: u });
        }
        let iu = 1.0 / u;
        Ok(self.compose(iu, -iu * iu, 2.0 * iu * iu * iu, -6.0 * iu * iu * iu * iu))
    }

    pub fn div(&self, other: &Jet3) -> Result<Jet3, JetError> {
        self.mul(&other.recip()?)
    }

    pub fn exp(&self) -> Jet3 {
        let e = self.value.exp();
        self.compose(e, e, e, e)
    }

    pub fn ln(&self) -> Result<Jet3, JetError> {
        let u = self.value;
        if u <= 0.0 {
            return Err(JetError::Domain { op: "log", arg: u });
        }
        let iu = 1.0 / u;
        Ok(self.compose(u.ln(), iu, -iu * iu, 2.0 * iu * iu * iu))
    }

    pub fn sin(&self) -> Jet3 {
        let (s, c) = self.value.sin_cos();
        self.compose(s, c, -s, -c)
    }

    pub fn cos(&self) -> Jet3 {
        let (s, c) = self.value.sin_cos();
        self.compose(c, -s, -c, s)
    }

    pub fn sqrt(&self) -> Result<Jet3, JetError> {
        let u = self.value;
        if u <= 0.0 {
            return Err(JetError::Domain { op: "sqrt", arg: u });
        }
        let r = u.sqrt();
        Ok(self.compose(r, 0.5 / r, -0.25 / (r * u), 0.375 / (r * u * u)))
    }

    /// Integer power, valid for any base except `0` with negative exponent.
    pub fn powi(&self, k: i32) -> Result<Jet3, JetError> {
        if k == 0 {
            return Ok(Jet3::constant(self.n, 1.0));
        }
        let u = self.value;
        if u == 0.0 && k < 0 {
            return Err(JetError::Domain { op: "powi", arg: u });
        }
        let kf = f64::from(k);
        // u == 0 with k >= 1: derivatives of u^k at 0 handled by the limits below.
        let p = |e: i32| -> f64 {
            if u == 0.0 {
                if e == 0 {
                    1.0
                } else if e > 0 {
                    0.0
                } else {
                    f64::NAN
                }
            } else {
                u.powi(e)
            }
        };
        let c1 = kf * p(k - 1);
        let c2 = kf * (kf - 1.0) * p(k - 2);
        let c3 = kf * (kf - 1.0) * (kf - 2.0) * p(k - 3);
        let fix = |c: f64, coef: f64| if coef == 0.0 { 0.0 } else { c };
        Ok(self.compose(
            p(k),
            fix(c1, kf),
            fix(c2, kf * (kf - 1.0)),
            fix(c3, kf * (kf - 1.0) * (kf - 2.0)),
        ))
    }

    /// Real power `u^p`, requires `u > 0`.
    pub fn powf(&self, p: f64) -> Result<Jet3, JetError> {
        let u = self.value;
        if u <= 0.0 {
            return Err(JetError::Domain { op: "pow", arg: u });
        }
        let f0 = u.powf(p);
        let c1 = p * u.powf(p - 1.0);
        let c2 = p * (p - 1.0) * u.powf(p - 2.0);
        let c3 = p * (p - 1.0) * (p - 2.0) * u.powf(p - 3.0);
        Ok(self.compose(f0, c1, c2, c3))
    }

    /// Max deviation of `hess` from its transpose and `third` from full
    /// index-permutation symmetry. Exactly zero for jets built from the
    /// public constructors and operations.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.hess[(i, j)] - self.hess[(j, i)]).abs());
            }
        }
        let perms: [[usize; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let base = [i, j, k];
                    let t = self.third(i, j, k);
                    for p in perms {
                        let q = [base[p[0]], base[p[1]], base[p[2]]];
                        worst = worst.max((t - self.third(q[0], q[1], q[2])).abs());
                    }
                }
            }
        }
        worst
    }
}

// ============================================================================
// Finite-difference cross check
// ============================================================================

/// Result of comparing jet coefficients against central finite differences.
#[derive(Debug, Clone)]
pub struct JetCheckReport {
    /// Max relative deviation per derivative order (order 0 is exact).
    pub per_order: [f64; 4],
    /// Max over all orders.
    pub max_rel: f64,
}

/// Nested central difference of `f` along the axes in `dirs`, step `s`.
fn nested_central<F: Fn(&[f64]) -> Result<f64, JetError>>(
    f: &F,
    x: &mut Vec<f64>,
    dirs: &[usize],
    s: f64,
) -> Result<f64, JetError> {
    match dirs.split_last() {
        None => f(x),
        Some((&axis, rest)) => {
            x[axis] += s;
            let hi = nested_central(f, x, rest, s)?;
            x[axis] -= 2.0 * s;
            let lo = nested_central(f, x, rest, s)?;
            x[axis] += s;
            Ok((hi - lo) / (2.0 * s))
        }
    }
}

/// Central difference with one Richardson step: pairs `(s, 2s)` so the
/// leading `O(s^2)` error cancels.
fn richardson<F: Fn(&[f64]) -> Result<f64, JetError>>(
    f: &F,
    x: &[f64],
    dirs: &[usize],
    s: f64,
) -> Result<f64, JetError> {
    let mut buf = x.to_vec();
    let d_s = nested_central(f, &mut buf, dirs, s)?;
    let d_2s = nested_central(f, &mut buf, dirs, 2.0 * s)?;
    Ok((4.0 * d_s - d_2s) / 3.0)
}

/// Cross-checks a jet against central finite differences of orders 1-3 with
/// one Richardson extrapolation step.
///
/// The third-order stencils run at `4h`: cubing the step denominator pushes
/// third differences into rounding noise well before first differences, and
/// the larger base step rebalances truncation against cancellation.
pub fn jet_check_fn<F: Fn(&[f64]) -> Result<f64, JetError>>(
    f: F,
    jet: &Jet3,
    x: &[f64],
    h: f64,
) -> Result<JetCheckReport, JetError> {
    let n = x.len();
    let rel = |a: f64, b: f64| (a - b).abs() / f64::max(1.0, a.abs());
    let mut per_order = [0.0f64; 4];

    per_order[0] = rel(jet.value(), f(x)?);

    for i in 0..n {
        let fd = richardson(&f, x, &[i], h)?;
        per_order[1] = per_order[1].max(rel(jet.grad()[i], fd));
    }
    for i in 0..n {
        for j in i..n {
            let fd = richardson(&f, x, &[i, j], h)?;
            per_order[2] = per_order[2].max(rel(jet.hess()[(i, j)], fd));
        }
    }
    for i in 0..n {
        for j in i..n {
            for k in j..n {
                let fd = richardson(&f, x, &[i, j, k], 4.0 * h)?;
                per_order[3] = per_order[3].max(rel(jet.third(i, j, k), fd));
            }
        }
    }

    let max_rel = per_order.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(JetCheckReport { per_order, max_rel })
}

/// Default FD step: `1e-3 * max(1, |x|_inf)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    let scale = x.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    1e-3 * scale
}

/// Exact Taylor coefficients of `expr` at `x` through order 3.
pub fn jet_lift(expr: &crate::expr::Expr, x: &[f64]) -> Result<Jet3, JetError> {
    let n = x.len();
    let vars: Vec<Jet3> = (0..n).map(|i| Jet3::variable(n, i, x[i])).collect();
    expr.eval_jet(&vars)
}

/// Compares [`jet_lift`] coefficients against central finite differences.
pub fn jet_check(expr: &crate::expr::Expr, x: &[f64], h: f64) -> Result<JetCheckReport, JetError> {
    let jet = jet_lift(expr, x)?;
    jet_check_fn(|p| expr.eval_f64(p), &jet, x, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(n: usize, i: usize, x: f64) -> Jet3 {
        Jet3::variable(n, i, x)
    }

    #[test]
    fn square_of_variable() {
        // x^2 at x=3: value 9, grad 6, hess 2, third 0
        let x = var(1, 0, 3.0);
        let j = x.mul(&x).unwrap();
        assert_eq!(j.value(), 9.0);
        assert_eq!(j.grad()[0], 6.0);
        assert_eq!(j.hess()[(0, 0)], 2.0);
        assert_eq!(j.third(0, 0, 0), 0.0);
    }

    #[test]
    fn exp_at_zero() {
        let x = var(1, 0, 0.0);
        let j = x.exp();
        assert_eq!(j.value(), 1.0);
        assert_eq!(j.grad()[0], 1.0);
        assert_eq!(j.hess()[(0, 0)], 1.0);
        assert_eq!(j.third(0, 0, 0), 1.0);
    }

    #[test]
    fn product_rule_matches_leibniz_assembly() {
        // f = exp(x) * sin(y), assembled two ways.
        let n = 2;
        let x = var(n, 0, 0.7);
        let y = var(n, 1, -0.4);
        let f = x.exp();
        let g = y.sin();
        let fg = f.mul(&g).unwrap();

        // Leibniz by hand from the factor jets.
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let expect = f.third(i, j, k) * g.value()
                        + f.hess()[(i, j)] * g.grad()[k]
                        + f.hess()[(i, k)] * g.grad()[j]
                        + f.hess()[(j, k)] * g.grad()[i]
                        + f.grad()[i] * g.hess()[(j, k)]
                        + f.grad()[j] * g.hess()[(i, k)]
                        + f.grad()[k] * g.hess()[(i, j)]
                        + f.value() * g.third(i, j, k);
                    let rel = (fg.third(i, j, k) - expect).abs()
                        / f64::max(1.0, expect.abs());
                    assert!(rel < 1e-12);
                }
            }
        }
    }

    #[test]
    fn symmetry_preserved_by_arithmetic() {
        let n = 3;
        let x = var(n, 0, 0.3);
        let y = var(n, 1, 1.2);
        let z = var(n, 2, -0.8);
        let e = x
            .mul(&y.sin())
            .unwrap()
            .add(&z.mul(&z).unwrap().exp())
            .unwrap()
            .mul(&y.add(&Jet3::constant(n, 2.0)).unwrap().ln().unwrap())
            .unwrap();
        assert_eq!(e.symmetry_defect(), 0.0);
    }

    #[test]
    fn fd_check_cube() {
        // x³ at x = 1, h = 1e-3: analytic derivatives (3, 6, 6)
        let e = crate::expr::Expr::parse("x1^3", &["x1"]).unwrap();
        let rep = jet_check(&e, &[1.0], 1e-3).unwrap();
        assert!(rep.max_rel < 1e-8, "cube residual {:.3e}", rep.max_rel);
    }

    #[test]
    fn fd_check_constant_exact_zero() {
        let e = crate::expr::Expr::parse("5", &["x1", "x2"]).unwrap();
        let rep = jet_check(&e, &[0.7, -0.9], 1e-3).unwrap();
        assert_eq!(rep.max_rel, 0.0);
        assert_eq!(rep.per_order, [0.0; 4]);
    }

    #[test]
    fn fd_check_exp_sum() {
        // exp(x1+x2) at 0: all coefficients equal 1
        let e = crate::expr::Expr::parse("exp(x1+x2)", &["x1", "x2"]).unwrap();
        let j = jet_lift(&e, &[0.0, 0.0]).unwrap();
        assert_eq!(j.value(), 1.0);
        assert_eq!(j.grad()[0], 1.0);
        assert_eq!(j.hess()[(0, 1)], 1.0);
        assert_eq!(j.third(0, 1, 1), 1.0);
        let rep = jet_check(&e, &[0.0, 0.0], 1e-3).unwrap();
        assert!(rep.max_rel < 1e-6, "exp residual {:.3e}", rep.max_rel);
    }

    #[test]
    fn fd_check_product_sine() {
        let e = crate::expr::Expr::parse("x1*sin(x2)", &["x1", "x2"]).unwrap();
        let rep = jet_check(&e, &[2.0, 0.5], default_fd_step(&[2.0, 0.5])).unwrap();
        assert!(rep.max_rel < 1e-6, "residual {:.3e}", rep.max_rel);
    }

    #[test]
    fn polynomials_of_degree_three_are_exact() {
        // dyadic step and points: the stencils lose nothing to rounding
        let e = crate::expr::Expr::parse(
            "x1^3 - 2*x1*x2^2 + 0.5*x2^3 + x1*x2 - 3*x1 + 4",
            &["x1", "x2"],
        )
        .unwrap();
        let h = 2f64.powi(-10);
        for pt in [[0.5, -0.25], [1.0, 2.0], [0.0, 0.75]] {
            let rep = jet_check(&e, &pt, h).unwrap();
            assert!(
                rep.max_rel <= 1e-10,
                "degree-3 polynomial residual {:.3e} at {pt:?}",
                rep.max_rel
            );
        }
    }

    #[test]
    fn linearity_is_exact() {
        use crate::expr::Expr;
        let f = Expr::parse("exp(x1)*sin(x2)", &["x1", "x2"]).unwrap();
        let g = Expr::parse("x1^2*x2 + cos(x2)", &["x1", "x2"]).unwrap();
        let (a, b) = (2.5, -0.75);
        let combined = f.clone().cmul(a).add(g.clone().cmul(b));
        let x = [0.3, 1.1];
        let jf = jet_lift(&f, &x).unwrap();
        let jg = jet_lift(&g, &x).unwrap();
        let jc = jet_lift(&combined, &x).unwrap();
        let manual = jf.scale(a).add(&jg.scale(b)).unwrap();
        assert_eq!(jc, manual, "linearity must hold coefficientwise exactly");
    }

    #[test]
    fn domain_errors() {
        let x = var(1, 0, -1.0);
        assert!(matches!(x.ln(), Err(JetError::Domain { .. })));
        assert!(matches!(x.sqrt(), Err(JetError::Domain { .. })));
        let z = Jet3::constant(1, 0.0);
        assert!(matches!(z.recip(), Err(JetError::Domain { .. })));
    }

    #[test]
    fn trig_derivatives() {
        let x = var(1, 0, 0.9);
        let j = x.sin();
        let (s, c) = (0.9f64.sin(), 0.9f64.cos());
        assert!((j.value() - s).abs() < 1e-15);
        assert!((j.grad()[0] - c).abs() < 1e-15);
        assert!((j.hess()[(0, 0)] + s).abs() < 1e-15);
        assert!((j.third(0, 0, 0) + c).abs() < 1e-15);
    }
}
