//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `d x d` matrices with `d <= 4`, so plain
//! Gaussian elimination and nalgebra's dense factorizations are the right
//! tools. [`Jet1`] is a value-plus-gradient scalar used to differentiate
//! composite matrix expressions (inverse included) in the divergence route
//! of the curvature computation.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive-definite `a` via Cholesky.
/// Returns `None` when the factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    Some(chol.solve(b))
}

/// SPD inverse via Cholesky.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    Some(chol.inverse())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Operator (spectral) norm.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    min_eigenvalue_sym(&(-&ata)).abs().sqrt().max(0.0)
}

/// Frobenius norm.
pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ============================================================================
// First-order jets (value + gradient in d spatial variables)
// ============================================================================

/// Scalar carrying its gradient with respect to `d` spatial coordinates.
#[derive(Debug, Clone)]
pub struct Jet1 {
    pub v: f64,
    pub g: DVector<f64>,
}

#[allow(clippy::should_implement_trait)] // fallible/by-ref builders, not operator impls
impl Jet1 {
    pub fn constant(d: usize, v: f64) -> Jet1 {
        Jet1 {
            v,
            g: DVector::zeros(d),
        }
    }

    pub fn new(v: f64, g: DVector<f64>) -> Jet1 {
        Jet1 { v, g }
    }

    pub fn add(&self, o: &Jet1) -> Jet1 {
        Jet1 {
            v: self.v + o.v,
            g: &self.g + &o.g,
        }
    }

    pub fn sub(&self, o: &Jet1) -> Jet1 {
        Jet1 {
            v: self.v - o.v,
            g: &self.g - &o.g,
        }
    }

    pub fn mul(&self, o: &Jet1) -> Jet1 {
        Jet1 {
            v: self.v * o.v,
            g: &self.g * o.v + &o.g * self.v,
        }
    }

    pub fn div(&self, o: &Jet1) -> Jet1 {
        let iv = 1.0 / o.v;
        Jet1 {
            v: self.v * iv,
            g: (&self.g - &o.g * (self.v * iv)) * iv,
        }
    }

    pub fn scale(&self, c: f64) -> Jet1 {
        Jet1 {
            v: self.v * c,
            g: &self.g * c,
        }
    }
}

/// Solves `A z = b` where entries of `A` and `b` are [`Jet1`] values, by
/// Gaussian elimination with partial pivoting on the value part.
///
/// Returns `None` if a pivot value vanishes (singular value-part).
pub fn solve_jet1(a: &[Vec<Jet1>], b: &[Jet1]) -> Option<Vec<Jet1>> {
    let n = b.len();
    let mut m: Vec<Vec<Jet1>> = a.to_vec();
    let mut rhs: Vec<Jet1> = b.to_vec();
    for col in 0..n {
        let (piv, piv_abs) = (col..n)
            .map(|r| (r, m[r][col].v.abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if piv_abs <= 0.0 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in (col + 1)..n {
            let factor = m[r][col].div(&m[col][col]);
            for c in (col + 1)..n {
                let t = factor.mul(&m[col][c]);
                m[r][c] = m[r][c].sub(&t);
            }
            let t = factor.mul(&rhs[col]);
            rhs[r] = rhs[r].sub(&t);
        }
    }
    let d = rhs[0].g.len();
    let mut z = vec![Jet1::constant(d, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row].clone();
        for (c, zc) in z.iter().enumerate().take(n).skip(row + 1) {
            let t = m[row][c].mul(zc);
            acc = acc.sub(&t);
        }
        z[row] = acc.div(&m[row][row]);
    }
    Some(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn jet1_solve_differentiates_inverse() {
        // A(t) = [[2+t, 0], [0, 1]], b = (1, 1):
        // z = A^-1 b = (1/(2+t), 1); dz1/dt at t=0 = -1/4.
        let d = 1;
        let a = vec![
            vec![
                Jet1::new(2.0, DVector::from_element(d, 1.0)),
                Jet1::constant(d, 0.0),
            ],
            vec![Jet1::constant(d, 0.0), Jet1::constant(d, 1.0)],
        ];
        let b = vec![Jet1::constant(d, 1.0), Jet1::constant(d, 1.0)];
        let z = solve_jet1(&a, &b).unwrap();
        assert!((z[0].v - 0.5).abs() < 1e-15);
        assert!((z[0].g[0] + 0.25).abs() < 1e-15);
        assert!((z[1].v - 1.0).abs() < 1e-15);
        assert!(z[1].g[0].abs() < 1e-15);
    }

    #[test]
    fn eigen_and_norms() {
        let a = dmatrix![2.0, 0.0; 0.0, 0.5];
        assert!((min_eigenvalue_sym(&a) - 0.5).abs() < 1e-14);
        assert!((operator_norm(&a) - 2.0).abs() < 1e-12);
        assert!((frobenius(&a) - (4.25f64).sqrt()).abs() < 1e-14);
    }
}
