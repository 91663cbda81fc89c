//! Evaluates the generalized curvature of a conformal metric by all three
//! routes at a sample point and prints the agreement.

use nalgebra::dvector;
use tonelli::curvature::{curvature_def, curvature_divergence, curvature_indexed, TERM_NAMES};
use tonelli::{Expr, LagrangianModel, MetricMap, Potential, VectorFieldSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let lambda = Expr::parse("0.1*sin(x1) + 0.07*x2^2", &["x1", "x2"])?;
    let lagrangian = LagrangianModel::riemannian(MetricMap::conformal(2, lambda));
    let u = Potential::new(
        2,
        Expr::parse("0.5*(x1^2 + x2^2) + 0.2*sin(x1)", &["x1", "x2"])?,
    );
    let field = VectorFieldSpec::gradient(u.clone(), lagrangian.clone());
    let x = dvector![0.3, -0.4];

    let k_def = curvature_def(&lagrangian, &field, &x)?;
    let k_div = curvature_divergence(&lagrangian, &field, &x)?;
    let (k_idx, terms) = curvature_indexed(&lagrangian, &u, &x)?;

    println!("trace definition   K = {k_def:+.15}");
    println!("divergence route   K = {k_div:+.15}");
    println!("index formula      K = {k_idx:+.15}");
    println!();
    for (name, value) in TERM_NAMES.iter().zip(terms.groups.iter()) {
        println!("  {name:<10} {value:+.6e}");
    }
    println!();
    println!(
        "max residual {:.3e}",
        (k_def - k_div).abs().max((k_def - k_idx).abs())
    );
    Ok(())
}
