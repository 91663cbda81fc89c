//! Generalized curvature for Tonelli Lagrangians on `R^d`.
//!
//! The crate evaluates the curvature-like quantity
//!
//! ```text
//! K_x(ξ) = tr( ∇ξ(x)² + A(x, ξ(x)) ∇ξ(x) + B(x, ξ(x)) )
//! ```
//!
//! attached to a Tonelli Lagrangian `L(x, v)` by three independent routes
//! (trace definition, divergence identity, index formula), integrates the
//! Euler-Lagrange dynamics together with Jacobian and Riccati companions,
//! builds smooth displacement interpolants from potentials, and verifies
//! the displacement-Hessian formula for generalized entropy functionals
//! against a finite-difference oracle. A perturbation workbench reproduces
//! the non-negativity argument for velocity-perturbed Riemannian kinetic
//! Lagrangians on compact boxes.
//!
//! Modules follow the pipeline:
//!
//! * [`jets`] / [`expr`]: order-3 Taylor arithmetic and the closed-form
//!   expression grammar feeding it.
//! * [`lagrangian`]: Lagrangian families, derivative bundles, the numerical
//!   Legendre transform, Tonelli diagnostics.
//! * [`field`]: explicit and gradient-type vector fields.
//! * [`flow`]: Euler-Lagrange integration, action and two-point cost,
//!   Jacobian/Riccati companion evolution.
//! * [`curvature`]: the `A`/`B` coefficient matrices, the three curvature
//!   routes, the one-sided extension residual, Bakry-Emery comparison.
//! * [`transport`]: displacement interpolants from smooth potentials,
//!   change-of-variables densities, continuity-equation residuals.
//! * [`entropy`]: admissible entropy densities and the displacement Hessian
//!   with its finite-difference oracle.
//! * [`perturbation`]: curvature lower bounds, perturbation budgets and the
//!   non-negativity certification chain.
//! * [`scenario`] / [`verify`]: JSON scenario front-end and the named
//!   verification suites backing the CLI.

pub mod curvature;
pub mod entropy;
pub mod transport;
pub mod expr;
pub mod field;
pub mod flow;
pub mod jets;
pub mod lagrangian;
pub mod linalg;
pub mod perturbation;
pub mod scenario;
pub mod verify;

pub use expr::Expr;
pub use field::VectorFieldSpec;
pub use lagrangian::{LagrangianModel, MetricMap, Potential};
