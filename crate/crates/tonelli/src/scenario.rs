//! JSON scenario front-end: parse, validate, dispatch, write reports.
//!
//! A scenario file fully determines a batch run: the Lagrangian (with any
//! closed-form expressions for metric entries, potentials and the velocity
//! perturbation), the task, numeric parameters and output destination.
//! Runs are deterministic: the only randomness is seeded from the file.
//!
//! CSV output uses full-precision scientific notation (17 significant
//! digits), comma separators, a header row and LF line endings, so repeat
//! runs diff byte-identically.

use crate::curvature::{self, CurvatureError};
use crate::entropy::{self, EntropyError, EntropySpec};
use crate::expr::Expr;
use crate::field::VectorFieldSpec;
use crate::flow::{self, FlowError};
use crate::lagrangian::{LagrangianError, LagrangianModel, MetricMap, Potential};
use crate::perturbation::{self, PerturbationError, PerturbationScenario, PhiSpec};
use crate::transport::{self, TransportError};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Scenario processing failure, split by exit status: validation problems
/// exit 2, numerical failures exit 3.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ScenarioError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Validation { .. } => 2,
            ScenarioError::Numerical(_) => 3,
            ScenarioError::Io { .. } => 2,
        }
    }

    /// Machine-readable error document for the stderr channel.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ScenarioError::Validation { field, message } => serde_json::json!({
                "error": "validation", "field": field, "message": message,
            }),
            ScenarioError::Numerical(m) => serde_json::json!({
                "error": "numerical", "message": m,
            }),
            ScenarioError::Io { path, source } => serde_json::json!({
                "error": "io", "path": path.display().to_string(),
                "message": source.to_string(),
            }),
        }
    }
}

macro_rules! numerical_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ScenarioError {
            fn from(e: $t) -> Self {
                ScenarioError::Numerical(e.to_string())
            }
        }
    )*};
}
numerical_from!(
    LagrangianError,
    FlowError,
    CurvatureError,
    TransportError,
    EntropyError,
    PerturbationError
);

// ============================================================================
// Schema
// ============================================================================

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub lagrangian: LagrangianSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub u0: Option<String>,
    #[serde(default)]
    pub rho0: Option<Rho0Spec>,
    pub numeric: NumericSpec,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSpec {
    pub kind: String,
    pub dim: usize,
    #[serde(default)]
    pub metric: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub potential: Option<String>,
    #[serde(default)]
    pub phi: Option<String>,
    #[serde(default)]
    pub expr: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Flow {
        x0: Vec<f64>,
        v0: Vec<f64>,
    },
    Cost {
        x: Vec<f64>,
        y: Vec<f64>,
    },
    Curvature {
        potentials: Vec<String>,
        points: Vec<Vec<f64>>,
    },
    Interpolant,
    Hessian {
        entropy: EntropyKind,
    },
    Perturb {
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Verify {
        #[serde(default = "default_suite")]
        suite: String,
    },
}

fn default_beta() -> f64 {
    1.0
}

fn default_suite() -> String {
    "all".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum EntropyKind {
    Named(String),
    Power { power: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rho0Spec {
    pub radius: f64,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericSpec {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub steps: usize,
    #[serde(default = "default_particles")]
    pub particles_per_axis: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub box_lo: Option<Vec<f64>>,
    #[serde(default)]
    pub box_hi: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    pub samples_per_axis: usize,
}

fn default_particles() -> usize {
    41
}

fn default_tol() -> f64 {
    1e-10
}

fn default_fd_step() -> f64 {
    1e-2
}

fn default_samples() -> usize {
    9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub prefix: String,
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "csv".into()
}

/// The JSON schema document served by the `schema` subcommand.
pub fn schema_json() -> serde_json::Value {
    serde_json::json!({
        "$schema": "http://json-schema.org/draft-07/schema#",
        "title": "tonelli scenario",
        "type": "object",
        "required": ["schema_version", "lagrangian", "task", "numeric", "output"],
        "properties": {
            "schema_version": {"const": 1},
            "seed": {"type": "integer", "minimum": 0},
            "lagrangian": {
                "type": "object",
                "required": ["kind", "dim"],
                "properties": {
                    "kind": {"enum": ["euclidean", "riemannian", "mechanical",
                                       "perturbed_riemannian", "custom"]},
                    "dim": {"type": "integer", "minimum": 1, "maximum": 4},
                    "metric": {"type": "array", "items": {"type": "array",
                        "items": {"type": "string"}},
                        "description": "d x d expressions in x1..xd"},
                    "potential": {"type": "string"},
                    "phi": {"type": "string", "description": "expression in v1..vd"},
                    "expr": {"type": "string", "description": "expression in x1..xd,v1..vd"}
                }
            },
            "task": {
                "type": "object",
                "required": ["type"],
                "properties": {
                    "type": {"enum": ["flow", "cost", "curvature", "interpolant",
                                       "hessian", "perturb", "verify"]},
                    "x0": {"type": "array", "items": {"type": "number"}},
                    "v0": {"type": "array", "items": {"type": "number"}},
                    "x": {"type": "array", "items": {"type": "number"}},
                    "y": {"type": "array", "items": {"type": "number"}},
                    "potentials": {"type": "array", "items": {"type": "string"}},
                    "points": {"type": "array", "items": {"type": "array",
                        "items": {"type": "number"}}},
                    "entropy": {"oneOf": [
                        {"enum": ["boltzmann", "quadratic"]},
                        {"type": "object", "properties": {"power": {"type": "number"}}}
                    ]},
                    "alpha": {"type": "number"},
                    "beta": {"type": "number"},
                    "suite": {"type": "string"}
                }
            },
            "u0": {"type": "string", "description": "potential expression in x1..xd"},
            "rho0": {
                "type": "object",
                "required": ["radius", "center"],
                "properties": {
                    "radius": {"type": "number", "exclusiveMinimum": 0},
                    "center": {"type": "array", "items": {"type": "number"}}
                }
            },
            "numeric": {
                "type": "object",
                "required": ["T", "steps"],
                "properties": {
                    "T": {"type": "number", "exclusiveMinimum": 0},
                    "steps": {"type": "integer", "minimum": 1},
                    "particles_per_axis": {"type": "integer", "minimum": 3},
                    "tol": {"type": "number", "exclusiveMinimum": 0},
                    "fd_step": {"type": "number", "exclusiveMinimum": 0},
                    "box_lo": {"type": "array", "items": {"type": "number"}},
                    "box_hi": {"type": "array", "items": {"type": "number"}},
                    "samples_per_axis": {"type": "integer", "minimum": 2}
                }
            },
            "output": {
                "type": "object",
                "required": ["prefix"],
                "properties": {
                    "prefix": {"type": "string"},
                    "format": {"enum": ["csv", "json"]}
                }
            }
        }
    })
}

// ============================================================================
// Validation and construction
// ============================================================================

fn x_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

fn v_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("v{i}")).collect()
}

fn parse_expr(src: &str, names: &[String], field: &str) -> Result<Expr, ScenarioError> {
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    Expr::parse(src, &refs).map_err(|e| ScenarioError::validation(field, e.to_string()))
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::validation("(document)", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Scenario::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != 1 {
            return Err(ScenarioError::validation(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        let d = self.lagrangian.dim;
        if d == 0 || d > 4 {
            return Err(ScenarioError::validation(
                "lagrangian.dim",
                "dim must be in 1..=4",
            ));
        }
        if self.numeric.t_final <= 0.0 {
            return Err(ScenarioError::validation("numeric.T", "T must be positive"));
        }
        if self.numeric.steps == 0 {
            return Err(ScenarioError::validation(
                "numeric.steps",
                "steps must be >= 1",
            ));
        }
        if self.numeric.tol <= 0.0 {
            return Err(ScenarioError::validation(
                "numeric.tol",
                "tolerance must be positive",
            ));
        }
        if self.numeric.fd_step <= 0.0 {
            return Err(ScenarioError::validation(
                "numeric.fd_step",
                "fd_step must be positive",
            ));
        }
        if self.numeric.particles_per_axis < 3 {
            return Err(ScenarioError::validation(
                "numeric.particles_per_axis",
                "need at least 3 particles per axis",
            ));
        }
        match self.output.format.as_str() {
            "csv" | "json" => {}
            other => {
                return Err(ScenarioError::validation(
                    "output.format",
                    format!("unknown format `{other}`"),
                ))
            }
        }
        // expressions must parse under the primitive grammar
        self.build_lagrangian()?;
        if let Some(u0) = &self.u0 {
            parse_expr(u0, &x_names(d), "u0")?;
        }
        if let Some(r) = &self.rho0 {
            if r.radius <= 0.0 {
                return Err(ScenarioError::validation(
                    "rho0.radius",
                    "radius must be positive",
                ));
            }
            if r.center.len() != d {
                return Err(ScenarioError::validation(
                    "rho0.center",
                    format!("center must have {d} entries"),
                ));
            }
        }
        match &self.task {
            TaskSpec::Flow { x0, v0 } => {
                if x0.len() != d || v0.len() != d {
                    return Err(ScenarioError::validation(
                        "task.x0",
                        format!("x0 and v0 must have {d} entries"),
                    ));
                }
            }
            TaskSpec::Cost { x, y } => {
                if x.len() != d || y.len() != d {
                    return Err(ScenarioError::validation(
                        "task.x",
                        format!("x and y must have {d} entries"),
                    ));
                }
            }
            TaskSpec::Curvature { potentials, points } => {
                for (i, p) in potentials.iter().enumerate() {
                    parse_expr(p, &x_names(d), &format!("task.potentials[{i}]"))?;
                }
                for (i, p) in points.iter().enumerate() {
                    if p.len() != d {
                        return Err(ScenarioError::validation(
                            &format!("task.points[{i}]"),
                            format!("point must have {d} entries"),
                        ));
                    }
                }
                if potentials.is_empty() || points.is_empty() {
                    return Err(ScenarioError::validation(
                        "task.potentials",
                        "need at least one potential and one point",
                    ));
                }
            }
            TaskSpec::Interpolant | TaskSpec::Hessian { .. } => {
                if self.u0.is_none() {
                    return Err(ScenarioError::validation(
                        "u0",
                        "interpolant/hessian tasks need a potential u0",
                    ));
                }
                if self.rho0.is_none() {
                    return Err(ScenarioError::validation(
                        "rho0",
                        "interpolant/hessian tasks need a density rho0",
                    ));
                }
            }
            TaskSpec::Perturb { alpha, beta } => {
                if !alpha.is_finite() || *alpha < 0.0 {
                    return Err(ScenarioError::validation(
                        "task.alpha",
                        "alpha must be non-negative",
                    ));
                }
                if *beta <= 0.0 {
                    return Err(ScenarioError::validation(
                        "task.beta",
                        "beta must be positive",
                    ));
                }
            }
            TaskSpec::Verify { .. } => {}
        }
        Ok(())
    }

    pub fn build_lagrangian(&self) -> Result<LagrangianModel, ScenarioError> {
        let d = self.lagrangian.dim;
        let xs = x_names(d);
        let vs = v_names(d);
        let metric = |field: &str| -> Result<MetricMap, ScenarioError> {
            let rows = self.lagrangian.metric.as_ref().ok_or_else(|| {
                ScenarioError::validation(field, "this kind needs a `metric`")
            })?;
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(ScenarioError::validation(
                    field,
                    format!("metric must be {d}x{d}"),
                ));
            }
            let mut entries = Vec::with_capacity(d * d);
            for (i, row) in rows.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    entries.push(parse_expr(e, &xs, &format!("{field}[{i}][{j}]"))?);
                }
            }
            Ok(MetricMap::from_entries(d, entries))
        };
        match self.lagrangian.kind.as_str() {
            "euclidean" => Ok(LagrangianModel::euclidean(d)),
            "riemannian" => Ok(LagrangianModel::riemannian(metric("lagrangian.metric")?)),
            "mechanical" => {
                let u = self.lagrangian.potential.as_ref().ok_or_else(|| {
                    ScenarioError::validation("lagrangian.potential", "mechanical needs potential")
                })?;
                let u = Potential::new(d, parse_expr(u, &xs, "lagrangian.potential")?);
                Ok(LagrangianModel::mechanical(metric("lagrangian.metric")?, u))
            }
            "perturbed_riemannian" => {
                let phi = self.lagrangian.phi.as_ref().ok_or_else(|| {
                    ScenarioError::validation("lagrangian.phi", "perturbed kind needs phi")
                })?;
                let phi = Potential::new(d, parse_expr(phi, &vs, "lagrangian.phi")?);
                Ok(LagrangianModel::perturbed_riemannian(
                    metric("lagrangian.metric")?,
                    phi,
                ))
            }
            "custom" => {
                let e = self.lagrangian.expr.as_ref().ok_or_else(|| {
                    ScenarioError::validation("lagrangian.expr", "custom kind needs expr")
                })?;
                let names: Vec<String> = xs.iter().chain(vs.iter()).cloned().collect();
                Ok(LagrangianModel::custom(
                    d,
                    parse_expr(e, &names, "lagrangian.expr")?,
                ))
            }
            other => Err(ScenarioError::validation(
                "lagrangian.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }

    fn build_u0(&self) -> Result<Potential, ScenarioError> {
        let d = self.lagrangian.dim;
        let src = self
            .u0
            .as_ref()
            .ok_or_else(|| ScenarioError::validation("u0", "missing potential"))?;
        Ok(Potential::new(d, parse_expr(src, &x_names(d), "u0")?))
    }

    fn build_rho0(&self) -> Result<transport::BumpDensity, ScenarioError> {
        let d = self.lagrangian.dim;
        let r = self
            .rho0
            .as_ref()
            .ok_or_else(|| ScenarioError::validation("rho0", "missing density"))?;
        Ok(transport::BumpDensity::normalized(
            d,
            r.radius,
            DVector::from_vec(r.center.clone()),
        ))
    }

    fn build_entropy(kind: &EntropyKind) -> Result<EntropySpec, ScenarioError> {
        match kind {
            EntropyKind::Named(n) => match n.as_str() {
                "boltzmann" => Ok(EntropySpec::Boltzmann),
                "quadratic" => Ok(EntropySpec::Quadratic),
                other => Err(ScenarioError::validation(
                    "task.entropy",
                    format!("unknown entropy `{other}`"),
                )),
            },
            EntropyKind::Power { power } => {
                if *power <= 1.0 {
                    return Err(ScenarioError::validation(
                        "task.entropy.power",
                        "power entropies need m > 1",
                    ));
                }
                Ok(EntropySpec::Power(*power))
            }
        }
    }
}

// ============================================================================
// Execution
// ============================================================================

/// One produced artifact: destination path plus content.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub path: PathBuf,
    pub content: String,
}

/// Outcome of a scenario run: artifacts to be written plus a JSON summary.
#[derive(Debug)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    pub summary: serde_json::Value,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt17(*v)).collect::<Vec<_>>().join(",")
}

/// Executes the scenario and returns the artifacts (not yet written).
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let l = scenario.build_lagrangian()?;
    let d = scenario.lagrangian.dim;
    let n = &scenario.numeric;
    let prefix = &scenario.output.prefix;

    match &scenario.task {
        TaskSpec::Flow { x0, v0 } => {
            let traj = flow::lagrangian_flow(
                &l,
                &DVector::from_vec(x0.clone()),
                &DVector::from_vec(v0.clone()),
                n.t_final,
                n.steps,
            )?;
            let csv = trajectory_csv(&traj, d);
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_flow.csv")),
                    content: csv,
                }],
                summary: serde_json::json!({
                    "task": "flow",
                    "energy_drift": flow_drift(&traj),
                    "nodes": traj.times.len(),
                }),
            })
        }
        TaskSpec::Cost { x, y } => {
            let result = flow::cost(
                &l,
                &DVector::from_vec(x.clone()),
                &DVector::from_vec(y.clone()),
                n.t_final,
                n.tol,
            )?;
            let csv = trajectory_csv(&result.trajectory, d);
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_cost.csv")),
                    content: csv,
                }],
                summary: serde_json::json!({
                    "task": "cost",
                    "cost": result.cost,
                    "v0": result.v0.iter().cloned().collect::<Vec<f64>>(),
                    "endpoint_residual": result.endpoint_residual,
                    "branches": result.branches,
                }),
            })
        }
        TaskSpec::Curvature { potentials, points } => {
            let mut csv = String::new();
            let mut header = vec![
                "point_id".to_string(),
                "field_id".to_string(),
                "k_def".to_string(),
                "k_div".to_string(),
                "k_indexed".to_string(),
                "residual_div".to_string(),
                "residual_indexed".to_string(),
            ];
            header.extend(curvature::TERM_NAMES.iter().map(|s| s.to_string()));
            writeln!(csv, "{}", header.join(",")).unwrap();
            let mut worst: f64 = 0.0;
            for (pi, pot) in potentials.iter().enumerate() {
                let u = Potential::new(d, parse_expr(pot, &x_names(d), "task.potentials")?);
                let field = VectorFieldSpec::gradient(u.clone(), l.clone());
                for (xi, pt) in points.iter().enumerate() {
                    let x = DVector::from_vec(pt.clone());
                    let k_def = curvature::curvature_def(&l, &field, &x)?;
                    let k_div = curvature::curvature_divergence(&l, &field, &x)?;
                    let (k_idx, terms) = curvature::curvature_indexed(&l, &u, &x)?;
                    let r1 = (k_def - k_div).abs();
                    let r2 = (k_def - k_idx).abs();
                    worst = worst.max(r1).max(r2);
                    let mut row = vec![xi as f64, pi as f64, k_def, k_div, k_idx, r1, r2];
                    row.extend_from_slice(&terms.groups);
                    writeln!(csv, "{}", csv_row(&row)).unwrap();
                }
            }
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_curvature.csv")),
                    content: csv,
                }],
                summary: serde_json::json!({
                    "task": "curvature",
                    "max_cross_residual": worst,
                    "rows": potentials.len() * points.len(),
                }),
            })
        }
        TaskSpec::Interpolant => {
            let interp = transport::build_interpolant(
                &l,
                &scenario.build_u0()?,
                &scenario.build_rho0()?,
                n.t_final,
                n.particles_per_axis,
                n.steps,
            )?;
            let mut csv = String::from("t,particle,");
            csv.push_str(
                &(1..=d)
                    .map(|i| format!("x{i}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            csv.push_str(",det_jacobian,rho\n");
            let times = interp.times().to_vec();
            let stride = (times.len() / 16).max(1);
            for (node, &t) in times.iter().enumerate() {
                if node % stride != 0 && node != times.len() - 1 {
                    continue;
                }
                for p in 0..interp.n_particles() {
                    let (x, _) = &interp.trajectories[p].states[node];
                    let det = interp.trajectories[p].det_jacobian(node).unwrap();
                    let rho = interp.density_at_node(p, node);
                    let mut row = vec![t, p as f64];
                    row.extend(x.iter().cloned());
                    row.push(det);
                    row.push(rho);
                    writeln!(csv, "{}", csv_row(&row)).unwrap();
                }
            }
            let mass_worst = (0..times.len())
                .step_by(stride)
                .map(|k| interp.mass_check(k))
                .fold(0.0f64, f64::max);
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_interpolant.csv")),
                    content: csv,
                }],
                summary: serde_json::json!({
                    "task": "interpolant",
                    "particles": interp.n_particles(),
                    "worst_mass_defect": mass_worst,
                }),
            })
        }
        TaskSpec::Hessian { entropy } => {
            let spec = Scenario::build_entropy(entropy)?;
            entropy::validate_entropy(&spec)?;
            let interp = transport::build_interpolant(
                &l,
                &scenario.build_u0()?,
                &scenario.build_rho0()?,
                n.t_final,
                n.particles_per_axis,
                n.steps,
            )?;
            let mut csv =
                String::from("t,entropy,hessian_formula,hessian_fd,min_pointwise_curvature\n");
            let times = interp.times().to_vec();
            let stride = (times.len() / 8).max(1);
            let mut rows = 0;
            for (node, &t) in times.iter().enumerate() {
                if node % stride != 0 && node != times.len() - 1 {
                    continue;
                }
                let f_val = entropy::entropy_value_at_node(&spec, &interp, node)?;
                let formula = entropy::displacement_hessian(&spec, &interp, t)?;
                let fd = entropy::hessian_fd_oracle(&spec, &interp, t, n.fd_step)?;
                let min_k = min_pointwise_curvature(&interp, node)?;
                writeln!(csv, "{}", csv_row(&[t, f_val, formula, fd, min_k])).unwrap();
                rows += 1;
            }
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_hessian.csv")),
                    content: csv,
                }],
                summary: serde_json::json!({
                    "task": "hessian",
                    "entropy": spec.name(),
                    "rows": rows,
                }),
            })
        }
        TaskSpec::Perturb { alpha, beta } => {
            let g = match l.metric() {
                Some(g) => g.clone(),
                None => {
                    return Err(ScenarioError::validation(
                        "lagrangian.kind",
                        "perturb task needs a metric-based Lagrangian",
                    ))
                }
            };
            let box_lo = n
                .box_lo
                .clone()
                .unwrap_or_else(|| vec![-1.0; d]);
            let box_hi = n
                .box_hi
                .clone()
                .unwrap_or_else(|| vec![1.0; d]);
            if box_lo.len() != d || box_hi.len() != d {
                return Err(ScenarioError::validation(
                    "numeric.box_lo",
                    format!("box bounds must have {d} entries"),
                ));
            }
            let mut sc = PerturbationScenario {
                dim: d,
                g,
                phi: PhiSpec {
                    alpha: *alpha,
                    beta: *beta,
                },
                box_lo: DVector::from_vec(box_lo),
                box_hi: DVector::from_vec(box_hi),
                velocity_box: 2.0,
                field_bank: perturbation::default_field_bank(d, scenario.seed),
                c_g: 0.0,
                k_g: 0.0,
                eps: 0.0,
            };
            let bounds = perturbation::estimate_bounds(&sc, n.samples_per_axis)?;
            if bounds.k_g <= 0.0 {
                let report = serde_json::json!({
                    "task": "perturb",
                    "status": "rejected",
                    "c_raw": bounds.c_raw,
                    "c_g": bounds.c_g,
                    "k_g": bounds.k_g,
                    "k_raw_covariant": bounds.k_raw_covariant,
                    "k_raw_euclidean": bounds.k_raw_euclidean,
                    "note": "no positive Bakry-Emery-type bound on the box",
                });
                return Ok(RunOutput {
                    artifacts: vec![Artifact {
                        path: PathBuf::from(format!("{prefix}_perturb.json")),
                        content: serde_json::to_string_pretty(&report).unwrap() + "\n",
                    }],
                    summary: report,
                });
            }
            sc.c_g = bounds.c_g;
            sc.k_g = bounds.k_g;
            sc.eps = perturbation::perturbation_budget(bounds.c_g, bounds.k_g)?;
            let phi_rep = perturbation::phi_budget_check(&sc, sc.eps, n.samples_per_axis)?;
            let nonneg = perturbation::perturbed_nonneg_check(&sc, n.samples_per_axis)?;
            let report = serde_json::json!({
                "task": "perturb",
                "status": "certified",
                "norms": {"grad_xi": "frobenius", "xi": "euclidean"},
                "box_restricted": true,
                "c_raw": bounds.c_raw,
                "c_g": bounds.c_g,
                "k_g": bounds.k_g,
                "k_raw_covariant": bounds.k_raw_covariant,
                "k_raw_euclidean": bounds.k_raw_euclidean,
                "epsilon": sc.eps,
                "phi": {"alpha": sc.phi.alpha, "beta": sc.phi.beta,
                         "hess_norm": phi_rep.hess_norm, "third_norm": phi_rep.third_norm},
                "ledger_margins": phi_rep.worst_margins.to_vec(),
                "ledger_summed_margin": phi_rep.worst_summed_margin,
                "ledger_violated": phi_rep.violated,
                "vi_vii_gap": phi_rep.vi_vii_gap,
                "min_curvature_perturbed": nonneg.min_curvature_perturbed,
                "min_curvature_unperturbed": nonneg.min_curvature_unperturbed,
                "chain_violation": nonneg.chain_violation,
                "pairs": nonneg.pairs,
            });
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_perturb.json")),
                    content: serde_json::to_string_pretty(&report).unwrap() + "\n",
                }],
                summary: report,
            })
        }
        TaskSpec::Verify { suite } => {
            let checks = crate::verify::run_suites(suite, scenario.seed)
                .map_err(|e| ScenarioError::Numerical(e.to_string()))?;
            let all_pass = checks.iter().all(|c| c.passed);
            let summary = serde_json::json!({
                "task": "verify",
                "suite": suite,
                "checks": checks.iter().map(|c| serde_json::json!({
                    "suite": c.suite, "name": c.name,
                    "residual": c.residual, "tolerance": c.tolerance,
                    "passed": c.passed,
                })).collect::<Vec<_>>(),
                "all_passed": all_pass,
            });
            if !all_pass {
                return Err(ScenarioError::Numerical(format!(
                    "verification failed: {}",
                    checks
                        .iter()
                        .filter(|c| !c.passed)
                        .map(|c| c.name.clone())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
            Ok(RunOutput {
                artifacts: vec![Artifact {
                    path: PathBuf::from(format!("{prefix}_verify.json")),
                    content: serde_json::to_string_pretty(&summary).unwrap() + "\n",
                }],
                summary,
            })
        }
    }
}

fn flow_drift(traj: &flow::Trajectory) -> f64 {
    traj.energy_drift()
}

fn trajectory_csv(traj: &flow::Trajectory, d: usize) -> String {
    let mut csv = String::from("t,");
    csv.push_str(
        &(1..=d)
            .map(|i| format!("x{i}"))
            .chain((1..=d).map(|i| format!("v{i}")))
            .collect::<Vec<_>>()
            .join(","),
    );
    csv.push_str(",H,det_jacobian\n");
    for k in 0..traj.times.len() {
        let (x, v) = &traj.states[k];
        let mut row = vec![traj.times[k]];
        row.extend(x.iter().cloned());
        row.extend(v.iter().cloned());
        row.push(traj.hamiltonian[k]);
        row.push(traj.det_jacobian(k).unwrap_or(1.0));
        writeln!(csv, "{}", csv_row(&row)).unwrap();
    }
    csv
}

fn min_pointwise_curvature(
    interp: &transport::DisplacementInterpolant,
    node: usize,
) -> Result<f64, ScenarioError> {
    let mut min_k = f64::INFINITY;
    for p in 0..interp.n_particles() {
        let (x, v) = &interp.trajectories[p].states[node];
        let (j, jd) = &interp.trajectories[p].jacobian.as_ref().unwrap()[node];
        let u = jd * j
            .clone()
            .try_inverse()
            .ok_or_else(|| ScenarioError::Numerical("caustic in curvature scan".into()))?;
        let b = interp.lagrangian.derivatives(x, v)?;
        let accel = b.el_acceleration()?;
        let (a, bb) = curvature::ab_from_bundle(&b, &accel)?;
        min_k = min_k.min((&u * &u + a * &u + bb).trace());
    }
    Ok(min_k)
}

/// Writes artifacts to disk (creating parent directories).
pub fn write_artifacts(out: &RunOutput) -> Result<(), ScenarioError> {
    for a in &out.artifacts {
        if let Some(parent) = a.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| ScenarioError::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
        }
        std::fs::write(&a.path, a.content.as_bytes()).map_err(|e| ScenarioError::Io {
            path: a.path.clone(),
            source: e,
        })?;
    }
    Ok(())
}
