//! Batch CLI: JSON scenarios in, CSV/JSON reports out.
//!
//! Exit codes: 0 success, 2 validation error, 3 numerical failure
//! (caustic, non-convergence). Failures emit a machine-readable JSON
//! document on stderr.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use tonelli::scenario::{self, Scenario};
use tonelli::verify;

#[derive(Parser)]
#[command(
    name = "tonelli",
    version,
    about = "Generalized curvature, Euler-Lagrange flows and displacement convexity for Tonelli Lagrangians"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and write its artifacts.
    Run {
        /// Path to the scenario JSON.
        file: PathBuf,
    },
    /// Run a named verification suite (or all of them).
    Verify {
        /// One of: flat, curvature, coords, riccati, bochner, hessian,
        /// continuity, perturb, entropy, determinism, all.
        #[arg(default_value = "all")]
        suite: String,
        /// Seed for the randomized samples inside the suites.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the scenario JSON schema.
    Schema,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { file } => cmd_run(&file),
        Command::Verify { suite, seed } => cmd_verify(&suite, seed),
        Command::Schema => {
            println!(
                "{}",
                serde_json::to_string_pretty(&scenario::schema_json()).unwrap()
            );
            0
        }
    };
    std::process::exit(code);
}

fn cmd_run(file: &PathBuf) -> i32 {
    let s = match Scenario::from_file(file) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let out = match scenario::run(&s) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    if let Err(e) = scenario::write_artifacts(&out) {
        return fail(e);
    }
    for a in &out.artifacts {
        eprintln!("wrote {}", a.path.display());
    }
    println!("{}", serde_json::to_string_pretty(&out.summary).unwrap());
    0
}

fn fail(e: scenario::ScenarioError) -> i32 {
    eprintln!("{}", e.to_json());
    e.exit_code()
}

fn cmd_verify(suite: &str, seed: u64) -> i32 {
    let checks = match verify::run_suites(suite, seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", serde_json::json!({"error": "verify", "message": e.to_string()}));
            return 2;
        }
    };
    let mut failed = 0usize;
    for c in &checks {
        println!(
            "[{}] {:<12} {:<64} residual {:>12.4e}  tol {:>9.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.residual,
            c.tolerance
        );
        if !c.passed {
            failed += 1;
        }
    }
    println!(
        "{} checks, {} passed, {} failed",
        checks.len(),
        checks.len() - failed,
        failed
    );
    if failed == 0 {
        0
    } else {
        1
    }
}
