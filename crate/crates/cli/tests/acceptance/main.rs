//! Acceptance checks for the pipeline. Prints one PASS/FAIL line per
//! criterion and exits non-zero when an unexpected check fails.
//!
//! `ACCEPTANCE=name,name` runs a subset.

mod barycentric;
mod compositing;
mod deformation;
mod determinism;
mod end_to_end;
mod extraction;
mod gradients;
mod guidance;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use meshsplat::math::{quat_to_matrix, Mat3, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
    /// Set when the only failing condition is one analysed in the README.
    /// Still reported as FAIL, but it does not fail the run.
    pub known_shortfall: bool,
}

impl Outcome {
    pub fn new(passed: bool, detail: String) -> Self {
        Outcome {
            passed,
            detail,
            known_shortfall: false,
        }
    }
}

/// Budgets are for an 8-core desktop and are stretched by `8 / cores` on
/// smaller machines.
const REFERENCE_CORES: usize = 8;

pub fn random_rigid(rng: &mut ChaCha8Rng) -> (Mat3, Vec3) {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let t = Vec3::new(
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
    );
    (quat_to_matrix(q), t)
}

struct Check {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let checks = [
        Check {
            name: "gradients",
            budget: Duration::from_secs(120),
            run: gradients::run,
        },
        Check {
            name: "compositing",
            budget: Duration::from_secs(60),
            run: compositing::run,
        },
        Check {
            name: "barycentric",
            budget: Duration::from_secs(10),
            run: barycentric::run,
        },
        Check {
            name: "guidance",
            budget: Duration::from_secs(60),
            run: guidance::run,
        },
        Check {
            name: "extraction",
            budget: Duration::from_secs(300),
            run: extraction::run,
        },
        Check {
            name: "end-to-end",
            budget: Duration::from_secs(1800),
            run: end_to_end::run,
        },
        Check {
            name: "deformation",
            budget: Duration::from_secs(60),
            run: deformation::run,
        },
        Check {
            name: "determinism",
            budget: Duration::from_secs(300),
            run: determinism::run,
        },
    ];
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|n| n.trim().to_string()).collect());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let stretch = (REFERENCE_CORES as f64 / cores as f64).max(1.0);
    println!("acceptance on {cores} core(s); time budgets x{stretch:.1}");
    let mut unexpected = 0;
    for c in &checks {
        if only
            .as_ref()
            .is_some_and(|o| !o.iter().any(|n| n == c.name))
        {
            println!("SKIP {:<12}", c.name);
            continue;
        }
        let start = Instant::now();
        let out = (c.run)();
        let took = start.elapsed();
        let budget = c.budget.mul_f64(stretch);
        let in_time = took <= budget;
        let passed = out.passed && in_time;
        let timing = format!("{:.1}s of {:.0}s", took.as_secs_f64(), budget.as_secs_f64());
        let known = !passed && in_time && out.known_shortfall;
        println!(
            "{} {:<12} {} [{timing}]{}",
            if passed { "PASS" } else { "FAIL" },
            c.name,
            out.detail,
            if known {
                " (known shortfall, see README)"
            } else {
                ""
            }
        );
        if !passed && !known {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
