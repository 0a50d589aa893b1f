//! Command implementations behind the `probhull` binary. Everything the
//! binary does is reachable from here so integration tests can drive the
//! exact same code paths.

pub mod bench;
pub mod config;
pub mod grid;
pub mod output;
pub mod plot;

use serde::Serialize;

use probhull::engine::{mc_oracle, verify, OracleEstimate, VerificationResult};

use config::{load_problem, RunConfig};
use output::{result_json, to_json_string, ResultJson};

/// Exit code for configuration, parse, and I/O problems.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code when verification stopped on an iteration or wall-clock cap.
pub const EXIT_CAP: i32 = 3;

#[derive(Debug)]
pub struct VerifyOutcome {
    pub result: VerificationResult,
    pub report: ResultJson,
    pub json: String,
    pub cap_exit: bool,
}

/// Run a full verification from a resolved configuration.
pub fn execute_verify(cfg: &RunConfig) -> anyhow::Result<VerifyOutcome> {
    let problem = load_problem(cfg)?;
    let result = verify(
        &problem.net,
        &problem.spec,
        &problem.gauss,
        &cfg.engine_config(),
    )?;
    let report = result_json(&result, cfg);
    let json = to_json_string(&report);
    let cap_exit = result.stats.exit.is_cap();
    Ok(VerifyOutcome {
        result,
        report,
        json,
        cap_exit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub oracle: OracleEstimate,
    pub config: RunConfig,
}

/// Monte-Carlo estimate of the safe probability with a Wilson interval.
pub fn execute_oracle(cfg: &RunConfig, n: usize, confidence: f64) -> anyhow::Result<OracleReport> {
    let problem = load_problem(cfg)?;
    let oracle = mc_oracle(&problem.net, &problem.spec, &problem.gauss, n, confidence)?;
    Ok(OracleReport {
        oracle,
        config: cfg.clone(),
    })
}
