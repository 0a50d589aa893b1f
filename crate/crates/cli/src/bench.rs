//! Strategy comparison: boundary-aware subdivision vs the uniform
//! branch-and-bound baseline under identical thresholds, caps, and seed.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use probhull::engine::{verify, Strategy};

use crate::config::{load_problem, RunConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: String,
    pub l_s: Option<f64>,
    pub u_s: Option<f64>,
    pub gap: Option<f64>,
    pub verifier_calls: Option<u64>,
    pub wall_time_s: Option<f64>,
    pub exit_reason: Option<String>,
    pub error: Option<String>,
}

pub const BENCH_STRATEGIES: [(Strategy, &str); 2] = [
    (Strategy::BoundaryAware, "boundary_aware"),
    (Strategy::UniformBab, "uniform_bab"),
];

/// One row per strategy, in fixed order. Per-strategy cap exits and errors
/// are recorded in the row, never fatal.
pub fn run_bench(base: &RunConfig, time_cap_s: Option<f64>) -> Vec<BenchRow> {
    BENCH_STRATEGIES
        .iter()
        .map(|(strategy, name)| {
            let mut cfg = base.clone();
            cfg.strategy = *strategy;
            if time_cap_s.is_some() {
                cfg.time_cap_s = time_cap_s;
            }
            let mut row = BenchRow {
                strategy: (*name).to_string(),
                l_s: None,
                u_s: None,
                gap: None,
                verifier_calls: None,
                wall_time_s: None,
                exit_reason: None,
                error: None,
            };
            let start = Instant::now();
            match load_problem(&cfg)
                .and_then(|p| Ok(verify(&p.net, &p.spec, &p.gauss, &cfg.engine_config())?))
            {
                Ok(res) => {
                    row.l_s = Some(res.l_s);
                    row.u_s = Some(res.u_s);
                    row.gap = Some(res.gap());
                    row.verifier_calls = Some(res.stats.verifier_calls);
                    row.wall_time_s = Some(start.elapsed().as_secs_f64());
                    row.exit_reason = Some(
                        serde_json::to_value(res.stats.exit)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default(),
                    );
                }
                Err(e) => {
                    row.wall_time_s = Some(start.elapsed().as_secs_f64());
                    row.error = Some(format!("{e:#}"));
                }
            }
            row
        })
        .collect()
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
