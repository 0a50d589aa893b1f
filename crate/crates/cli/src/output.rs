//! Result file schema and serialization.
//!
//! Every verify run emits one JSON document with the bounds, run statistics,
//! per-iteration trace, the fully resolved configuration, and (opt-in) the
//! hull geometry. Field order is fixed by the struct definitions, and floats
//! are written in shortest round-trip form, so output is byte-deterministic
//! for a deterministic run modulo the wall-time field.

use serde::{Deserialize, Serialize};

use probhull::bounds::Status;
use probhull::engine::{ExitReason, Hull, IterationRecord, VerificationResult};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultJson {
    pub l_s: f64,
    pub u_s: f64,
    pub gap: f64,
    pub hull_counts: HullCounts,
    pub stats: StatsJson,
    pub config: RunConfig,
    pub trace: Vec<IterationRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hulls: Option<HullsJson>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HullCounts {
    pub safe: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_count: usize,
    pub unknown: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsJson {
    pub iterations: u64,
    pub verifier_calls: u64,
    pub wall_time_s: f64,
    pub delta_tail: f64,
    pub k_sigma: f64,
    pub exit_reason: ExitReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HullsJson {
    pub safe: Vec<HullJson>,
    #[serde(rename = "unsafe")]
    pub unsafe_hulls: Vec<HullJson>,
    pub unknown: Vec<HullJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HullJson {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub probability: f64,
}

impl HullJson {
    fn from_hull(h: &Hull) -> Self {
        Self {
            lower: h.region.lower().iter().cloned().collect(),
            upper: h.region.upper().iter().cloned().collect(),
            probability: h.probability,
        }
    }

    pub fn status_partition(hulls: &HullsJson) -> impl Iterator<Item = (Status, &HullJson)> {
        hulls
            .safe
            .iter()
            .map(|h| (Status::Safe, h))
            .chain(hulls.unsafe_hulls.iter().map(|h| (Status::Unsafe, h)))
            .chain(hulls.unknown.iter().map(|h| (Status::Unknown, h)))
    }
}

pub fn result_json(res: &VerificationResult, cfg: &RunConfig) -> ResultJson {
    ResultJson {
        l_s: res.l_s,
        u_s: res.u_s,
        gap: res.gap(),
        hull_counts: HullCounts {
            safe: res.hulls.safe.len(),
            unsafe_count: res.hulls.unsafe_hulls.len(),
            unknown: res.hulls.unknown.len(),
        },
        stats: StatsJson {
            iterations: res.stats.iterations,
            verifier_calls: res.stats.verifier_calls,
            wall_time_s: res.stats.wall_time_s,
            delta_tail: res.stats.delta_tail,
            k_sigma: res.stats.k_sigma,
            exit_reason: res.stats.exit,
        },
        config: cfg.clone(),
        trace: res.trace.clone(),
        hulls: cfg.emit_hulls.then(|| HullsJson {
            safe: res.hulls.safe.iter().map(HullJson::from_hull).collect(),
            unsafe_hulls: res
                .hulls
                .unsafe_hulls
                .iter()
                .map(HullJson::from_hull)
                .collect(),
            unknown: res.hulls.unknown.iter().map(HullJson::from_hull).collect(),
        }),
    }
}

pub fn to_json_string(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("result serializes");
    s.push('\n');
    s
}

/// Write to the configured path, or stdout when none is set.
pub fn emit(out: Option<&str>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = std::path::Path::new(path).parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, content)?;
        }
        None => print!("{content}"),
    }
    Ok(())
}
