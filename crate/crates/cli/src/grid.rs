//! Hyperparameter grid search over (sampling weights, tree depth, beta,
//! alpha), with a Pareto flag on the (gap, runtime) front and resume support
//! via completed-row detection in the output CSV.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use probhull::engine::verify;

use crate::config::{load_problem, RunConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub weights: Vec<[f64; 2]>,
    pub depths: Vec<usize>,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Per-cell overrides; the base config's values apply when omitted.
    pub epsilon: Option<f64>,
    pub iter_cap: Option<u64>,
    pub time_cap_s: Option<f64>,
}

impl GridSpec {
    pub fn from_toml_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read grid file {}", path.display()))?;
        let spec: GridSpec = toml::from_str(&text)
            .with_context(|| format!("invalid grid file {}", path.display()))?;
        if spec.weights.is_empty()
            || spec.depths.is_empty()
            || spec.betas.is_empty()
            || spec.alphas.is_empty()
        {
            anyhow::bail!("grid axes must all be non-empty");
        }
        Ok(spec)
    }

    pub fn cell_count(&self) -> usize {
        self.weights.len() * self.depths.len() * self.betas.len() * self.alphas.len()
    }

    /// Cells in deterministic order: weights, then depths, betas, alphas.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::with_capacity(self.cell_count());
        for w in &self.weights {
            for &depth in &self.depths {
                for &beta in &self.betas {
                    for &alpha in &self.alphas {
                        out.push(GridCell {
                            w_uniform: w[0],
                            w_distribution: w[1],
                            depth,
                            beta,
                            alpha,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub w_uniform: f64,
    pub w_distribution: f64,
    pub depth: usize,
    pub beta: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridRow {
    pub w_uniform: f64,
    pub w_distribution: f64,
    pub depth: usize,
    pub beta: f64,
    pub alpha: f64,
    pub l_s: Option<f64>,
    pub u_s: Option<f64>,
    pub gap: Option<f64>,
    pub runtime_s: Option<f64>,
    pub verifier_calls: Option<u64>,
    pub exit_reason: Option<String>,
    pub error: Option<String>,
    pub pareto: bool,
}

impl GridRow {
    fn key(&self) -> String {
        cell_key(
            self.w_uniform,
            self.w_distribution,
            self.depth,
            self.beta,
            self.alpha,
        )
    }
}

fn cell_key(wu: f64, wd: f64, depth: usize, beta: f64, alpha: f64) -> String {
    format!("{wu}|{wd}|{depth}|{beta}|{alpha}")
}

pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub resumed: usize,
}

/// Run every cell (skipping ones already present in the output CSV), compute
/// Pareto flags over the complete set, and rewrite the CSV.
pub fn run_gridsearch(
    grid: &GridSpec,
    base: &RunConfig,
    out_path: &Path,
    parallel_cells: bool,
) -> anyhow::Result<GridOutcome> {
    let cells = grid.cells();
    eprintln!(
        "grid search: {} cells ({} weights x {} depths x {} betas x {} alphas)",
        cells.len(),
        grid.weights.len(),
        grid.depths.len(),
        grid.betas.len(),
        grid.alphas.len()
    );

    let mut completed: Vec<GridRow> = Vec::new();
    if out_path.exists() {
        let mut reader = csv::Reader::from_path(out_path)
            .with_context(|| format!("cannot open existing {}", out_path.display()))?;
        for row in reader.deserialize::<GridRow>() {
            completed.push(row.context("existing grid CSV row")?);
        }
    }
    let done: std::collections::HashSet<String> = completed.iter().map(|r| r.key()).collect();
    let resumed = completed.len();

    let pending: Vec<GridCell> = cells
        .into_iter()
        .filter(|c| {
            !done.contains(&cell_key(
                c.w_uniform,
                c.w_distribution,
                c.depth,
                c.beta,
                c.alpha,
            ))
        })
        .collect();

    let run_cell = |cell: &GridCell| run_one(grid, base, cell);
    let mut fresh: Vec<GridRow> = if parallel_cells {
        pending.par_iter().map(run_cell).collect()
    } else {
        pending.iter().map(run_cell).collect()
    };

    let mut rows = completed;
    rows.append(&mut fresh);
    flag_pareto(&mut rows);
    write_csv(out_path, &rows)?;
    Ok(GridOutcome { rows, resumed })
}

fn run_one(grid: &GridSpec, base: &RunConfig, cell: &GridCell) -> GridRow {
    let mut cfg = base.clone();
    cfg.weights = [cell.w_uniform, cell.w_distribution];
    cfg.depth = cell.depth;
    cfg.beta = cell.beta;
    cfg.alpha = cell.alpha;
    if let Some(e) = grid.epsilon {
        cfg.epsilon = e;
    }
    if let Some(c) = grid.iter_cap {
        cfg.iter_cap = Some(c);
    }
    if let Some(t) = grid.time_cap_s {
        cfg.time_cap_s = Some(t);
    }

    let mut row = GridRow {
        w_uniform: cell.w_uniform,
        w_distribution: cell.w_distribution,
        depth: cell.depth,
        beta: cell.beta,
        alpha: cell.alpha,
        l_s: None,
        u_s: None,
        gap: None,
        runtime_s: None,
        verifier_calls: None,
        exit_reason: None,
        error: None,
        pareto: false,
    };
    let start = Instant::now();
    match load_problem(&cfg)
        .and_then(|p| Ok(verify(&p.net, &p.spec, &p.gauss, &cfg.engine_config())?))
    {
        Ok(res) => {
            row.l_s = Some(res.l_s);
            row.u_s = Some(res.u_s);
            row.gap = Some(res.gap());
            row.runtime_s = Some(start.elapsed().as_secs_f64());
            row.verifier_calls = Some(res.stats.verifier_calls);
            row.exit_reason = Some(
                serde_json::to_value(res.stats.exit)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            );
        }
        Err(e) => {
            row.runtime_s = Some(start.elapsed().as_secs_f64());
            row.error = Some(format!("{e:#}"));
        }
    }
    row
}

/// A row is Pareto-optimal when no other successful row is at least as good
/// in both (gap, runtime) and strictly better in one. Rows with errors are
/// never flagged.
pub fn flag_pareto(rows: &mut [GridRow]) {
    let metrics: Vec<Option<(f64, f64)>> = rows
        .iter()
        .map(|r| match (r.gap, r.runtime_s, &r.error) {
            (Some(g), Some(t), None) => Some((g, t)),
            _ => None,
        })
        .collect();
    for i in 0..rows.len() {
        rows[i].pareto = match metrics[i] {
            None => false,
            Some((gi, ti)) => !metrics.iter().enumerate().any(|(j, m)| {
                j != i && m.is_some_and(|(gj, tj)| gj <= gi && tj <= ti && (gj < gi || tj < ti))
            }),
        };
    }
}

fn write_csv(path: &Path, rows: &[GridRow]) -> anyhow::Result<()> {
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
