//! Probability-prioritized refinement: pop the heaviest unknown hull,
//! subdivide it, classify the leaves, and repeat until the unknown mass (or
//! its largest element) falls below the termination threshold. Assembles the
//! guaranteed interval `[L_s, U_s]` from the safe and unsafe inventories.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{classify, Status, Verdict};
use crate::error::{Error, Result};
use crate::gauss::{rng_stream, std_normal_quantile, BoxRegion, GaussianInput};
use crate::model::{margins, min_margin, Network, SafetySpec};
use crate::subdivide::{boundary_aware_sample, build_tree, TreeConfig};

/// RNG stream reserved for the Monte-Carlo oracle; refinement iterations use
/// streams starting at 1.
const ORACLE_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationMode {
    /// Stop when the total unknown probability mass drops below epsilon.
    Sum,
    /// Stop when the largest single unknown hull drops below epsilon.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Regression-tree subdivision driven by boundary-aware sampling.
    BoundaryAware,
    /// Baseline: binary midpoint split of the longest dimension.
    UniformBab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    Converged,
    NoRefinableHull,
    IterationCap,
    TimeCap,
}

impl ExitReason {
    pub fn is_cap(self) -> bool {
        matches!(self, ExitReason::IterationCap | ExitReason::TimeCap)
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub epsilon: f64,
    pub termination: TerminationMode,
    /// Unknown hulls lighter than this are kept in the inventory (they still
    /// count toward the gap) but are never refined.
    pub p_min: f64,
    pub strategy: Strategy,
    pub tree: TreeConfig,
    /// Sample count for the first refinement; later ones use `n_iter`.
    pub n_initial: usize,
    pub n_iter: usize,
    /// Tail mass excluded by the initial box.
    pub delta_tail: f64,
    pub workers: usize,
    /// Force single-threaded leaf verification regardless of `workers`.
    pub deterministic: bool,
    pub iteration_cap: Option<u64>,
    pub time_cap: Option<Duration>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            termination: TerminationMode::Sum,
            p_min: 1e-5,
            strategy: Strategy::BoundaryAware,
            tree: TreeConfig::default(),
            n_initial: 1000,
            n_iter: 100,
            delta_tail: 1e-5,
            workers: 1,
            deterministic: false,
            iteration_cap: None,
            time_cap: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be > 0"));
        }
        if self.p_min.is_nan() || self.p_min < 0.0 {
            return Err(Error::config("p_min must be >= 0"));
        }
        if self.n_initial == 0 || self.n_iter == 0 {
            return Err(Error::config("sample counts must be >= 1"));
        }
        if !(self.delta_tail > 0.0 && self.delta_tail < 1.0) {
            return Err(Error::config("delta_tail must be in (0,1)"));
        }
        self.tree.validate()
    }
}

/// A classified box with its cached probability and the iteration that
/// created it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hull {
    pub region: BoxRegion,
    pub probability: f64,
    pub verdict: Verdict,
    pub generation: u64,
}

struct UnknownEntry(Hull);

impl UnknownEntry {
    /// Max-heap priority: probability, then earliest generation, then
    /// lexicographically smallest lower (then upper) corner.
    fn cmp_priority(&self, other: &Self) -> Ordering {
        self.0
            .probability
            .total_cmp(&other.0.probability)
            .then_with(|| other.0.generation.cmp(&self.0.generation))
            .then_with(|| lex_cmp(other.0.region.lower(), self.0.region.lower()))
            .then_with(|| lex_cmp(other.0.region.upper(), self.0.region.upper()))
    }
}

fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for i in 0..a.len().min(b.len()) {
        match a[i].total_cmp(&b[i]) {
            Ordering::Equal => continue,
            ord => return ord,
        }
    }
    a.len().cmp(&b.len())
}

impl PartialEq for UnknownEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_priority(other) == Ordering::Equal
    }
}
impl Eq for UnknownEntry {}
impl PartialOrd for UnknownEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for UnknownEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_priority(other)
    }
}

/// The three hull inventories. Safe and unsafe are append-only; unknown is a
/// max-priority queue keyed as above. Only the engine coordinator mutates
/// this.
pub struct HullSets {
    safe: Vec<Hull>,
    unsafe_hulls: Vec<Hull>,
    unknown: BinaryHeap<UnknownEntry>,
    unknown_mass: f64,
}

impl HullSets {
    pub fn new() -> Self {
        Self {
            safe: Vec::new(),
            unsafe_hulls: Vec::new(),
            unknown: BinaryHeap::new(),
            unknown_mass: 0.0,
        }
    }

    pub fn push(&mut self, hull: Hull) {
        match hull.verdict.status {
            Status::Safe => self.safe.push(hull),
            Status::Unsafe => self.unsafe_hulls.push(hull),
            Status::Unknown => {
                self.unknown_mass += hull.probability;
                self.unknown.push(UnknownEntry(hull));
            }
        }
    }

    pub fn pop_unknown(&mut self) -> Option<Hull> {
        let entry = self.unknown.pop()?;
        self.unknown_mass = (self.unknown_mass - entry.0.probability).max(0.0);
        Some(entry.0)
    }

    pub fn peek_unknown_prob(&self) -> Option<f64> {
        self.unknown.peek().map(|e| e.0.probability)
    }

    /// Running total of unknown mass (incrementally maintained).
    pub fn unknown_mass(&self) -> f64 {
        self.unknown_mass
    }

    pub fn safe_mass(&self) -> f64 {
        // f64 sums fold from -0.0; clamp so empty inventories report +0.0.
        self.safe
            .iter()
            .map(|h| h.probability)
            .sum::<f64>()
            .max(0.0)
    }

    pub fn unsafe_mass(&self) -> f64 {
        self.unsafe_hulls
            .iter()
            .map(|h| h.probability)
            .sum::<f64>()
            .max(0.0)
    }

    pub fn unknown_mass_recomputed(&self) -> f64 {
        self.unknown
            .iter()
            .map(|e| e.0.probability)
            .sum::<f64>()
            .max(0.0)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.safe.len(), self.unsafe_hulls.len(), self.unknown.len())
    }

    /// Deterministic snapshot: safe/unsafe in insertion order, unknown in
    /// descending priority order.
    pub fn into_inventory(self) -> HullInventory {
        let mut unknown: Vec<Hull> = self
            .unknown
            .into_sorted_vec()
            .into_iter()
            .map(|e| e.0)
            .collect();
        unknown.reverse();
        HullInventory {
            safe: self.safe,
            unsafe_hulls: self.unsafe_hulls,
            unknown,
        }
    }
}

impl Default for HullSets {
    fn default() -> Self {
        Self::new()
    }
}

/// Final hull inventories of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct HullInventory {
    pub safe: Vec<Hull>,
    pub unsafe_hulls: Vec<Hull>,
    pub unknown: Vec<Hull>,
}

/// `L_s = sum of safe mass`, `U_s = 1 - sum of unsafe mass`, recomputed from
/// scratch. Errors if the combined inventories carry more than unit mass
/// (disjointness must have been violated somewhere).
pub fn assemble_bounds(sets: &HullSets) -> Result<(f64, f64)> {
    let safe = sets.safe_mass();
    let unsafe_ = sets.unsafe_mass();
    let unknown = sets.unknown_mass_recomputed();
    let total = safe + unsafe_ + unknown;
    if total > 1.0 + 1e-9 {
        return Err(Error::Internal(format!(
            "hull mass exceeds 1: safe {safe} + unsafe {unsafe_} + unknown {unknown} = {total}"
        )));
    }
    Ok((safe, 1.0 - unsafe_))
}

/// Binary split of the longest dimension at its midpoint (ties to the lowest
/// dimension index); the baseline subdivision strategy.
pub fn uniform_bab_subdivide(region: &BoxRegion) -> (BoxRegion, BoxRegion) {
    let dim = region.longest_dim();
    let mid = 0.5 * (region.lower()[dim] + region.upper()[dim]);
    region.split_at(dim, mid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub l_s: f64,
    pub u_s: f64,
    pub unknown_mass: f64,
    pub verifier_calls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub iterations: u64,
    pub verifier_calls: u64,
    pub wall_time_s: f64,
    pub delta_tail: f64,
    /// Sigma half-width of the initial box.
    pub k_sigma: f64,
    pub exit: ExitReason,
}

#[derive(Debug, Clone)]
pub struct VerificationResult {
    pub l_s: f64,
    pub u_s: f64,
    pub hulls: HullInventory,
    pub stats: RunStats,
    pub trace: Vec<IterationRecord>,
}

impl VerificationResult {
    pub fn gap(&self) -> f64 {
        self.u_s - self.l_s
    }
}

/// Run the refinement loop to completion (threshold, exhaustion, or cap).
pub fn verify(
    net: &Network,
    spec: &SafetySpec,
    g: &GaussianInput,
    cfg: &EngineConfig,
) -> Result<VerificationResult> {
    cfg.validate()?;
    if net.input_dim() != g.dim() {
        return Err(Error::dim("verify input", net.input_dim(), g.dim()));
    }
    if spec.output_dim() != net.output_dim() {
        return Err(Error::dim(
            "safety spec columns",
            net.output_dim(),
            spec.output_dim(),
        ));
    }

    let start = Instant::now();
    let init = g.initial_box(cfg.delta_tail)?;
    let root_prob = g.box_probability(&init.region)?;

    let workers = if cfg.deterministic {
        1
    } else {
        cfg.workers.max(1)
    };
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Internal(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let mut sets = HullSets::new();
    sets.push(Hull {
        region: init.region.clone(),
        probability: root_prob,
        verdict: Verdict {
            status: Status::Unknown,
            lower: DVector::from_element(spec.constraint_count(), f64::NEG_INFINITY),
            upper: DVector::from_element(spec.constraint_count(), f64::INFINITY),
        },
        generation: 0,
    });

    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut iterations: u64 = 0;
    let mut verifier_calls: u64 = 0;
    let mut safe_mass_running = 0.0_f64;
    let mut unsafe_mass_running = 0.0_f64;

    let exit = loop {
        let converged = match cfg.termination {
            TerminationMode::Sum => sets.unknown_mass() < cfg.epsilon,
            TerminationMode::Max => sets.peek_unknown_prob().is_none_or(|p| p < cfg.epsilon),
        };
        if converged {
            break ExitReason::Converged;
        }
        if let Some(cap) = cfg.iteration_cap {
            if iterations >= cap {
                break ExitReason::IterationCap;
            }
        }
        if let Some(cap) = cfg.time_cap {
            if start.elapsed() >= cap {
                break ExitReason::TimeCap;
            }
        }
        let Some(top_prob) = sets.peek_unknown_prob() else {
            break ExitReason::Converged;
        };
        if top_prob < cfg.p_min {
            break ExitReason::NoRefinableHull;
        }
        let hull = sets.pop_unknown().expect("peeked entry exists");

        let n = if iterations == 0 {
            cfg.n_initial
        } else {
            cfg.n_iter
        };
        let mut leaves = match cfg.strategy {
            Strategy::BoundaryAware => {
                let mut tree_cfg = cfg.tree;
                tree_cfg.n_samples = n;
                let mut rng = rng_stream(g.seed, iterations + 1);
                let batch = boundary_aware_sample(g, net, spec, &hull.region, &tree_cfg, &mut rng)?;
                if batch.is_empty() {
                    Vec::new()
                } else {
                    build_tree(&batch, &hull.region, g, &tree_cfg)?.leaf_regions()
                }
            }
            Strategy::UniformBab => {
                let (a, b) = uniform_bab_subdivide(&hull.region);
                vec![a, b]
            }
        };
        if leaves.len() <= 1 {
            // Degenerate tree: force strict refinement so the loop always
            // makes progress.
            let (a, b) = uniform_bab_subdivide(&hull.region);
            leaves = vec![a, b];
        }

        let verdicts = classify_leaves(net, spec, &leaves, pool.as_ref())?;
        verifier_calls += leaves.len() as u64;
        iterations += 1;

        for (region, verdict) in leaves.into_iter().zip(verdicts) {
            let probability = g.box_probability(&region)?;
            match verdict.status {
                Status::Safe => safe_mass_running += probability,
                Status::Unsafe => unsafe_mass_running += probability,
                Status::Unknown => {}
            }
            sets.push(Hull {
                region,
                probability,
                verdict,
                generation: iterations,
            });
        }

        trace.push(IterationRecord {
            iteration: iterations,
            l_s: safe_mass_running,
            u_s: 1.0 - unsafe_mass_running,
            unknown_mass: sets.unknown_mass(),
            verifier_calls,
        });
    };

    let (l_s, u_s) = assemble_bounds(&sets)?;
    Ok(VerificationResult {
        l_s,
        u_s,
        hulls: sets.into_inventory(),
        stats: RunStats {
            iterations,
            verifier_calls,
            wall_time_s: start.elapsed().as_secs_f64(),
            delta_tail: cfg.delta_tail,
            k_sigma: init.k,
            exit,
        },
        trace,
    })
}

fn classify_leaves(
    net: &Network,
    spec: &SafetySpec,
    regions: &[BoxRegion],
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<Verdict>> {
    match pool {
        None => regions.iter().map(|r| classify(net, spec, r)).collect(),
        // Order-preserving parallel map: identical output regardless of the
        // worker count.
        Some(p) => p.install(|| regions.par_iter().map(|r| classify(net, spec, r)).collect()),
    }
}

/// Wilson score interval and point estimate from `n` independent Gaussian
/// draws; the sanity check for `[L_s, U_s]`, independent of the verified
/// pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub hits: u64,
    pub samples: u64,
    pub confidence: f64,
}

pub fn mc_oracle(
    net: &Network,
    spec: &SafetySpec,
    g: &GaussianInput,
    n: usize,
    confidence: f64,
) -> Result<OracleEstimate> {
    if n < 1000 {
        return Err(Error::config(format!(
            "mc_oracle needs at least 1000 samples, got {n}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config("confidence must be in (0,1)"));
    }
    if net.input_dim() != g.dim() {
        return Err(Error::dim("mc_oracle input", net.input_dim(), g.dim()));
    }
    let mut rng = rng_stream(g.seed, ORACLE_STREAM);
    let d = g.dim();
    let mut hits: u64 = 0;
    for _ in 0..n {
        let x = DVector::from_fn(d, |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            g.mean()[i] + g.std()[i] * z
        });
        if min_margin(&margins(net, spec, &x)?) >= 0.0 {
            hits += 1;
        }
    }
    let (lower, upper) = wilson_interval(hits, n as u64, confidence);
    Ok(OracleEstimate {
        point: hits as f64 / n as f64,
        lower,
        upper,
        hits,
        samples: n as u64,
        confidence,
    })
}

/// Wilson score interval for a binomial proportion. Degenerate counts keep
/// their exact endpoint (0 hits -> lower 0, all hits -> upper 1).
pub fn wilson_interval(hits: u64, n: u64, confidence: f64) -> (f64, f64) {
    let z = std_normal_quantile(0.5 + confidence / 2.0);
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lower = if hits == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let upper = if hits == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lower, upper)
}
