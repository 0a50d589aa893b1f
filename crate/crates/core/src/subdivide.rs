//! Boundary-aware sampling and regression-tree subdivision.
//!
//! A region is sampled with the combined (distributional + uniform) strategy,
//! samples far from the safety boundary are eliminated by rank, and the
//! survivors drive a regression tree on the scalar margin whose leaf boxes
//! tile the region. Splits follow the longest dimension while a node still
//! carries more probability mass than `beta`, then switch to the
//! variance-based impurity measure with the `alpha` geometric penalty.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{BoxRegion, GaussianInput, SampleWeights};
use crate::model::{margins, min_margin, Network, SafetySpec};

/// Tuning knobs for sampling and tree construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    /// Geometric penalty exponent on the split dimension's sample extent.
    pub alpha: f64,
    /// Probability threshold of the impurity scheduler: nodes heavier than
    /// this split on their longest dimension, lighter nodes split by
    /// impurity. Zero disables the longest-dimension phase entirely.
    pub beta: f64,
    pub weights: SampleWeights,
    /// Points drawn per sampling round.
    pub n_samples: usize,
    /// Rejection-sampling rounds before topping up with plain samples.
    pub max_attempts: usize,
    /// Rate of the rank-based elimination probability.
    pub rank_scale: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_leaf_samples: 2,
            alpha: 0.05,
            beta: 0.75,
            weights: SampleWeights::default(),
            n_samples: 100,
            max_attempts: 10,
            rank_scale: 1.0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::config("tree max_depth must be >= 1"));
        }
        if self.min_leaf_samples < 1 {
            return Err(Error::config("min_leaf_samples must be >= 1"));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("impurity alpha must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("scheduler beta must be in [0,1]"));
        }
        if self.rank_scale <= 0.0 {
            return Err(Error::config("rank_scale must be > 0"));
        }
        self.weights.validate()
    }
}

/// Labelled sample set: points, scalar regression targets (the worst
/// constraint margin), safety labels, and the distance to the nearest
/// constraint boundary used by the elimination step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    points: Vec<DVector<f64>>,
    margins: Vec<f64>,
    labels: Vec<bool>,
    boundary_dist: Vec<f64>,
}

impl SampleBatch {
    /// Evaluate the network on every point and record margins and labels.
    pub fn from_points(
        points: Vec<DVector<f64>>,
        net: &Network,
        spec: &SafetySpec,
    ) -> Result<Self> {
        let mut margins_v = Vec::with_capacity(points.len());
        let mut labels = Vec::with_capacity(points.len());
        let mut dist = Vec::with_capacity(points.len());
        for p in &points {
            let m = margins(net, spec, p)?;
            let y = min_margin(&m);
            margins_v.push(y);
            labels.push(y >= 0.0);
            dist.push(m.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs())));
        }
        Ok(Self {
            points,
            margins: margins_v,
            labels,
            boundary_dist: dist,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn boundary_dist(&self) -> &[f64] {
        &self.boundary_dist
    }

    /// True when every point carries the same label (no boundary evidence).
    pub fn is_single_class(&self) -> bool {
        self.labels.windows(2).all(|w| w[0] == w[1])
    }

    fn filtered(&self, keep: &[bool]) -> SampleBatch {
        let pick = |v: &mut dyn Iterator<Item = usize>| v.collect::<Vec<_>>();
        let idx = pick(&mut (0..self.len()).filter(|&i| keep[i]));
        SampleBatch {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            margins: idx.iter().map(|&i| self.margins[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            boundary_dist: idx.iter().map(|&i| self.boundary_dist[i]).collect(),
        }
    }

    fn extend(&mut self, other: SampleBatch) {
        self.points.extend(other.points);
        self.margins.extend(other.margins);
        self.labels.extend(other.labels);
        self.boundary_dist.extend(other.boundary_dist);
    }

    fn empty() -> SampleBatch {
        SampleBatch {
            points: Vec::new(),
            margins: Vec::new(),
            labels: Vec::new(),
            boundary_dist: Vec::new(),
        }
    }
}

/// Probability that the sample of ascending-distance rank `rank` (0-based)
/// is eliminated: `1 - exp(-rho * rank)`. Rank 0 is never eliminated.
pub fn elimination_probability(rank: usize, rho: f64) -> f64 {
    1.0 - (-rho * rank as f64).exp()
}

/// Rank-based elimination: points are ranked by distance to the nearest
/// constraint boundary (ties by original index) and each is independently
/// dropped with [`elimination_probability`]. The survivors keep their
/// original order.
pub fn eliminate_samples(batch: &SampleBatch, rho: f64, rng: &mut impl Rng) -> SampleBatch {
    let n = batch.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        batch.boundary_dist[i]
            .total_cmp(&batch.boundary_dist[j])
            .then(i.cmp(&j))
    });
    let mut keep = vec![false; n];
    for (rank, &i) in order.iter().enumerate() {
        let u: f64 = rng.random();
        if u >= elimination_probability(rank, rho) {
            keep[i] = true;
        }
    }
    batch.filtered(&keep)
}

/// Sample a region with boundary awareness.
///
/// Draws a base combined batch; if it is single-class the boundary is assumed
/// absent and the base batch is returned as-is. Otherwise fresh combined
/// batches are drawn and filtered through [`eliminate_samples`] until enough
/// survivors accumulate or `max_attempts` rounds pass, topping up with plain
/// combined samples if still short.
pub fn boundary_aware_sample(
    g: &GaussianInput,
    net: &Network,
    spec: &SafetySpec,
    region: &BoxRegion,
    cfg: &TreeConfig,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    cfg.validate()?;
    let n = cfg.n_samples;
    let base_points = g.combined_sample(region, n, cfg.weights, rng)?;
    let base = SampleBatch::from_points(base_points, net, spec)?;
    if base.is_single_class() {
        return Ok(base);
    }

    let mut survivors = SampleBatch::empty();
    let mut attempts = 0;
    while survivors.len() < n && attempts < cfg.max_attempts {
        let pts = g.combined_sample(region, n, cfg.weights, rng)?;
        let batch = SampleBatch::from_points(pts, net, spec)?;
        survivors.extend(eliminate_samples(&batch, cfg.rank_scale, rng));
        attempts += 1;
    }
    if survivors.len() < n {
        let fill = g.combined_sample(region, n - survivors.len(), cfg.weights, rng)?;
        survivors.extend(SampleBatch::from_points(fill, net, spec)?);
    }
    Ok(survivors)
}

/// Split quality: population-variance MSE of the two sides divided by the
/// sample extent of the split dimension raised to `alpha`. Lower is better.
pub fn impurity(left: &[f64], right: &[f64], extent: f64, alpha: f64) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::config("impurity requires non-empty split sides"));
    }
    if extent <= 0.0 {
        return Err(Error::config("impurity requires positive sample extent"));
    }
    let mse = population_variance(left) * left.len() as f64
        + population_variance(right) * right.len() as f64;
    Ok(mse / extent.powf(alpha))
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Which rule chose a split; retained for inspection and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    LongestDim,
    Impurity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal {
        dim: usize,
        threshold: f64,
        mode: SplitMode,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        region: BoxRegion,
    },
}

/// Binary axis-aligned partition of a root box; leaves tile the root exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    root_region: BoxRegion,
    root: TreeNode,
}

impl RegressionTree {
    pub fn root_region(&self) -> &BoxRegion {
        &self.root_region
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Leaf boxes in depth-first, left-first order.
    pub fn leaf_regions(&self) -> Vec<BoxRegion> {
        let mut out = Vec::new();
        collect_leaves(&self.root, &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_regions().len()
    }
}

fn collect_leaves(node: &TreeNode, out: &mut Vec<BoxRegion>) {
    match node {
        TreeNode::Leaf { region } => out.push(region.clone()),
        TreeNode::Internal { left, right, .. } => {
            collect_leaves(left, out);
            collect_leaves(right, out);
        }
    }
}

/// Build the regression tree for a sampled region. Deterministic in
/// (batch, region, config); no randomness is consumed.
pub fn build_tree(
    batch: &SampleBatch,
    region: &BoxRegion,
    g: &GaussianInput,
    cfg: &TreeConfig,
) -> Result<RegressionTree> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::config("build_tree requires a non-empty batch"));
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let root = split_node(batch, region.clone(), idx, 0, g, cfg)?;
    Ok(RegressionTree {
        root_region: region.clone(),
        root,
    })
}

fn split_node(
    batch: &SampleBatch,
    region: BoxRegion,
    idx: Vec<usize>,
    depth: usize,
    g: &GaussianInput,
    cfg: &TreeConfig,
) -> Result<TreeNode> {
    if depth >= cfg.max_depth
        || idx.len() < 2 * cfg.min_leaf_samples
        || all_margins_equal(batch, &idx)
    {
        return Ok(TreeNode::Leaf { region });
    }

    let longest_mode = cfg.beta > 0.0 && g.box_probability(&region)? > cfg.beta;
    let chosen = if longest_mode {
        longest_dim_split(&region).map(|(dim, thr)| (dim, thr, SplitMode::LongestDim))
    } else {
        impurity_split(batch, &region, &idx, cfg)?.map(|(dim, thr)| (dim, thr, SplitMode::Impurity))
    };

    let Some((dim, threshold, mode)) = chosen else {
        return Ok(TreeNode::Leaf { region });
    };

    let (left_region, right_region) = region.split_at(dim, threshold);
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| batch.points[i][dim] <= threshold);

    let left = split_node(batch, left_region, left_idx, depth + 1, g, cfg)?;
    let right = split_node(batch, right_region, right_idx, depth + 1, g, cfg)?;
    Ok(TreeNode::Internal {
        dim,
        threshold,
        mode,
        left: Box::new(left),
        right: Box::new(right),
    })
}

fn all_margins_equal(batch: &SampleBatch, idx: &[usize]) -> bool {
    idx.windows(2)
        .all(|w| batch.margins[w[0]] == batch.margins[w[1]])
}

fn longest_dim_split(region: &BoxRegion) -> Option<(usize, f64)> {
    let dim = region.longest_dim();
    let lo = region.lower()[dim];
    let hi = region.upper()[dim];
    let mid = 0.5 * (lo + hi);
    // Degenerate or fp-collapsed boxes cannot be split further.
    (lo < mid && mid < hi).then_some((dim, mid))
}

/// Exhaustive candidate search: midpoints between consecutive distinct sample
/// coordinates per dimension, scored by [`impurity`] with the dimension's
/// sample extent as the geometric length.
fn impurity_split(
    batch: &SampleBatch,
    region: &BoxRegion,
    idx: &[usize],
    cfg: &TreeConfig,
) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(f64, usize, f64)> = None;
    let mut coords: Vec<f64> = Vec::with_capacity(idx.len());
    let mut left_m: Vec<f64> = Vec::new();
    let mut right_m: Vec<f64> = Vec::new();
    for dim in 0..region.dim() {
        coords.clear();
        coords.extend(idx.iter().map(|&i| batch.points[i][dim]));
        coords.sort_by(f64::total_cmp);
        coords.dedup();
        if coords.len() < 2 {
            continue;
        }
        let extent = coords[coords.len() - 1] - coords[0];
        if extent <= 0.0 {
            continue;
        }
        for pair in coords.windows(2) {
            let thr = 0.5 * (pair[0] + pair[1]);
            if thr <= region.lower()[dim] || thr >= region.upper()[dim] {
                continue;
            }
            left_m.clear();
            right_m.clear();
            for &i in idx {
                if batch.points[i][dim] <= thr {
                    left_m.push(batch.margins[i]);
                } else {
                    right_m.push(batch.margins[i]);
                }
            }
            if left_m.len() < cfg.min_leaf_samples || right_m.len() < cfg.min_leaf_samples {
                continue;
            }
            let score = impurity(&left_m, &right_m, extent, cfg.alpha)?;
            if best.is_none_or(|(b, _, _)| score < b) {
                best = Some((score, dim, thr));
            }
        }
    }
    Ok(best.map(|(_, dim, thr)| (dim, thr)))
}
