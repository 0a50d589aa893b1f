//! Probability computation and sampling for the diagonal Gaussian input model.
//!
//! Everything here is exact per-dimension arithmetic on the error function;
//! the independence of the coordinates makes box probabilities and truncated
//! sampling separable. All randomness flows through caller-supplied RNGs, so
//! callers with distinct streams may run concurrently.

use libm::{erf, erfc};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Smallest box probability the truncated sampler will accept before telling
/// the caller to treat the region as negligible.
pub const MIN_SAMPLABLE_PROB: f64 = 1e-300;

/// Independent Gaussian input: mean and per-dimension standard deviation,
/// plus the master seed from which all sampling streams are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianInput {
    mean: DVector<f64>,
    std: DVector<f64>,
    pub seed: u64,
}

impl GaussianInput {
    pub fn new(mean: DVector<f64>, std: DVector<f64>, seed: u64) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::dim("gaussian mean/std", mean.len(), std.len()));
        }
        if mean.is_empty() {
            return Err(Error::config("gaussian input must have dimension >= 1"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("gaussian mean must be finite"));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config(
                "gaussian standard deviations must be finite and strictly positive",
            ));
        }
        Ok(Self { mean, std, seed })
    }

    /// Standard normal of dimension `d`.
    pub fn standard(d: usize, seed: u64) -> Self {
        Self::new(DVector::zeros(d), DVector::from_element(d, 1.0), seed).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn std(&self) -> &DVector<f64> {
        &self.std
    }

    /// P(x in r) for this input model. Product of per-dimension erf terms.
    pub fn box_probability(&self, r: &BoxRegion) -> Result<f64> {
        if r.dim() != self.dim() {
            return Err(Error::dim("box_probability", self.dim(), r.dim()));
        }
        let mut p = 1.0;
        for i in 0..self.dim() {
            p *= normal_interval_prob(self.mean[i], self.std[i], r.lower[i], r.upper[i]);
            if p == 0.0 {
                return Ok(0.0);
            }
        }
        Ok(p.clamp(0.0, 1.0))
    }

    /// Box `[mean_i - k*std_i, mean_i + k*std_i]` with a single `k`, the
    /// smallest (up to bisection tolerance) for which the box probability is
    /// at least `1 - delta`. The chosen `k` is reported alongside the region.
    pub fn initial_box(&self, delta: f64) -> Result<InitialBox> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config(format!(
                "tail mass delta must be in (0,1), got {delta}"
            )));
        }
        let target = 1.0 - delta;
        let box_at = |k: f64| -> BoxRegion {
            let lower = DVector::from_fn(self.dim(), |i, _| self.mean[i] - k * self.std[i]);
            let upper = DVector::from_fn(self.dim(), |i, _| self.mean[i] + k * self.std[i]);
            BoxRegion::new(lower, upper).expect("k*sigma box is well formed")
        };
        let prob_at = |k: f64| self.box_probability(&box_at(k)).expect("dims match");

        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        while prob_at(hi) < target {
            hi *= 2.0;
            if hi > 128.0 {
                return Err(Error::NumericUnderflow(format!(
                    "cannot reach box probability {target} within 128 sigma"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if prob_at(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // hi side keeps the guarantee prob >= 1 - delta.
        Ok(InitialBox {
            region: box_at(hi),
            k: hi,
        })
    }

    /// `n` i.i.d. draws from the Gaussian conditioned on `r`, via per-dimension
    /// inverse-CDF truncation. Exact because the coordinates are independent.
    pub fn sample_truncated(
        &self,
        r: &BoxRegion,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<DVector<f64>>> {
        if r.dim() != self.dim() {
            return Err(Error::dim("sample_truncated", self.dim(), r.dim()));
        }
        let p = self.box_probability(r)?;
        if p < MIN_SAMPLABLE_PROB {
            return Err(Error::NumericUnderflow(format!(
                "box probability {p:e} is below {MIN_SAMPLABLE_PROB:e}; treat the region as negligible"
            )));
        }
        // Per-dimension CDF window, precomputed once. Dimensions entirely in
        // the right tail are mirrored so the window is built from the survival
        // function where it is well conditioned.
        struct DimWindow {
            p_lo: f64,
            p_hi: f64,
            mirrored: bool,
        }
        let windows: Vec<DimWindow> = (0..self.dim())
            .map(|i| {
                let alpha = (r.lower[i] - self.mean[i]) / self.std[i];
                let beta = (r.upper[i] - self.mean[i]) / self.std[i];
                if alpha >= 0.0 {
                    DimWindow {
                        p_lo: std_normal_sf(beta),
                        p_hi: std_normal_sf(alpha),
                        mirrored: true,
                    }
                } else {
                    DimWindow {
                        p_lo: std_normal_cdf(alpha),
                        p_hi: std_normal_cdf(beta),
                        mirrored: false,
                    }
                }
            })
            .collect();

        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let x = DVector::from_fn(self.dim(), |i, _| {
                let w = &windows[i];
                let u: f64 = rng.random();
                let p = (w.p_lo + u * (w.p_hi - w.p_lo)).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
                let z = std_normal_quantile(p);
                let raw = if w.mirrored {
                    self.mean[i] - self.std[i] * z
                } else {
                    self.mean[i] + self.std[i] * z
                };
                raw.clamp(r.lower[i], r.upper[i])
            });
            out.push(x);
        }
        Ok(out)
    }

    /// Weighted mix of truncated-Gaussian and uniform draws over `r`:
    /// `floor(n * w_distribution)` distributional points followed by the
    /// remaining uniform points. The default half/half weights therefore put
    /// `floor(n/2)` points on the distributional side.
    pub fn combined_sample(
        &self,
        r: &BoxRegion,
        n: usize,
        weights: SampleWeights,
        rng: &mut impl Rng,
    ) -> Result<Vec<DVector<f64>>> {
        weights.validate()?;
        let n_dist = (n as f64 * weights.distribution).floor() as usize;
        let n_unif = n - n_dist;
        let mut pts = if n_dist > 0 {
            self.sample_truncated(r, n_dist, rng)?
        } else {
            Vec::new()
        };
        pts.extend(r.sample_uniform(n_unif, rng));
        Ok(pts)
    }
}

/// Mixing weights for [`GaussianInput::combined_sample`]; must be nonnegative
/// and sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub uniform: f64,
    pub distribution: f64,
}

impl SampleWeights {
    pub fn new(uniform: f64, distribution: f64) -> Result<Self> {
        let w = Self {
            uniform,
            distribution,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.uniform < 0.0 || self.distribution < 0.0 {
            return Err(Error::config("sampling weights must be nonnegative"));
        }
        if (self.uniform + self.distribution - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "sampling weights must sum to 1, got {} + {}",
                self.uniform, self.distribution
            )));
        }
        Ok(())
    }
}

impl Default for SampleWeights {
    fn default() -> Self {
        Self {
            uniform: 0.5,
            distribution: 0.5,
        }
    }
}

/// Axis-aligned box in input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxRegion {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box lower/upper", lower.len(), upper.len()));
        }
        if lower.is_empty() {
            return Err(Error::config("box must have dimension >= 1"));
        }
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite()) {
                return Err(Error::config("box bounds must be finite"));
            }
            if lower[i] > upper[i] {
                return Err(Error::config(format!(
                    "box lower bound exceeds upper bound in dimension {i}: {} > {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(lower),
            DVector::from_column_slice(upper),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn width(&self, dim: usize) -> f64 {
        self.upper[dim] - self.lower[dim]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }

    /// Index of the widest dimension; ties go to the lowest index.
    pub fn longest_dim(&self) -> usize {
        let mut best = 0;
        for i in 1..self.dim() {
            if self.width(i) > self.width(best) {
                best = i;
            }
        }
        best
    }

    /// Split at `threshold` along `dim` into (lower side, upper side).
    pub fn split_at(&self, dim: usize, threshold: f64) -> (BoxRegion, BoxRegion) {
        let mut left_hi = self.upper.clone();
        left_hi[dim] = threshold;
        let mut right_lo = self.lower.clone();
        right_lo[dim] = threshold;
        (
            BoxRegion {
                lower: self.lower.clone(),
                upper: left_hi,
            },
            BoxRegion {
                lower: right_lo,
                upper: self.upper.clone(),
            },
        )
    }

    /// `n` i.i.d. points, each coordinate uniform on its interval.
    pub fn sample_uniform(&self, n: usize, rng: &mut impl Rng) -> Vec<DVector<f64>> {
        (0..n)
            .map(|_| {
                DVector::from_fn(self.dim(), |i, _| {
                    self.lower[i] + rng.random::<f64>() * self.width(i)
                })
            })
            .collect()
    }

    /// True if the interiors of the two boxes intersect.
    pub fn interior_overlaps(&self, other: &BoxRegion) -> bool {
        debug_assert_eq!(self.dim(), other.dim());
        (0..self.dim())
            .all(|i| self.lower[i].max(other.lower[i]) < self.upper[i].min(other.upper[i]))
    }
}

/// Result of [`GaussianInput::initial_box`]: the region plus the sigma
/// half-width actually used.
#[derive(Debug, Clone)]
pub struct InitialBox {
    pub region: BoxRegion,
    pub k: f64,
}

/// ChaCha stream derived from a master seed; distinct `stream` values give
/// statistically independent, reproducible sequences.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// P(lo <= X <= hi) for X ~ N(mu, sigma^2), evaluated so that tail windows do
/// not cancel: both-positive and both-negative z-scores go through erfc.
pub(crate) fn normal_interval_prob(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let p = if a >= 0.0 {
        0.5 * (erfc(a * FRAC_1_SQRT_2) - erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b * FRAC_1_SQRT_2) - erfc(-a * FRAC_1_SQRT_2))
    } else {
        0.5 * (erf(b * FRAC_1_SQRT_2) + erf(-a * FRAC_1_SQRT_2))
    };
    p.clamp(0.0, 1.0)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF: rational initial guess (Acklam) polished by
/// two Newton steps on the erfc-backed CDF. Newton is skipped where the
/// density underflows (|z| beyond ~38), where the guess is already as good as
/// the representation allows.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile requires p in (0,1), got {p}");
    let mut z = acklam_quantile(p);
    for _ in 0..2 {
        let pdf = std_normal_pdf(z);
        if pdf <= 1e-280 || !pdf.is_finite() {
            break;
        }
        let err = if z <= 0.0 {
            std_normal_cdf(z) - p
        } else {
            // In the right half use the survival function to avoid 1-1
            // cancellation for p near 1.
            (1.0 - p) - std_normal_sf(z)
        };
        z -= err / pdf;
    }
    z
}

#[allow(clippy::excessive_precision)]
fn acklam_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        q * (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5])
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}
