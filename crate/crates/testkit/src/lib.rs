//! Test-only oracles and fixtures shared by the workspace test suites.
//!
//! Everything in here is a *cross-check*: the quadrature routines know nothing
//! about the error function the main crate uses, and the grid searches know
//! nothing about bound propagation. Keep it that way — these exist to catch
//! bugs in the fast paths, not to share code with them.

use nalgebra::{DMatrix, DVector};
use probhull::model::{margins, Activation, Layer, Network, SafetySpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use nalgebra;

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Classic recursive scheme with Richardson correction; `tol` is an absolute
/// error target for the whole interval.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
    }

    if a == b {
        return 0.0;
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let flo = f(lo);
    let fhi = f(hi);
    let (whole, m, fm) = simpson(f, lo, flo, hi, fhi);
    sign * recurse(f, lo, flo, hi, fhi, whole, m, fm, tol, 48)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-(0.5) * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF by quadrature: Phi(z) = 1/2 + integral of the density
/// from 0 to z. Deliberately erf-free.
pub fn std_normal_cdf_quad(z: f64) -> f64 {
    if z <= -40.0 {
        return 0.0;
    }
    if z >= 40.0 {
        return 1.0;
    }
    (0.5 + adaptive_simpson(&std_normal_pdf, 0.0, z, 1e-14)).clamp(0.0, 1.0)
}

/// P(lo <= X <= hi) for X ~ N(mean, sd^2), by quadrature over the density.
pub fn normal_interval_prob_quad(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let a = ((lo - mean) / sd).max(-40.0);
    let b = ((hi - mean) / sd).min(40.0);
    if b <= a {
        return 0.0;
    }
    adaptive_simpson(&std_normal_pdf, a, b, 1e-13).clamp(0.0, 1.0)
}

/// Probability of an axis-aligned box under an independent Gaussian, by
/// quadrature per dimension.
pub fn box_prob_quad(mean: &[f64], sd: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    mean.iter()
        .zip(sd)
        .zip(lower.iter().zip(upper))
        .map(|((&m, &s), (&lo, &hi))| normal_interval_prob_quad(m, s, lo, hi))
        .product()
}

/// Inverse standard normal CDF by bisection against the quadrature CDF.
pub fn std_normal_quantile_quad(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile oracle needs p in (0,1)");
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf_quad(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mean of the standard normal truncated to `[a, b]`, by quadrature.
pub fn truncated_std_normal_mean_quad(a: f64, b: f64) -> f64 {
    let mass = adaptive_simpson(&std_normal_pdf, a, b, 1e-13);
    let first = adaptive_simpson(&|z: f64| z * std_normal_pdf(z), a, b, 1e-13);
    first / mass
}

/// Smallest half-width k such that the +-k*sigma box captures at least
/// `1 - delta` of the product Gaussian, found by bisection on the quadrature
/// box probability. Oracle counterpart of the initial-box construction.
pub fn initial_box_k_quad(dim: usize, delta: f64) -> f64 {
    let target = 1.0 - delta;
    let prob = |k: f64| normal_interval_prob_quad(0.0, 1.0, -k, k).powi(dim as i32);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while prob(hi) < target {
        hi *= 2.0;
        assert!(hi < 128.0, "initial box oracle diverged");
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if prob(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

// ---------------------------------------------------------------------------
// Fixture networks
// ---------------------------------------------------------------------------

/// 1 -> 2 -> 1 ReLU network computing |x| (relu(x) + relu(-x)).
pub fn abs_net() -> Network {
    let l1 = Layer::new(
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        DVector::zeros(2),
        Activation::Relu,
    )
    .unwrap();
    let l2 = Layer::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::zeros(1),
        Activation::Identity,
    )
    .unwrap();
    Network::new(vec![l1, l2]).unwrap()
}

/// 2-input, 1-output linear network whose single output is x1, so the safety
/// boundary of `y >= 0` is the hyperplane x1 = 0.
pub fn halfspace_net() -> Network {
    let l = Layer::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DVector::zeros(1),
        Activation::Identity,
    )
    .unwrap();
    Network::new(vec![l]).unwrap()
}

/// Spec `y >= 0` for a 1-output network.
pub fn ge_zero_spec() -> SafetySpec {
    SafetySpec::new(DMatrix::from_row_slice(1, 1, &[1.0]), DVector::zeros(1)).unwrap()
}

/// 2-input ReLU network computing x2 - |x1| + 0.5; the zero level set is the
/// V-shaped curve x2 = |x1| - 0.5. Used wherever a genuinely curved boundary
/// is needed.
pub fn vee_net() -> Network {
    let l1 = Layer::new(
        DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
        DVector::zeros(4),
        Activation::Relu,
    )
    .unwrap();
    let l2 = Layer::new(
        DMatrix::from_row_slice(1, 4, &[-1.0, -1.0, 1.0, -1.0]),
        DVector::from_element(1, 0.5),
        Activation::Identity,
    )
    .unwrap();
    Network::new(vec![l1, l2]).unwrap()
}

/// Seeded random feedforward net: `hidden` layers of width `width` with the
/// given activation, Gaussian weights scaled by 1/sqrt(fan_in).
pub fn random_net(
    seed: u64,
    input_dim: usize,
    hidden: usize,
    width: usize,
    output_dim: usize,
    activation: Activation,
) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut fan_in = input_dim;
    for _ in 0..hidden {
        layers.push(random_layer(&mut rng, width, fan_in, activation));
        fan_in = width;
    }
    layers.push(random_layer(
        &mut rng,
        output_dim,
        fan_in,
        Activation::Identity,
    ));
    Network::new(layers).unwrap()
}

fn random_layer(rng: &mut ChaCha8Rng, rows: usize, cols: usize, act: Activation) -> Layer {
    let scale = 1.0 / (cols as f64).sqrt();
    let w = DMatrix::from_fn(rows, cols, |_, _| scale * gaussian(rng));
    let b = DVector::from_fn(rows, |_, _| 0.1 * gaussian(rng));
    Layer::new(w, b, act).unwrap()
}

/// Box-Muller; keeps the fixture generator free of rand_distr.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Spec anchored at the network's output at `anchor`: C is a random 1 x m row,
/// threshold set so the margin at the anchor point equals `margin_at_anchor`.
pub fn anchored_spec(
    seed: u64,
    net: &Network,
    anchor: &DVector<f64>,
    margin_at_anchor: f64,
) -> SafetySpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5afe);
    let m = net.output_dim();
    let c = DMatrix::from_fn(1, m, |_, _| gaussian(&mut rng));
    let y = net.forward(anchor).unwrap();
    let a = DVector::from_element(1, (&c * y)[0] - margin_at_anchor);
    SafetySpec::new(c, a).unwrap()
}

// ---------------------------------------------------------------------------
// Grid oracles
// ---------------------------------------------------------------------------

/// Minimum and maximum of the worst-case margin min_j (C f(x) - a)_j over a
/// dense grid of a (low-dimensional) box. Brute-force ground truth for bound
/// checks.
pub fn grid_margin_extrema(
    net: &Network,
    spec: &SafetySpec,
    lower: &[f64],
    upper: &[f64],
    steps: usize,
) -> (f64, f64) {
    let d = lower.len();
    assert!(
        d <= 3,
        "grid oracle is exponential; keep it low-dimensional"
    );
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let total = steps.pow(d as u32);
    let mut x = DVector::zeros(d);
    for flat in 0..total {
        let mut rest = flat;
        for i in 0..d {
            let t = (rest % steps) as f64 / (steps - 1) as f64;
            rest /= steps;
            x[i] = lower[i] + t * (upper[i] - lower[i]);
        }
        let m = margins(net, spec, &x).unwrap();
        let worst = m.iter().cloned().fold(f64::INFINITY, f64::min);
        min = min.min(worst);
        max = max.max(worst);
    }
    (min, max)
}

/// Uniform grid points of a box, row-major; handy for sampled soundness checks.
pub fn uniform_points_in_box(
    lower: &[f64],
    upper: &[f64],
    n: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            DVector::from_fn(lower.len(), |i, _| {
                lower[i] + rng.random::<f64>() * (upper[i] - lower[i])
            })
        })
        .collect()
}
