//! Sound output bounding over a box and three-way safety classification.
//!
//! Two bounding routes are maintained: plain interval propagation (IBP) and a
//! backward pass that substitutes per-neuron linear relaxations down to the
//! input and concretizes there. The classifier intersects the two, so the
//! bounds it reports are never looser than either route alone. All functions
//! are stateless in (net, spec, box) and safe to call from any number of
//! threads at once; the engine's worker pool relies on this.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::BoxRegion;
use crate::model::{Activation, Network, SafetySpec};

/// A line `y = slope * z + intercept` used as a one-sided bound on an
/// activation over a pre-activation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLine {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearLine {
    pub const IDENTITY: LinearLine = LinearLine {
        slope: 1.0,
        intercept: 0.0,
    };
    pub const ZERO: LinearLine = LinearLine {
        slope: 0.0,
        intercept: 0.0,
    };

    pub fn at(&self, z: f64) -> f64 {
        self.slope * z + self.intercept
    }

    fn through(point: (f64, f64), slope: f64) -> LinearLine {
        LinearLine {
            slope,
            intercept: point.1 - slope * point.0,
        }
    }
}

/// ReLU relaxation over `[l, u]`: stable segments collapse to exact lines;
/// the unstable case uses the chord as upper line and a slope of 0 or 1 below,
/// whichever subtends the smaller area (ties broken toward 0 so output is
/// platform independent).
pub fn relax_relu(l: f64, u: f64) -> Result<(LinearLine, LinearLine)> {
    check_interval(l, u)?;
    if u <= 0.0 {
        return Ok((LinearLine::ZERO, LinearLine::ZERO));
    }
    if l >= 0.0 {
        return Ok((LinearLine::IDENTITY, LinearLine::IDENTITY));
    }
    let slope = u / (u - l);
    let upper = LinearLine {
        slope,
        intercept: -l * slope,
    };
    let lower = if l.abs() >= u {
        LinearLine::ZERO
    } else {
        LinearLine::IDENTITY
    };
    Ok((lower, upper))
}

fn tanh_deriv(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

/// Tanh relaxation over `[l, u]`.
///
/// Pure convex or concave segments use the chord on one side and the tangent
/// at the midpoint on the other. Intervals straddling the inflection use the
/// line through the far endpoint that is tangent to the curve on the opposite
/// side, with the tangency point located by bisection.
pub fn relax_tanh(l: f64, u: f64) -> Result<(LinearLine, LinearLine)> {
    check_interval(l, u)?;
    if l == u {
        // Degenerate interval: the tangent at the point bounds both sides.
        let line = LinearLine::through((l, l.tanh()), tanh_deriv(l));
        return Ok((line, line));
    }
    let chord = LinearLine::through((l, l.tanh()), (u.tanh() - l.tanh()) / (u - l));
    if u <= 0.0 {
        // Convex segment: chord above, midpoint tangent below.
        let m = 0.5 * (l + u);
        let lower = LinearLine::through((m, m.tanh()), tanh_deriv(m));
        return Ok((lower, chord));
    }
    if l >= 0.0 {
        // Concave segment: chord below, midpoint tangent above.
        let m = 0.5 * (l + u);
        let upper = LinearLine::through((m, m.tanh()), tanh_deriv(m));
        return Ok((chord, upper));
    }
    // Mixed interval. Upper line passes through (l, tanh l) and touches the
    // curve at some t >= 0; lower line is the mirrored construction through
    // (u, tanh u). Falls back to the global +-1 bounds if bisection stalls.
    let upper = match endpoint_tangent(l) {
        Some(slope) => LinearLine::through((l, l.tanh()), slope),
        None => LinearLine {
            slope: 0.0,
            intercept: 1.0,
        },
    };
    let lower = match endpoint_tangent(-u) {
        Some(slope) => LinearLine::through((u, u.tanh()), slope),
        None => LinearLine {
            slope: 0.0,
            intercept: -1.0,
        },
    };
    Ok((lower, upper))
}

/// Slope of the line through `(l, tanh l)` (with `l < 0`) tangent to tanh at
/// some `t >= 0`, found by bisection on the tangency condition. The returned
/// slope comes from the low side of the final bracket; tanh' is decreasing on
/// `[0, inf)`, so this rounds the slope up and keeps the line an upper bound.
fn endpoint_tangent(l: f64) -> Option<f64> {
    let g = |t: f64| l.tanh() + tanh_deriv(t) * (t - l) - t.tanh();
    // g(0) = tanh(l) - l > 0 for l < 0; g decreases to tanh(l) - 1 < 0.
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut expand = 0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        expand += 1;
        if expand > 60 {
            return None;
        }
    }
    let mut iters = 0;
    while hi - lo > 1e-9 {
        iters += 1;
        if iters > 200 {
            return None;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(tanh_deriv(lo))
}

/// Dispatch point for per-activation relaxations; supporting a new activation
/// means adding a sound line pair here (and its interval image in
/// [`layer_pre_bounds`]).
fn relax_activation(act: Activation, l: f64, u: f64) -> Result<(LinearLine, LinearLine)> {
    match act {
        Activation::Relu => relax_relu(l, u),
        Activation::Tanh => relax_tanh(l, u),
        Activation::Identity => Ok((LinearLine::IDENTITY, LinearLine::IDENTITY)),
    }
}

fn check_interval(l: f64, u: f64) -> Result<()> {
    if l > u || l.is_nan() || u.is_nan() {
        return Err(Error::config(format!(
            "invalid pre-activation interval: lower {l} > upper {u}"
        )));
    }
    Ok(())
}

/// Affine bounds on the margin vector as functions of the input: for every x
/// in the box, `lower_coeffs x + lower_const <= C f(x) - a <= upper_coeffs x
/// + upper_const` (row-wise).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBounds {
    pub lower_coeffs: DMatrix<f64>,
    pub lower_const: DVector<f64>,
    pub upper_coeffs: DMatrix<f64>,
    pub upper_const: DVector<f64>,
}

impl LinearBounds {
    pub fn eval_lower(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.lower_coeffs * x + &self.lower_const
    }

    pub fn eval_upper(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.upper_coeffs * x + &self.upper_const
    }

    /// Worst-case values of both affine families over a box.
    pub fn concretize(&self, r: &BoxRegion) -> (DVector<f64>, DVector<f64>) {
        let k = self.lower_const.len();
        let lo = DVector::from_fn(k, |i, _| {
            let mut v = self.lower_const[i];
            for j in 0..r.dim() {
                let c = self.lower_coeffs[(i, j)];
                v += c * if c >= 0.0 { r.lower()[j] } else { r.upper()[j] };
            }
            v
        });
        let hi = DVector::from_fn(k, |i, _| {
            let mut v = self.upper_const[i];
            for j in 0..r.dim() {
                let c = self.upper_coeffs[(i, j)];
                v += c * if c >= 0.0 { r.upper()[j] } else { r.lower()[j] };
            }
            v
        });
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Safe,
    Unsafe,
    Unknown,
}

/// Classification of a box together with the per-constraint margin bounds
/// that justify it.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub status: Status,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Verdict {
    /// Safe requires every constraint certain; Unsafe needs one constraint
    /// certainly violated by all points. Everything else stays Unknown.
    pub fn from_bounds(lower: DVector<f64>, upper: DVector<f64>) -> Verdict {
        let status = if lower.iter().all(|v| *v >= 0.0) {
            Status::Safe
        } else if upper.iter().any(|v| *v < 0.0) {
            Status::Unsafe
        } else {
            Status::Unknown
        };
        Verdict {
            status,
            lower,
            upper,
        }
    }
}

/// Pre-activation interval for each layer, by forward interval propagation.
/// This is the one place intermediate bounds are produced; swapping in a
/// tighter (e.g. recursive backward) scheme here would tighten every
/// downstream relaxation at the cost of quadratic layer passes.
fn layer_pre_bounds(net: &Network, r: &BoxRegion) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    if r.dim() != net.input_dim() {
        return Err(Error::dim("bounds input box", net.input_dim(), r.dim()));
    }
    let mut lo = r.lower().clone();
    let mut hi = r.upper().clone();
    let mut pres = Vec::with_capacity(net.layers().len());
    for (idx, layer) in net.layers().iter().enumerate() {
        if layer.weights.iter().any(|w| !w.is_finite()) || layer.bias.iter().any(|b| !b.is_finite())
        {
            return Err(Error::config(format!("layer {idx} has non-finite weights")));
        }
        let center = (&lo + &hi) * 0.5;
        let radius = (&hi - &lo) * 0.5;
        let z_center = &layer.weights * center + &layer.bias;
        let z_radius = layer.weights.abs() * radius;
        let z_lo = &z_center - &z_radius;
        let z_hi = z_center + z_radius;
        lo = z_lo.map(|v| layer.activation.apply(v));
        hi = z_hi.map(|v| layer.activation.apply(v));
        pres.push((z_lo, z_hi));
    }
    Ok(pres)
}

/// Sound elementwise output intervals by interval bound propagation. The
/// affine step splits weights by sign (via center/radius form); ReLU clamps
/// and tanh maps endpoints, both exact images of monotone functions.
pub fn ibp_bounds(net: &Network, r: &BoxRegion) -> Result<(DVector<f64>, DVector<f64>)> {
    let pres = layer_pre_bounds(net, r)?;
    let (z_lo, z_hi) = pres.last().expect("network has layers");
    let act = net.layers().last().unwrap().activation;
    Ok((z_lo.map(|v| act.apply(v)), z_hi.map(|v| act.apply(v))))
}

fn margin_bounds_of_output(
    spec: &SafetySpec,
    y_lo: &DVector<f64>,
    y_hi: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let k = spec.constraint_count();
    let m = y_lo.len();
    let lo = DVector::from_fn(k, |i, _| {
        let mut v = -spec.a[i];
        for j in 0..m {
            let c = spec.c[(i, j)];
            v += c * if c >= 0.0 { y_lo[j] } else { y_hi[j] };
        }
        v
    });
    let hi = DVector::from_fn(k, |i, _| {
        let mut v = -spec.a[i];
        for j in 0..m {
            let c = spec.c[(i, j)];
            v += c * if c >= 0.0 { y_hi[j] } else { y_lo[j] };
        }
        v
    });
    (lo, hi)
}

/// Interval bounds on the margins `C f(x) - a`, derived from [`ibp_bounds`].
pub fn ibp_margin_bounds(
    net: &Network,
    spec: &SafetySpec,
    r: &BoxRegion,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_spec(net, spec)?;
    let (y_lo, y_hi) = ibp_bounds(net, r)?;
    Ok(margin_bounds_of_output(spec, &y_lo, &y_hi))
}

/// Backward pass over precomputed pre-activation intervals.
fn backward_linear(
    net: &Network,
    spec: &SafetySpec,
    pres: &[(DVector<f64>, DVector<f64>)],
) -> Result<LinearBounds> {
    let mut a_lo = spec.c.clone();
    let mut c_lo = -spec.a.clone();
    let mut a_up = spec.c.clone();
    let mut c_up = -spec.a.clone();

    for (layer, (z_lo, z_hi)) in net.layers().iter().zip(pres).rev() {
        if layer.activation != Activation::Identity {
            let lines: Vec<(LinearLine, LinearLine)> = (0..layer.output_dim())
                .map(|j| relax_activation(layer.activation, z_lo[j], z_hi[j]))
                .collect::<Result<_>>()?;
            for i in 0..a_lo.nrows() {
                for (j, (low_line, up_line)) in lines.iter().enumerate() {
                    let coeff = a_lo[(i, j)];
                    let line = if coeff >= 0.0 { low_line } else { up_line };
                    a_lo[(i, j)] = coeff * line.slope;
                    c_lo[i] += coeff * line.intercept;

                    let coeff = a_up[(i, j)];
                    let line = if coeff >= 0.0 { up_line } else { low_line };
                    a_up[(i, j)] = coeff * line.slope;
                    c_up[i] += coeff * line.intercept;
                }
            }
        }
        c_lo += &a_lo * &layer.bias;
        c_up += &a_up * &layer.bias;
        a_lo = &a_lo * &layer.weights;
        a_up = &a_up * &layer.weights;
    }

    Ok(LinearBounds {
        lower_coeffs: a_lo,
        lower_const: c_lo,
        upper_coeffs: a_up,
        upper_const: c_up,
    })
}

/// Backward substitution of the margin rows through every layer's relaxation,
/// producing affine bounds in the input variables. Pre-activation intervals
/// come from the IBP pass, which keeps the cost linear in the layer count.
pub fn crown_linear_bounds(
    net: &Network,
    spec: &SafetySpec,
    r: &BoxRegion,
) -> Result<LinearBounds> {
    check_spec(net, spec)?;
    let pres = layer_pre_bounds(net, r)?;
    backward_linear(net, spec, &pres)
}

/// Margin bounds and verdict for a box: the backward linear pass concretized
/// over the box, intersected per constraint with the IBP route so the result
/// is at least as tight as either. One forward interval pass feeds both
/// routes.
pub fn crown_bounds(net: &Network, spec: &SafetySpec, r: &BoxRegion) -> Result<Verdict> {
    check_spec(net, spec)?;
    let pres = layer_pre_bounds(net, r)?;
    let linear = backward_linear(net, spec, &pres)?;
    let (crown_lo, crown_hi) = linear.concretize(r);

    let (z_lo, z_hi) = pres.last().expect("network has layers");
    let act = net.layers().last().unwrap().activation;
    let y_lo = z_lo.map(|v| act.apply(v));
    let y_hi = z_hi.map(|v| act.apply(v));
    let (ibp_lo, ibp_hi) = margin_bounds_of_output(spec, &y_lo, &y_hi);

    let lower = crown_lo.zip_map(&ibp_lo, f64::max);
    let upper = crown_hi.zip_map(&ibp_hi, f64::min);
    Ok(Verdict::from_bounds(lower, upper))
}

/// Three-way classification of a box; this is the verification step the
/// refinement engine dispatches to its worker pool.
pub fn classify(net: &Network, spec: &SafetySpec, r: &BoxRegion) -> Result<Verdict> {
    crown_bounds(net, spec, r)
}

fn check_spec(net: &Network, spec: &SafetySpec) -> Result<()> {
    if spec.output_dim() != net.output_dim() {
        return Err(Error::dim(
            "safety spec columns",
            net.output_dim(),
            spec.output_dim(),
        ));
    }
    Ok(())
}
