//! Stereographic transport of the assembled solution onto the sphere.
//!
//! The inverse projection from the north pole sends x in R^n to
//!
//! ```text
//!     xi = (2x, |x|^2 - 1) / (1 + |x|^2)
//! ```
//!
//! on the unit sphere in R^{n+1}; the origin goes to the south pole
//! (0, ..., 0, -1), which is therefore where the transported function blows
//! up. The conformal weight is (2 / (1 + |x|^2))^{(n-2m)/2}: the sphere
//! value is v(xi) = u(x) / weight, so a plane solution equal to the weight
//! itself transports to the constant 1. Weights and pole distances are kept
//! in the log domain against radii that underflow doubles by thousands of
//! e-folds.

use crate::num::logdomain::softplus;
use crate::point::Point;

use super::fields::{CoeffEval, FieldAssembly};

/// One transported sample.
#[derive(Clone, Debug)]
pub struct SpherePoint {
    /// Unit vector in R^{n+1}.
    pub xi: Vec<f64>,
    /// ln of the sphere value at xi.
    pub ln_v: f64,
    /// ln |xi - south pole| = ln 2 + ln r - (1/2) ln (1 + r^2), exact in
    /// the log domain even when the plane radius underflows.
    pub ln_pole_dist: f64,
}

/// The transported sample set.
#[derive(Clone, Debug)]
pub struct SphereSample {
    pub points: Vec<SpherePoint>,
}

/// Inverse stereographic projection from the north pole.
pub fn lift(x: &[f64]) -> Vec<f64> {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let scale = 1.0 / (1.0 + r2);
    let mut xi = Vec::with_capacity(x.len() + 1);
    xi.extend(x.iter().map(|v| 2.0 * v * scale));
    xi.push((r2 - 1.0) * scale);
    xi
}

/// Forward stereographic projection from the north pole; the north pole
/// itself is the image of infinity and must not be passed in.
pub fn project(xi: &[f64]) -> Vec<f64> {
    let (last, body) = xi.split_last().expect("sphere point has a last coordinate");
    let scale = 1.0 / (1.0 - last);
    body.iter().map(|v| v * scale).collect()
}

/// ln of the conformal weight base 2 / (1 + r^2) at log-radius ln_r.
pub fn ln_conformal(ln_r: f64) -> f64 {
    core::f64::consts::LN_2 - softplus(2.0 * ln_r)
}

/// ln |xi - south pole| for the lift of a plane point at log-radius ln_r.
pub fn ln_pole_dist(ln_r: f64) -> f64 {
    core::f64::consts::LN_2 + ln_r - 0.5 * softplus(2.0 * ln_r)
}

/// ln of the transported value from a plane value at log-radius ln_r.
pub fn ln_pullback(half_deficit: f64, ln_u: f64, ln_r: f64) -> f64 {
    ln_u - half_deficit * ln_conformal(ln_r)
}

/// Transport evaluated probes onto the sphere.
pub fn pullback(
    fa: &FieldAssembly,
    probes: &[Point],
    evals: &[CoeffEval],
) -> SphereSample {
    let centers = &fa.family.placement.centers;
    let h = fa.family.dim.half_deficit();
    let points = probes
        .iter()
        .zip(evals)
        .map(|(p, ev)| {
            let ln_r = p.ln_radius(centers);
            SpherePoint {
                xi: lift(&p.coords(centers)),
                ln_v: ln_pullback(h, ev.ln_u, ln_r),
                ln_pole_dist: ln_pole_dist(ln_r),
            }
        })
        .collect();
    SphereSample { points }
}
