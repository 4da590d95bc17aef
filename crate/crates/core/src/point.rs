//! Evaluation points that survive extreme scale separation.
//!
//! Cascade bubbles concentrate at distances like e^{-1600} from their
//! centers; points that close cannot be represented as absolute coordinates.
//! A point is therefore either a plain coordinate vector or a centerapped
//! offset (center index, ln distance, unit direction), and every geometric
//! query answers in the ln domain.

use crate::params::geometry::CenterData;

/// A probe location.
#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    /// Absolute coordinates; used wherever f64 resolution suffices.
    Global(Vec<f64>),
    /// x = x_c + e^{ln_t} * dir for the center with the given 1-based index.
    Anchored { center: u32, ln_t: f64, dir: Vec<f64> },
}

impl Point {
    pub fn origin(n: usize) -> Self {
        Point::Global(vec![0.0; n])
    }

    /// The anchor index when the point rides a bubble center.
    pub fn anchor(&self) -> Option<u32> {
        match self {
            Point::Global(_) => None,
            Point::Anchored { center, .. } => Some(*center),
        }
    }

    /// Absolute coordinates, rounded to f64: offsets far below the center's
    /// own resolution collapse onto the center, which is exactly the regime
    /// the ln-domain queries exist for.
    pub fn coords(&self, centers: &[CenterData]) -> Vec<f64> {
        match self {
            Point::Global(x) => x.clone(),
            Point::Anchored { center, ln_t, dir } => {
                let c = &centers[*center as usize - 1];
                let t = ln_t.exp();
                c.position.iter().zip(dir).map(|(ci, di)| ci + t * di).collect()
            }
        }
    }

    /// ln |x - x_j| to the center with 1-based index `j`.
    pub fn ln_dist_to_center(&self, centers: &[CenterData], j: u32) -> f64 {
        let cj = &centers[j as usize - 1];
        match self {
            Point::Global(x) => ln_norm_diff(x, &cj.position),
            Point::Anchored { center, ln_t, dir } => {
                if *center == j {
                    return *ln_t;
                }
                let ci = &centers[*center as usize - 1];
                // |x_i + t d - x_j|: t is negligible against the center gap
                // whenever it underflows the correction; the ln1p form keeps
                // full precision when it does not.
                let base: Vec<f64> =
                    ci.position.iter().zip(&cj.position).map(|(a, b)| a - b).collect();
                let ln_gap = ln_norm(&base);
                let t = (ln_t - ln_gap).exp();
                if t == 0.0 {
                    return ln_gap;
                }
                let dot: f64 =
                    base.iter().zip(dir).map(|(b, d)| b * d).sum::<f64>() / ln_gap.exp();
                ln_gap + 0.5 * (2.0 * t * dot + t * t).ln_1p()
            }
        }
    }

    /// ln |x|.
    pub fn ln_radius(&self, centers: &[CenterData]) -> f64 {
        match self {
            Point::Global(x) => ln_norm(x),
            Point::Anchored { center, ln_t, dir } => {
                let c = &centers[*center as usize - 1];
                let t = (ln_t - c.ln_norm).exp();
                if t == 0.0 {
                    return c.ln_norm;
                }
                let dot: f64 =
                    c.position.iter().zip(dir).map(|(a, d)| a * d).sum::<f64>()
                        / c.ln_norm.exp();
                c.ln_norm + 0.5 * (2.0 * t * dot + t * t).ln_1p()
            }
        }
    }

    /// Sign of d/dt |x_c + t dir| at the point: +1 when the offset points
    /// outward from the origin, -1 inward, 0 tangentially. Lets shell
    /// membership be decided symbolically when the offset itself underflows.
    pub fn radial_side(&self, centers: &[CenterData]) -> i8 {
        match self {
            Point::Global(_) => 0,
            Point::Anchored { center, dir, .. } => {
                let c = &centers[*center as usize - 1];
                let dot: f64 = c.position.iter().zip(dir).map(|(a, d)| a * d).sum();
                if dot > 0.0 {
                    1
                } else if dot < 0.0 {
                    -1
                } else {
                    0
                }
            }
        }
    }
}

fn ln_norm(x: &[f64]) -> f64 {
    // Scale out the largest component so squares cannot under/overflow.
    let max = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return f64::NEG_INFINITY;
    }
    let s: f64 = x.iter().map(|v| (v / max) * (v / max)).sum();
    max.ln() + 0.5 * s.ln()
}

fn ln_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    ln_norm(&d)
}
