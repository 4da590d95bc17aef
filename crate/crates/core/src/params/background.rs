//! Prescribed background curvatures and their normalization.
//!
//! The pipeline verifies against a normalized curvature ktilde that agrees
//! with the requested k away from the origin and is identically 1 on a small
//! ball, obtained by blending k toward 1 with a cubic smoothstep. The blend
//! is a pointwise convex combination, so the bounds of ktilde are exactly
//! those of k clipped against 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Curvature presets. All evaluate to positive bounded C^1 functions; `Tilt`
/// deliberately has a nonzero gradient at the origin and exists to exercise
/// the configuration rejection path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundK {
    /// k = 1 everywhere.
    Const,
    /// k = 1 + amp * t^2 e^{1 - t^2}, t = |x| / scale. Flat to second order
    /// at the origin but not constant on any ball.
    Bump { amp: f64, scale: f64 },
    /// Identically 1 for |x| <= r0, then a bump in u = (|x| - r0)/scale.
    FlatBump { amp: f64, r0: f64, scale: f64 },
    /// k = 1 + amp * x_1 e^{-|x|^2}: gradient (amp, 0, ..., 0) at the origin.
    Tilt { amp: f64 },
}

fn bump_shape(t: f64) -> f64 {
    t * t * (1.0 - t * t).exp()
}

fn bump_shape_deriv(t: f64) -> f64 {
    (2.0 * t - 2.0 * t * t * t) * (1.0 - t * t).exp()
}

impl BackgroundK {
    pub fn validate(&self) -> Result<()> {
        let inf = self.inf();
        if inf <= 0.0 {
            return Err(Error::Config(format!(
                "background curvature must stay positive (inf = {inf})"
            )));
        }
        match self {
            BackgroundK::Bump { scale, .. } | BackgroundK::FlatBump { scale, .. }
                if *scale <= 0.0 =>
            {
                Err(Error::Config("bump scale must be positive".into()))
            }
            BackgroundK::FlatBump { r0, .. } if *r0 <= 0.0 => {
                Err(Error::Config("flat radius must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        match self {
            BackgroundK::Const => 1.0,
            BackgroundK::Bump { amp, scale } => 1.0 + amp * bump_shape(r / scale),
            BackgroundK::FlatBump { amp, r0, scale } => {
                if r <= *r0 {
                    1.0
                } else {
                    1.0 + amp * bump_shape((r - r0) / scale)
                }
            }
            BackgroundK::Tilt { amp } => {
                1.0 + amp * x.first().copied().unwrap_or(0.0) * (-r * r).exp()
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        match self {
            BackgroundK::Const => vec![0.0; x.len()],
            BackgroundK::Bump { amp, scale } => {
                radial_grad(x, r, amp * bump_shape_deriv(r / scale) / scale)
            }
            BackgroundK::FlatBump { amp, r0, scale } => {
                if r <= *r0 {
                    vec![0.0; x.len()]
                } else {
                    radial_grad(x, r, amp * bump_shape_deriv((r - r0) / scale) / scale)
                }
            }
            BackgroundK::Tilt { amp } => {
                let e = (-r * r).exp();
                let x1 = x.first().copied().unwrap_or(0.0);
                let mut g: Vec<f64> = x.iter().map(|xi| -2.0 * amp * x1 * xi * e).collect();
                if let Some(g0) = g.first_mut() {
                    *g0 += amp * e;
                }
                g
            }
        }
    }

    /// Exact infimum over R^n (closed forms: the bump shape peaks at 1).
    pub fn inf(&self) -> f64 {
        match self {
            BackgroundK::Const => 1.0,
            BackgroundK::Bump { amp, .. } | BackgroundK::FlatBump { amp, .. } => {
                1.0 + amp.min(0.0)
            }
            // max of |x_1| e^{-|x|^2} is e^{-1/2}/sqrt(2).
            BackgroundK::Tilt { amp } => 1.0 - amp.abs() * (0.5f64.exp() * 2.0f64.sqrt()).recip(),
        }
    }

    /// Exact supremum over R^n.
    pub fn sup(&self) -> f64 {
        match self {
            BackgroundK::Const => 1.0,
            BackgroundK::Bump { amp, .. } | BackgroundK::FlatBump { amp, .. } => {
                1.0 + amp.max(0.0)
            }
            BackgroundK::Tilt { amp } => 1.0 + amp.abs() * (0.5f64.exp() * 2.0f64.sqrt()).recip(),
        }
    }

    /// Largest radius on which k is identically 1 (infinite for Const),
    /// or None when no such ball exists.
    pub fn flat_radius(&self) -> Option<f64> {
        match self {
            BackgroundK::Const => Some(f64::INFINITY),
            BackgroundK::FlatBump { r0, .. } => Some(*r0),
            _ => None,
        }
    }

    pub fn grad_at_origin_is_zero(&self) -> bool {
        norm(&self.grad(&[0.0; 8])) == 0.0
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn radial_grad(x: &[f64], r: f64, dk_dr: f64) -> Vec<f64> {
    if r == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|xi| dk_dr * xi / r).collect()
}

/// Cubic smoothstep blend weight: 1 for t <= 1, 0 for t >= 2.
fn zeta(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t >= 2.0 {
        0.0
    } else {
        let u = t - 1.0;
        1.0 - (3.0 * u * u - 2.0 * u * u * u)
    }
}

fn zeta_prime(t: f64) -> f64 {
    if !(1.0..2.0).contains(&t) {
        0.0
    } else {
        let u = t - 1.0;
        -(6.0 * u - 6.0 * u * u)
    }
}

/// The normalized curvature: ktilde = zeta(|x|/eps') * 1 + (1 - zeta) * k,
/// identically 1 on B_{eps'} and equal to k beyond 2 eps'.
#[derive(Clone, Debug)]
pub struct NormalizedK {
    pub base: BackgroundK,
    /// Blend radius; ktilde = 1 on the ball of this radius.
    pub eps_prime: f64,
    /// delta = eps'/2: the construction stays inside B_{2 delta} where
    /// ktilde is exactly 1.
    pub delta: f64,
    /// Sampled C^1 distance ||ktilde - k|| (sup |diff| + sup |grad diff|).
    pub c1_dist: f64,
    /// Number of times the blend radius was halved.
    pub halvings: u32,
    /// True when the blend changes nothing because k is already flat there.
    pub exact: bool,
}

impl NormalizedK {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let k = self.base.eval(x);
        let z = zeta(norm(x) / self.eps_prime);
        z + (1.0 - z) * k
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let r = norm(x);
        let t = r / self.eps_prime;
        let z = zeta(t);
        let k = self.base.eval(x);
        let gk = self.base.grad(x);
        let zp_over = if r == 0.0 {
            0.0
        } else {
            zeta_prime(t) / (self.eps_prime * r)
        };
        x.iter()
            .zip(&gk)
            .map(|(xi, gki)| zp_over * xi * (1.0 - k) + (1.0 - z) * gki)
            .collect()
    }

    /// Exact bounds: the blend is a pointwise convex combination of k and 1.
    pub fn inf(&self) -> f64 {
        self.base.inf().min(1.0)
    }

    pub fn sup(&self) -> f64 {
        self.base.sup().max(1.0)
    }
}

/// Sampled C^1 distance between ktilde and k on the blend region, which is
/// where all the difference lives. Radial grid times a fixed direction set.
fn blend_c1_dist(base: &BackgroundK, eps_prime: f64, n: usize) -> f64 {
    let dirs = sample_directions(n);
    let tmp = NormalizedK {
        base: base.clone(),
        eps_prime,
        delta: eps_prime / 2.0,
        c1_dist: 0.0,
        halvings: 0,
        exact: false,
    };
    let mut worst = 0.0f64;
    for d in &dirs {
        for i in 0..=256 {
            let r = 2.0 * eps_prime * i as f64 / 256.0;
            let x: Vec<f64> = d.iter().map(|di| di * r).collect();
            let dv = (tmp.eval(&x) - base.eval(&x)).abs();
            let g1 = tmp.grad(&x);
            let g0 = base.grad(&x);
            let dg = norm(&g1.iter().zip(&g0).map(|(a, b)| a - b).collect::<Vec<_>>());
            worst = worst.max(dv + dg);
        }
    }
    worst
}

fn sample_directions(n: usize) -> Vec<Vec<f64>> {
    // Axes plus a few fixed diagonals: enough for the radial presets, and
    // deterministic by construction.
    let mut dirs = Vec::new();
    for a in 0..n {
        let mut d = vec![0.0; n];
        d[a] = 1.0;
        dirs.push(d);
    }
    let diag = (n as f64).sqrt().recip();
    dirs.push(vec![diag; n]);
    let mut alt: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { diag } else { -diag }).collect();
    alt[0] = diag;
    dirs.push(alt);
    dirs
}

/// Normalize a background curvature: pick the largest blend radius of the
/// form eps/2^j (or the flat radius when k is already 1 near the origin)
/// whose surgery stays within half the C^1 budget.
pub fn normalize_background(base: &BackgroundK, eps: f64, n: usize) -> Result<NormalizedK> {
    base.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {eps}")));
    }
    if !base.grad_at_origin_is_zero() {
        return Err(Error::Config(
            "background curvature must have vanishing gradient at the origin".into(),
        ));
    }
    if let Some(rf) = base.flat_radius() {
        // k is already 1 on B_rf: blending inside that ball changes nothing.
        let eps_prime = if rf.is_infinite() { eps } else { (eps / 2.0).min(rf / 2.0) };
        return Ok(NormalizedK {
            base: base.clone(),
            eps_prime,
            delta: eps_prime / 2.0,
            c1_dist: 0.0,
            halvings: 0,
            exact: true,
        });
    }
    let mut eps_prime = eps / 2.0;
    for halvings in 0..200u32 {
        let dist = blend_c1_dist(base, eps_prime, n);
        if dist < eps / 2.0 {
            return Ok(NormalizedK {
                base: base.clone(),
                eps_prime,
                delta: eps_prime / 2.0,
                c1_dist: dist,
                halvings,
                exact: false,
            });
        }
        eps_prime /= 2.0;
    }
    Err(Error::NonTermination {
        context: "background normalization".into(),
        steps: 200,
        violated: "sampled C1 distance of the blend stayed above eps/2".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn const_background_is_exact() {
        let nk = normalize_background(&BackgroundK::Const, 0.5, 8).unwrap();
        assert!(nk.exact);
        assert_eq!(nk.delta, 0.25);
        assert_eq!(nk.c1_dist, 0.0);
        assert_eq!(nk.eval(&[0.3; 8]), 1.0);
        assert_eq!(nk.inf(), 1.0);
        assert_eq!(nk.sup(), 1.0);
    }

    #[test]
    fn flat_bump_uses_flat_radius() {
        let base = BackgroundK::FlatBump { amp: 0.5, r0: 0.1, scale: 1.0 };
        let nk = normalize_background(&base, 0.5, 8).unwrap();
        assert!(nk.exact);
        assert_eq!(nk.eps_prime, 0.05);
        assert_eq!(nk.delta, 0.025);
        // ktilde == k everywhere for this preset.
        for r in [0.0, 0.05, 0.3, 1.1, 4.0] {
            let x = [r, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            assert_eq!(nk.eval(&x), base.eval(&x));
        }
    }

    #[test]
    fn bump_normalization_blends_near_origin() {
        let base = BackgroundK::Bump { amp: 0.5, scale: 1.0 };
        let nk = normalize_background(&base, 0.5, 8).unwrap();
        assert!(!nk.exact);
        assert!(nk.c1_dist < 0.25);
        // Identically 1 inside the blend radius.
        let x_in = [nk.eps_prime * 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(nk.eval(&x_in), 1.0);
        // Untouched outside twice the blend radius.
        let x_out = [nk.eps_prime * 2.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(nk.eval(&x_out), base.eval(&x_out));
        // Convex-combination bounds.
        assert_eq!(nk.inf(), 1.0);
        assert_eq!(nk.sup(), 1.5);
    }

    #[test]
    fn tilt_is_rejected() {
        let err = normalize_background(&BackgroundK::Tilt { amp: 0.1 }, 0.5, 8);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let base = BackgroundK::Bump { amp: 0.4, scale: 0.7 };
        let nk = normalize_background(&base, 0.5, 4).unwrap();
        let x = [0.11, -0.05, 0.02, 0.08];
        let g = nk.grad(&x);
        for a in 0..4 {
            let mut xp = x;
            let mut xm = x;
            let h = 1e-7;
            xp[a] += h;
            xm[a] -= h;
            let fd = (nk.eval(&xp) - nk.eval(&xm)) / (2.0 * h);
            assert!((g[a] - fd).abs() < 1e-6, "axis {a}: {} vs {fd}", g[a]);
        }
    }

    #[test]
    fn negative_amp_bounds() {
        let base = BackgroundK::Bump { amp: -0.3, scale: 1.0 };
        assert!((base.inf() - 0.7).abs() < 1e-15);
        assert_eq!(base.sup(), 1.0);
        assert!(BackgroundK::Bump { amp: -1.0, scale: 1.0 }.validate().is_err());
    }
}
