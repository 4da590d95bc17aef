//! Blow-up gauges and the smooth cutoff shared by all curvature patches.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radial gauge phi with phi(t) -> infinity as t -> 0+; the tower is tuned
/// so the i-th peak exceeds i * phi(|x_i|).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaugePhi {
    /// phi(t) = t^{-q}, q > 0.
    Power { q: f64 },
    /// phi(t) = exp(1/t).
    Exp,
}

impl GaugePhi {
    pub fn validate(&self) -> Result<()> {
        match self {
            GaugePhi::Power { q } if !(q.is_finite() && *q > 0.0) => Err(Error::Config(
                format!("power gauge needs q > 0, got {q}"),
            )),
            _ => Ok(()),
        }
    }

    /// ln phi at log-radius ln_t. The exp gauge produces values like e^{1/t}
    /// whose logarithm 1/t is still comfortably finite for any radius the
    /// tower reaches.
    #[inline]
    pub fn ln_phi(&self, ln_t: f64) -> f64 {
        match self {
            GaugePhi::Power { q } => -q * ln_t,
            GaugePhi::Exp => (-ln_t).exp(),
        }
    }
}

impl Default for GaugePhi {
    fn default() -> Self {
        GaugePhi::Power { q: 4.0 }
    }
}

/// Smooth transition built from g(u) = e^{-1/u}: equal to 1 for t <= 1,
/// 0 for t >= 3/2, strictly decreasing in between. Each curvature patch is
/// eta(|x - x_i| / rho_i).
pub fn eta(t: f64) -> f64 {
    if t <= 1.0 {
        1.0
    } else if t >= 1.5 {
        0.0
    } else {
        let ga = g(1.5 - t);
        let gb = g(t - 1.0);
        ga / (ga + gb)
    }
}

/// d eta / dt, exact closed form on the transition interval.
pub fn eta_prime(t: f64) -> f64 {
    if !(1.0..1.5).contains(&t) {
        return 0.0;
    }
    let ga = g(1.5 - t);
    let gb = g(t - 1.0);
    let dga = -gp(1.5 - t);
    let dgb = gp(t - 1.0);
    let denom = ga + gb;
    (dga * gb - ga * dgb) / (denom * denom)
}

#[inline]
fn g(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

#[inline]
fn gp(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp() / (u * u)
    }
}

/// Upper bound for sup |eta'|, computed once by a dense scan plus local
/// refinement; the derivative has a single interior maximum.
pub fn eta_prime_sup() -> f64 {
    static SUP: OnceLock<f64> = OnceLock::new();
    *SUP.get_or_init(|| {
        let mut best_t = 1.25;
        let mut best = 0.0;
        for i in 0..=200_000 {
            let t = 1.0 + 0.5 * i as f64 / 200_000.0;
            let v = eta_prime(t).abs();
            if v > best {
                best = v;
                best_t = t;
            }
        }
        // Golden-section refine around the scan peak.
        let (mut lo, mut hi) = (best_t - 1e-5, best_t + 1e-5);
        let phi = 0.5 * (5.0f64.sqrt() - 1.0);
        for _ in 0..80 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if eta_prime(a).abs() >= eta_prime(b).abs() {
                hi = b;
            } else {
                lo = a;
            }
        }
        let refined = eta_prime(0.5 * (lo + hi)).abs().max(best);
        refined * (1.0 + 1e-9)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_endpoints_and_monotone() {
        assert_eq!(eta(0.3), 1.0);
        assert_eq!(eta(1.0), 1.0);
        assert_eq!(eta(1.5), 0.0);
        assert_eq!(eta(7.0), 0.0);
        let mut prev = 1.0;
        for i in 1..=500 {
            let t = 1.0 + 0.5 * i as f64 / 500.0;
            let v = eta(t);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn eta_prime_matches_finite_differences() {
        for t in [1.05f64, 1.2, 1.25, 1.4, 1.49] {
            let h = 1e-7;
            let fd = (eta(t + h) - eta(t - h)) / (2.0 * h);
            assert!(
                (eta_prime(t) - fd).abs() < 1e-5 * fd.abs().max(1.0),
                "t={t}: {} vs {}",
                eta_prime(t),
                fd
            );
        }
        assert_eq!(eta_prime(0.9), 0.0);
        assert_eq!(eta_prime(1.6), 0.0);
    }

    #[test]
    fn eta_prime_sup_dominates_samples() {
        let c = eta_prime_sup();
        assert!(c > 1.0 && c < 10.0, "implausible cutoff slope bound {c}");
        for i in 0..=10_000 {
            let t = 1.0 + 0.5 * i as f64 / 10_000.0;
            assert!(eta_prime(t).abs() <= c);
        }
    }

    #[test]
    fn gauges() {
        let p = GaugePhi::Power { q: 4.0 };
        assert!((p.ln_phi(-2.0) - 8.0).abs() < 1e-15);
        let e = GaugePhi::Exp;
        // phi(2^-16) = exp(65536).
        let lnt = (2.0f64).powi(-16).ln();
        assert!((e.ln_phi(lnt) - 65536.0).abs() < 1e-6);
        assert!(GaugePhi::Power { q: -1.0 }.validate().is_err());
    }
}
