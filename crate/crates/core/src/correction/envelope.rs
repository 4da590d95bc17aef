//! The capped power nonlinearity and its stationary envelope.
//!
//! The raw interaction of a dominant height `z1` with a coefficient `z2`
//! and a companion mass `z3` is
//!
//! ```text
//!     f(z1, z2, z3) = z2 (z1 + z3)^p - z1^p.
//! ```
//!
//! For `z2 < 1` this grows in `z1` only up to the stationary height
//!
//! ```text
//!     Z(z2, z3) = z3 z2^theta / (1 - z2^theta),
//! ```
//!
//! where `theta = (n-2m)/4m` satisfies `p - 1 = 1/theta`, and the maximum
//! value reached there is
//!
//! ```text
//!     M(z2, z3) = f(Z, z2, z3) = z2 z3^p / (1 - z2^theta)^{1/theta}.
//! ```
//!
//! The envelope `F` freezes `f` at that maximum: `F = f` for `z1 <= Z` (or
//! whenever `z2 >= 1`, where `f` never turns around), `F = M` beyond. `F`
//! is positive and non-decreasing in all three arguments, which is what
//! makes the fixed-point iteration on the correction monotone and keeps the
//! assembled coefficient pinched between the surgered curvature and the
//! background.
//!
//! Everything runs in the natural-log domain. The coefficient `z2` arrives
//! either as `ln z2` or as `ln(1 - z2)`; the second representation keeps
//! defects like `1 - z2 ~ e^{-1400}` exact where `ln z2` alone would round
//! to zero. Two complementary expansions of `f` avoid cancellation: with
//! the gap `s = 1 - z2` split out,
//!
//! ```text
//!     f = z1^p [(1 + z3/z1)^p - 1]  -  s (z1 + z3)^p,
//! ```
//!
//! the two terms stay comparable near the seam (their ratio tends to
//! `1 + theta` there), while for small `z2` the direct split
//! `z2 (z1+z3)^p - z1^p` is the stable one because the seam then sits at
//! log-separation `theta |ln z2|` from the cancellation locus.

use crate::dims::Dimensions;
use crate::error::{Error, Result};
use crate::num::logdomain::{
    log1mexp, logaddexp, ln_k_from_ln_s, ln_one_minus_kpow, ln_pow1p_m1, SignedLog, LN_ZERO,
};

/// A positive coefficient carried in whichever log representation keeps its
/// distance from 1 exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Factor {
    /// The coefficient as ln z2; any positive value.
    Ln(f64),
    /// The coefficient as 1 - e^{ln_s} with ln_s = ln(1 - z2) finite; this
    /// always encodes a value strictly below 1.
    OneMinus(f64),
}

impl Factor {
    /// Wrap a plain value, preferring the gap representation below 1.
    pub fn from_value(v: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("coefficient must be positive, got {v}")));
        }
        if v < 1.0 {
            Ok(Factor::OneMinus((1.0 - v).ln()))
        } else {
            Ok(Factor::Ln(v.ln()))
        }
    }

    /// ln z2.
    pub fn ln_value(self) -> f64 {
        match self {
            Factor::Ln(l) => l,
            Factor::OneMinus(ln_s) => ln_k_from_ln_s(ln_s),
        }
    }

    /// Whether z2 >= 1, the regime where the raw power never turns around.
    pub fn ge_one(self) -> bool {
        match self {
            Factor::Ln(l) => l >= 0.0,
            Factor::OneMinus(_) => false,
        }
    }

    /// ln(1 - z2), defined only below 1.
    pub fn ln_gap(self) -> Result<f64> {
        match self {
            Factor::OneMinus(ln_s) => Ok(ln_s),
            Factor::Ln(l) if l < 0.0 => Ok(log1mexp(l)),
            Factor::Ln(l) => Err(Error::Domain(format!(
                "coefficient e^{l} is not below 1, its defect is undefined"
            ))),
        }
    }

    /// ln(1 - z2^e) for e > 0, defined only below 1.
    pub fn ln_one_minus_pow(self, e: f64) -> Result<f64> {
        match self {
            Factor::OneMinus(ln_s) => Ok(ln_one_minus_kpow(ln_s, e)),
            Factor::Ln(l) if l < 0.0 => Ok(log1mexp(e * l)),
            Factor::Ln(l) => Err(Error::Domain(format!(
                "coefficient e^{l} is not below 1, 1 - z^{e} is undefined"
            ))),
        }
    }
}

/// Which side of the stationary height the envelope was evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// z1 at or below the stationary height (or z2 >= 1): F = f.
    Raw,
    /// z1 beyond the stationary height: F = M.
    Capped,
}

/// ln Z(z2, z3), the height at which the raw power stops growing.
/// The coefficient must be below 1.
pub fn ln_stationary(dim: Dimensions, z2: Factor, ln_z3: f64) -> Result<f64> {
    let theta = dim.theta();
    Ok(ln_z3 + theta * z2.ln_value() - z2.ln_one_minus_pow(theta)?)
}

/// ln M(z2, z3), the frozen maximum of the raw power.
/// The coefficient must be below 1.
pub fn ln_cap(dim: Dimensions, z2: Factor, ln_z3: f64) -> Result<f64> {
    let theta = dim.theta();
    Ok(z2.ln_value() + dim.p() * ln_z3 - dim.inv_theta() * z2.ln_one_minus_pow(theta)?)
}

/// The raw power f(z1, z2, z3) as a signed log value. Finite for every
/// positive combination; `ln_z1 = -inf` means z1 = 0 and gives z2 z3^p.
pub fn raw_signed(dim: Dimensions, ln_z1: f64, z2: Factor, ln_z3: f64) -> SignedLog {
    let p = dim.p();
    if ln_z1 == LN_ZERO {
        return SignedLog::from_ln(z2.ln_value() + p * ln_z3);
    }
    if ln_z3 == LN_ZERO {
        // f = (z2 - 1) z1^p.
        return match z2 {
            Factor::OneMinus(ln_s) => SignedLog::from_ln(ln_s + p * ln_z1).neg(),
            Factor::Ln(l) if l == 0.0 => SignedLog::ZERO,
            Factor::Ln(l) if l < 0.0 => SignedLog::from_ln(log1mexp(l) + p * ln_z1).neg(),
            Factor::Ln(l) => SignedLog::from_ln(l + log1mexp(-l) + p * ln_z1),
        };
    }
    let ln_z2 = z2.ln_value();
    let use_gap_split = match z2 {
        Factor::OneMinus(_) => true,
        Factor::Ln(l) => l > -core::f64::consts::LN_2,
    };
    if use_gap_split {
        // f = z1^p [(1+z3/z1)^p - 1] - (1 - z2)(z1+z3)^p, with the second
        // term's sign flipped once z2 crosses 1. Near the stationary height
        // the two terms differ by the healthy ratio 1 + theta.
        let a = p * ln_z1 + ln_pow1p_m1(ln_z3 - ln_z1, p);
        let grown = p * logaddexp(ln_z1, ln_z3);
        let second = match z2 {
            Factor::OneMinus(ln_s) => SignedLog::from_ln(ln_s + grown).neg(),
            Factor::Ln(l) if l == 0.0 => SignedLog::ZERO,
            Factor::Ln(l) if l < 0.0 => SignedLog::from_ln(log1mexp(l) + grown).neg(),
            Factor::Ln(l) => SignedLog::from_ln(l + log1mexp(-l) + grown),
        };
        SignedLog::from_ln(a).add(second)
    } else {
        // Small coefficient: the direct split z2 (z1+z3)^p - z1^p only
        // cancels near the sign change of f itself, which sits a distance
        // theta |ln z2| beyond the stationary height in the log domain.
        let a = ln_z2 + p * logaddexp(ln_z1, ln_z3);
        let b = p * ln_z1;
        SignedLog::from_ln(a).sub(SignedLog::from_ln(b))
    }
}

/// The envelope F(z1, z2, z3) = f(min(z1, Z), z2, z3) as ln F, together
/// with the branch taken. F is strictly positive, so the plain log is
/// well-defined; a non-positive raw value on the raw branch indicates a
/// rounding catastrophe and is reported as an invariant failure.
pub fn envelope(dim: Dimensions, ln_z1: f64, z2: Factor, ln_z3: f64) -> Result<(f64, Branch)> {
    if !z2.ge_one() {
        let seam = ln_stationary(dim, z2, ln_z3)?;
        if ln_z1 > seam {
            return Ok((ln_cap(dim, z2, ln_z3)?, Branch::Capped));
        }
    }
    let f = raw_signed(dim, ln_z1, z2, ln_z3);
    if f.sign <= 0 {
        return Err(Error::Invariant(format!(
            "raw power lost positivity below the stationary height: \
             ln_z1 = {ln_z1}, z2 = {z2:?}, ln_z3 = {ln_z3}, got {f:?}"
        )));
    }
    Ok((f.ln_abs, Branch::Raw))
}

/// M - f as a signed log value, the excess the cap removes. Non-negative on
/// the capped branch; near the stationary height it is a genuine difference
/// of close quantities and carries the corresponding absolute error of
/// roughly `M * 1e-16`, which is documented where the value is reported.
pub fn cap_excess(dim: Dimensions, ln_z1: f64, z2: Factor, ln_z3: f64) -> Result<SignedLog> {
    let m = SignedLog::from_ln(ln_cap(dim, z2, ln_z3)?);
    Ok(m.sub(raw_signed(dim, ln_z1, z2, ln_z3)))
}

/// Plain-number wrapper over [`raw_signed`] for ranges where f64 suffices.
pub fn eval_raw(dim: Dimensions, z1: f64, z2: f64, z3: f64) -> f64 {
    z2 * (z1 + z3).powf(dim.p()) - z1.powf(dim.p())
}

/// Plain-number wrapper over [`ln_stationary`].
pub fn eval_stationary(dim: Dimensions, z2: f64, z3: f64) -> Result<f64> {
    Ok(ln_stationary(dim, Factor::from_value(z2)?, z3.ln())?.exp())
}

/// Plain-number wrapper over [`ln_cap`].
pub fn eval_cap(dim: Dimensions, z2: f64, z3: f64) -> Result<f64> {
    Ok(ln_cap(dim, Factor::from_value(z2)?, z3.ln())?.exp())
}

/// Plain-number wrapper over [`envelope`].
pub fn eval_envelope(dim: Dimensions, z1: f64, z2: f64, z3: f64) -> Result<f64> {
    Ok(envelope(dim, z1.ln(), Factor::from_value(z2)?, z3.ln())?.0.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn d82() -> Dimensions {
        Dimensions::new(8, 2).unwrap()
    }

    #[test]
    fn worked_values_at_p_three() {
        // p = 3, theta = 1/2, z2 = 1/4, z3 = 2: the stationary height is
        // 2 * (1/2) / (1 - 1/2) = 2 and the maximum (1/4) * 4^3 - 2^3 = 8.
        let dim = d82();
        assert!((eval_stationary(dim, 0.25, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((eval_cap(dim, 0.25, 2.0).unwrap() - 8.0).abs() < 1e-12);
        assert!((eval_raw(dim, 2.0, 0.25, 2.0) - 8.0).abs() < 1e-12);
        assert!((eval_raw(dim, 1.0, 0.25, 2.0) - 5.75).abs() < 1e-12);
        assert!((eval_raw(dim, 4.0, 0.25, 2.0) - (-10.0)).abs() < 1e-12);
        // The envelope freezes at 8 beyond the stationary height.
        assert!((eval_envelope(dim, 1.0, 0.25, 2.0).unwrap() - 5.75).abs() < 1e-12);
        assert!((eval_envelope(dim, 4.0, 0.25, 2.0).unwrap() - 8.0).abs() < 1e-12);
        let (_, b) = envelope(dim, 4.0f64.ln(), Factor::from_value(0.25).unwrap(), 2.0f64.ln())
            .unwrap();
        assert_eq!(b, Branch::Capped);
    }

    #[test]
    fn coefficient_at_or_above_one_never_caps() {
        let dim = d82();
        for z2 in [1.0, 1.5, 7.0] {
            let f = Factor::from_value(z2).unwrap();
            assert!(f.ge_one());
            assert!(ln_cap(dim, f, 0.0).is_err());
            assert!(ln_stationary(dim, f, 0.0).is_err());
            for z1 in [0.1f64, 1.0, 40.0] {
                let (ln_f, b) = envelope(dim, z1.ln(), f, 0.0).unwrap();
                assert_eq!(b, Branch::Raw);
                let direct = eval_raw(dim, z1, z2, 1.0);
                assert!((ln_f.exp() - direct).abs() <= 1e-10 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn seam_is_continuous_and_is_the_maximum() {
        let dim = d82();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let z2: f64 = rng.gen_range(1e-6..1.0 - 1e-6);
            let z3: f64 = rng.gen_range(1e-3..10.0);
            let f2 = Factor::from_value(z2).unwrap();
            let ln_z = ln_stationary(dim, f2, z3.ln()).unwrap();
            let ln_m = ln_cap(dim, f2, z3.ln()).unwrap();
            // The raw power at the stationary height equals the cap.
            let at_seam = raw_signed(dim, ln_z, f2, z3.ln());
            assert!(at_seam.sign > 0);
            assert!(
                (at_seam.ln_abs - ln_m).abs() < 1e-10,
                "z2={z2} z3={z3}: ln f(Z)={} vs ln M={ln_m}",
                at_seam.ln_abs
            );
            // The envelope is continuous across the seam.
            for off in [-1e-9, 1e-9] {
                let (ln_f, _) = envelope(dim, ln_z + off, f2, z3.ln()).unwrap();
                assert!((ln_f.exp() - ln_m.exp()).abs() <= 1e-6 * ln_m.exp());
            }
            // And it dominates the raw power while staying positive.
            for z1 in [0.3 * ln_z.exp(), ln_z.exp(), 3.0 * ln_z.exp(), 100.0] {
                let (ln_f, _) = envelope(dim, z1.ln(), f2, z3.ln()).unwrap();
                assert!(ln_f.is_finite());
                assert!(ln_f.exp() >= eval_raw(dim, z1, z2, z3) - 1e-9 * ln_m.exp().max(1.0));
            }
        }
    }

    #[test]
    fn gap_representation_survives_defects_beyond_f64() {
        // 1 - z2 = e^{-100}, z3 = 1: ln Z = theta * ln z2 - ln(1 - z2^theta)
        // with theta = 1/2 gives Z ~ 2 e^{100} and M ~ 4 e^{200}; both are
        // far outside what the plain representation of z2 could see.
        let dim = d82();
        let f2 = Factor::OneMinus(-100.0);
        let ln_z = ln_stationary(dim, f2, 0.0).unwrap();
        let ln_m = ln_cap(dim, f2, 0.0).unwrap();
        // 1 - z2^{1/2} = (1 - z2) / (1 + z2^{1/2}) ~ e^{-100} / 2.
        assert!((ln_z - (100.0 + core::f64::consts::LN_2)).abs() < 1e-9);
        assert!((ln_m - (200.0 + 2.0 * core::f64::consts::LN_2)).abs() < 1e-9);
        let at_seam = raw_signed(dim, ln_z, f2, 0.0);
        assert!(at_seam.sign > 0);
        assert!((at_seam.ln_abs - ln_m).abs() < 1e-9);
        // Deep defects: 1 - z2 = e^{-1400} stays finite and consistent.
        let deep = Factor::OneMinus(-1400.0);
        let ln_z_deep = ln_stationary(dim, deep, 0.0).unwrap();
        let at = raw_signed(dim, ln_z_deep, deep, 0.0);
        assert!(at.sign > 0);
        assert!((at.ln_abs - ln_cap(dim, deep, 0.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn stationary_height_matches_cap_through_the_defect_identity() {
        // Z(z2, z3) = M(z2, 1)^theta * z3: both sides assembled from the
        // same logs must agree to rounding.
        let dim = d82();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let z2 = Factor::OneMinus(-rng.gen_range(0.01f64..300.0));
            let ln_z3: f64 = rng.gen_range(-5.0..5.0);
            let lhs = ln_stationary(dim, z2, ln_z3).unwrap();
            let rhs = dim.theta() * ln_cap(dim, z2, 0.0).unwrap() + ln_z3;
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn cap_excess_is_nonnegative_beyond_the_seam() {
        let dim = d82();
        let f2 = Factor::from_value(0.25).unwrap();
        let ln_z3 = 2.0f64.ln();
        for z1 in [2.0f64, 2.5, 4.0, 100.0] {
            let e = cap_excess(dim, z1.ln(), f2, ln_z3).unwrap();
            assert!(e.sign >= 0, "excess must not be negative at z1={z1}");
        }
        // Deep in the cap the excess is M minus the (negative) raw value.
        let e = cap_excess(dim, 100.0f64.ln(), f2, ln_z3).unwrap();
        let expect = 8.0 - eval_raw(dim, 100.0, 0.25, 2.0);
        assert!((e.to_f64() - expect).abs() < 1e-6 * expect);
    }

    #[test]
    fn zero_arguments_collapse_to_the_closed_forms() {
        let dim = d82();
        let f2 = Factor::from_value(0.25).unwrap();
        // z1 = 0: f = z2 z3^p.
        let f = raw_signed(dim, LN_ZERO, f2, 2.0f64.ln());
        assert!(f.sign > 0);
        assert!((f.ln_abs.exp() - 2.0).abs() < 1e-12);
        // z3 = 0: f = (z2 - 1) z1^p.
        let f = raw_signed(dim, 2.0f64.ln(), f2, LN_ZERO);
        assert!(f.sign < 0);
        assert!((f.ln_abs.exp() - 6.0).abs() < 1e-12);
        let f = raw_signed(dim, 2.0f64.ln(), Factor::Ln(0.0), LN_ZERO);
        assert!(f.is_zero());
    }
}
