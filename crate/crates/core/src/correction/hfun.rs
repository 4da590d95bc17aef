//! The nonlinear source evaluated on the bubble tower plus a correction.
//!
//! At a point `x` with per-bubble values `u_i(x)` and correction level `v`,
//! the source splits through the dominant mass
//!
//! ```text
//!     U(x) = (sum_i u_i^p)^{1/p}
//! ```
//!
//! and the companion
//!
//! ```text
//!     P(x, v) = v + (sum_i u_i - U),
//! ```
//!
//! into the three ordered variants built from the capped power in
//! [`super::envelope`]:
//!
//! ```text
//!     under = f(U, kappa, P)   <=   mid = F(U, kappa, P)   <=
//!     over  = F(U, ktilde, P),
//! ```
//!
//! where `kappa <= ktilde` is the surgered curvature. The middle variant is
//! the one the fixed-point iteration integrates: it is non-negative and
//! monotone in `v` because `F` is monotone in its third argument.
//!
//! The excess `sum u_i - U` must never be formed by subtracting two nearby
//! log-domain sums: at a cascade center the terms reach `e^{+2000}` and the
//! rounding of a naive difference would exceed the true excess by hundreds
//! of orders of magnitude. Instead the excess is assembled from the ratios
//! to the dominant bubble, where the subtraction is provably benign: with
//! `R = sum_{k != max} u_k / u_max` and `R_p` its p-th power analogue,
//!
//! ```text
//!     sum u_i - U = u_max [ (1 + R) - (1 + R_p)^{1/p} ],
//! ```
//!
//! and `R_p <= R` forces the bracket to stay above `R (1 - 1/p)`, so no
//! catastrophic cancellation is possible for any input.
//!
//! When only the bubbles up to some index are summed explicitly, the
//! certified remainder bound of the family (a fixed multiple of the
//! envelope) can be added to `P` as a pad; the padded variant dominates the
//! exact one, which is the direction the supersolution check needs.

use crate::dims::Dimensions;
use crate::error::Result;
use crate::num::logdomain::{logaddexp, logsumexp_slice, SignedLog, LN_ZERO};

use super::envelope::{envelope, ln_cap, raw_signed, Branch, Factor};

/// The split of a finite bubble sum into dominant mass and excess.
#[derive(Clone, Copy, Debug)]
pub struct TowerSums {
    /// ln U, the p-norm of the bubble values; -inf for an empty tower.
    pub ln_cap: f64,
    /// ln (sum u_i - U); -inf when one bubble (or none) is present.
    pub ln_excess: f64,
    /// Index into the value slice of the dominant bubble, if any.
    pub argmax: Option<usize>,
}

/// Split a slice of per-bubble logs into the dominant p-norm and the excess
/// of the plain sum over it, both exactly representable in the log domain.
pub fn tower_sums(dim: Dimensions, ln_us: &[f64]) -> TowerSums {
    let p = dim.p();
    if ln_us.is_empty() {
        return TowerSums { ln_cap: LN_ZERO, ln_excess: LN_ZERO, argmax: None };
    }
    let (argmax, &ln_max) = ln_us
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("bubble logs are ordered"))
        .expect("nonempty slice has a maximum");
    if ln_us.len() == 1 || ln_max == LN_ZERO {
        return TowerSums {
            ln_cap: ln_max,
            ln_excess: LN_ZERO,
            argmax: Some(argmax),
        };
    }
    let d: Vec<f64> = ln_us
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != argmax)
        .map(|(_, l)| l - ln_max)
        .collect();
    let dp: Vec<f64> = d.iter().map(|l| p * l).collect();
    let ln_r = logsumexp_slice(&d);
    let ln_rp = logsumexp_slice(&dp);
    let ln_cap = ln_max + softplus_scaled(ln_rp, p);
    let ln_excess = if ln_r == LN_ZERO {
        LN_ZERO
    } else if ln_r < -35.0 {
        // (1 + R) - (1 + R_p)^{1/p} = R - R_p / p + O(R^2): the quadratic
        // remainder is below e^{-35} of the leading difference here.
        let bracket = SignedLog::from_ln(ln_r).sub(SignedLog::from_ln(ln_rp - p.ln()));
        debug_assert!(bracket.sign > 0, "excess bracket must stay positive");
        ln_max + bracket.ln_abs
    } else {
        // Plain arithmetic: the bracket is at least R (1 - 1/p), so the
        // subtraction loses at most one bit.
        let r = ln_r.exp();
        let rp = ln_rp.exp();
        let bracket = r - ((rp.ln_1p()) / p).exp_m1();
        ln_max + bracket.ln()
    };
    TowerSums { ln_cap, ln_excess, argmax: Some(argmax) }
}

/// ln (1 + e^a)^{1/p} = log1p(e^a) / p without overflow.
fn softplus_scaled(a: f64, p: f64) -> f64 {
    if a > 0.0 {
        (a + (-a).exp().ln_1p()) / p
    } else {
        a.exp().ln_1p() / p
    }
}

/// Optional certified bound on the bubbles a finite evaluation left out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TailPad {
    /// Every bubble was summed explicitly.
    None,
    /// ln of a pointwise upper bound for the remainder; adding it to the
    /// companion dominates the untruncated source.
    Bound(f64),
}

/// ln P = ln (v + excess [+ pad]).
pub fn ln_companion(sums: &TowerSums, ln_v: f64, pad: TailPad) -> f64 {
    let base = logaddexp(ln_v, sums.ln_excess);
    match pad {
        TailPad::None => base,
        TailPad::Bound(ln_tail) => logaddexp(base, ln_tail),
    }
}

/// The three ordered source variants at one point and level.
#[derive(Clone, Copy, Debug)]
pub struct SourceEval {
    /// Raw power with the surgered curvature; may be negative.
    pub under: SignedLog,
    /// Envelope with the surgered curvature: the integrand of the
    /// fixed-point iteration, always positive.
    pub ln_mid: f64,
    /// Which branch the middle variant took; the capped branch is what
    /// defines the deviation set of the assembled coefficient.
    pub branch: Branch,
    /// Envelope with the background curvature, dominating both.
    pub ln_over: f64,
}

/// Evaluate the source variants from precomputed tower sums, a correction
/// level, the surgered and background curvatures, and an optional tail pad.
pub fn eval_source(
    dim: Dimensions,
    kappa: Factor,
    ktilde: Factor,
    sums: &TowerSums,
    ln_v: f64,
    pad: TailPad,
) -> Result<SourceEval> {
    let ln_p = ln_companion(sums, ln_v, pad);
    let under = raw_signed(dim, sums.ln_cap, kappa, ln_p);
    let (ln_mid, branch) = envelope(dim, sums.ln_cap, kappa, ln_p)?;
    let (ln_over, _) = envelope(dim, sums.ln_cap, ktilde, ln_p)?;
    Ok(SourceEval { under, ln_mid, branch, ln_over })
}

/// ln of the middle variant's ceiling M(kappa, P); only defined below 1.
pub fn ln_source_ceiling(
    dim: Dimensions,
    kappa: Factor,
    sums: &TowerSums,
    ln_v: f64,
    pad: TailPad,
) -> Result<f64> {
    ln_cap(dim, kappa, ln_companion(sums, ln_v, pad))
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
    fn split_matches_plain_arithmetic_on_moderate_towers() {
        let dim = d82();
        let vals = [3.0f64, 2.0, 1.0];
        let ln_us: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        let s = tower_sums(dim, &ln_us);
        let cap = (vals.iter().map(|v| v.powi(3)).sum::<f64>()).powf(1.0 / 3.0);
        let excess = vals.iter().sum::<f64>() - cap;
        assert!((s.ln_cap - cap.ln()).abs() < 1e-12);
        assert!((s.ln_excess - excess.ln()).abs() < 1e-12);
        assert_eq!(s.argmax, Some(0));
    }

    #[test]
    fn split_handles_empty_single_and_deep_tails() {
        let dim = d82();
        let s = tower_sums(dim, &[]);
        assert_eq!(s.ln_cap, LN_ZERO);
        assert_eq!(s.ln_excess, LN_ZERO);
        let s = tower_sums(dim, &[4.2]);
        assert_eq!(s.ln_cap, 4.2);
        assert_eq!(s.ln_excess, LN_ZERO);
        // A companion 50 e-folds below the leader: the excess is the
        // companion itself to within e^{-100}.
        let s = tower_sums(dim, &[0.0, -50.0]);
        assert!((s.ln_excess + 50.0).abs() < 1e-9);
        assert!((s.ln_cap - 0.0).abs() < 1e-12);
        // The same tower shifted to e^{+2000}: the split must not lose it.
        let s = tower_sums(dim, &[2000.0, 1950.0]);
        assert!((s.ln_excess - 1950.0).abs() < 1e-9);
    }

    #[test]
    fn split_is_shift_invariant_across_the_branch_seam() {
        // The branch threshold is an implementation detail: values just on
        // either side of it must agree with an independent expansion. For
        // deep gaps the reference is the two-term series R - R_p / p (its
        // omitted terms are e^{-2|gap|} relatively); for shallow gaps the
        // plain formula is exact enough directly.
        let dim = d82();
        for gap in [-34.9f64, -35.1, -20.0] {
            let a = tower_sums(dim, &[0.0, gap]);
            let reference = (gap.exp() - (3.0 * gap).exp() / 3.0).ln();
            assert!(
                (a.ln_excess - reference).abs() < 1e-9,
                "gap {gap}: {} vs {reference}",
                a.ln_excess
            );
        }
        for gap in [-5.0f64, -1.0, -0.01] {
            let a = tower_sums(dim, &[0.0, gap]);
            let r: f64 = gap.exp();
            let rp: f64 = (3.0 * gap).exp();
            let reference = (1.0 + r - (1.0 + rp).powf(1.0 / 3.0)).ln();
            assert!(
                (a.ln_excess - reference).abs() < 1e-9,
                "gap {gap}: {} vs {reference}",
                a.ln_excess
            );
        }
    }

    #[test]
    fn source_variants_stay_ordered_on_random_inputs() {
        // under <= mid <= over for 1e5 random towers, levels, and
        // curvature pairs with kappa <= ktilde.
        let dim = d82();
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..100_000 {
            let nb = rng.gen_range(0..6usize);
            let ln_us: Vec<f64> = (0..nb).map(|_| rng.gen_range(-20.0f64..20.0)).collect();
            let sums = tower_sums(dim, &ln_us);
            let ln_v: f64 = rng.gen_range(-30.0..5.0);
            let kt_val: f64 = rng.gen_range(0.5..2.0);
            let drop: f64 = rng.gen_range(0.0..0.5);
            let kappa = Factor::from_value(kt_val * (1.0 - drop)).unwrap();
            let ktilde = Factor::from_value(kt_val).unwrap();
            let s = eval_source(dim, kappa, ktilde, &sums, ln_v, TailPad::None).unwrap();
            if s.under.sign > 0 {
                assert!(s.under.ln_abs <= s.ln_mid + 1e-9);
            }
            assert!(s.ln_mid <= s.ln_over + 1e-9);
            // The middle variant respects its ceiling whenever one exists.
            if !kappa.ge_one() {
                let ceil = ln_source_ceiling(dim, kappa, &sums, ln_v, TailPad::None).unwrap();
                assert!(s.ln_mid <= ceil + 1e-9);
            }
        }
    }

    #[test]
    fn padding_the_tail_only_raises_the_monotone_variant() {
        let dim = d82();
        let sums = tower_sums(dim, &[1.0, 0.0]);
        let kappa = Factor::OneMinus(-3.0);
        let ktilde = Factor::Ln(0.0);
        let bare = eval_source(dim, kappa, ktilde, &sums, -2.0, TailPad::None).unwrap();
        let padded =
            eval_source(dim, kappa, ktilde, &sums, -2.0, TailPad::Bound(-1.0)).unwrap();
        assert!(padded.ln_mid >= bare.ln_mid);
        assert!(padded.ln_over >= bare.ln_over);
    }

    #[test]
    fn curvature_at_one_forces_the_raw_branch() {
        let dim = d82();
        let sums = tower_sums(dim, &[5.0, 4.0, -2.0]);
        let s = eval_source(dim, Factor::Ln(0.0), Factor::Ln(0.0), &sums, 0.0, TailPad::None)
            .unwrap();
        assert_eq!(s.branch, Branch::Raw);
        assert!(s.under.sign > 0);
        assert!((s.under.ln_abs - s.ln_mid).abs() < 1e-12);
    }
}
