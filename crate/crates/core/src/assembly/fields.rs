//! The assembled solution and its coefficient field.
//!
//! The verified object is the pair (u, K): u = v + sum_i u_i with v the
//! fixed-point correction, and K the coefficient that makes the equation
//! hold exactly, read back from the capped source. The algebra collapses on
//! the raw branch: the source is kappa (U + P)^p - U^p, adding the tower
//! power sum U^p restores kappa (U + P)^p, and U + P is u term by term, so
//! K = kappa with no rounding at all. On the capped branch the cap raises
//! the source by the documented excess and K sits above kappa by
//! excess / u^p; the lift and kappa's own defect from the background are
//! both carried as log-domain gaps so the sandwich kappa <= K <= k stays
//! decidable at e^{-1400} scales.

use crate::correction::envelope::{envelope, Branch, Factor};
use crate::correction::hfun::{
    ln_companion, ln_source_ceiling, tower_sums, TailPad, TowerSums,
};
use crate::correction::kappa::Surgery;
use crate::correction::picard::CorrectionField;
use crate::correction::supersol::SuperSolution;
use crate::error::{Error, Result};
use crate::num::logdomain::{ln_pow1p_m1, logaddexp, logsumexp_slice, SignedLog};
use crate::params::family::BubbleFamily;
use crate::point::Point;

/// Everything needed to evaluate the assembled fields at a point.
#[derive(Clone, Debug)]
pub struct FieldAssembly<'a> {
    pub family: &'a BubbleFamily,
    pub surgery: Surgery<'a>,
    pub supersol: &'a SuperSolution,
    pub field: &'a CorrectionField,
}

/// The assembled fields at one probe.
#[derive(Clone, Debug)]
pub struct CoeffEval {
    /// ln of the correction v.
    pub ln_u0: f64,
    /// ln of the bubble tower sum_i u_i.
    pub ln_tower: f64,
    /// ln of the full solution u = v + sum_i u_i.
    pub ln_u: f64,
    /// The surgered curvature at the probe.
    pub kappa: Factor,
    /// The assembled coefficient K.
    pub coeff: Factor,
    /// Which branch the source took; `Capped` marks the deviation set.
    pub branch: Branch,
    /// ln(K - kappa); finite only on the capped branch.
    pub ln_lift: f64,
    /// The tower sums, for callers that post-process the split.
    pub sums: TowerSums,
    /// The probe lies beyond the correction's represented radial span, so
    /// ln_u0 (and everything downstream of it) is a frozen-tail reading
    /// rather than an interpolated one.
    pub extrapolated: bool,
}

/// 1 - z as a signed log value, exact for both representations.
pub fn factor_defect(f: Factor) -> SignedLog {
    match f {
        Factor::OneMinus(ln_s) => SignedLog { sign: 1, ln_abs: ln_s },
        Factor::Ln(l) if l == 0.0 => SignedLog::from_f64(0.0),
        Factor::Ln(l) if l < 0.0 => SignedLog { sign: 1, ln_abs: crate::num::logdomain::log1mexp(l) },
        Factor::Ln(l) => SignedLog { sign: -1, ln_abs: l + crate::num::logdomain::log1mexp(-l) },
    }
}

/// hi - lo as a signed log value: the slack of the ordering lo <= hi.
pub fn factor_slack(hi: Factor, lo: Factor) -> SignedLog {
    factor_defect(lo).sub(factor_defect(hi))
}

/// ln |grad u_i| at ln distance `ln_t` from the center: the bubble profile
/// is radial with |psi'| = psi * (n - 2m) t / (lambda^2 + t^2).
pub fn ln_bubble_grad(family: &BubbleFamily, index: u32, ln_t: f64) -> f64 {
    let e = family.entry(index);
    let two_h = family.dim.nf() - 2.0 * family.dim.mf();
    family.ln_bubble(index, ln_t) + two_h.ln() + ln_t
        - logaddexp(2.0 * e.ln_lambda, 2.0 * ln_t)
}

impl<'a> FieldAssembly<'a> {
    /// ln u_i at the probe for every bubble, in index order.
    pub fn ln_bubbles(&self, point: &Point) -> Vec<f64> {
        let centers = &self.family.placement.centers;
        (1..=self.family.entries.len() as u32)
            .map(|i| self.family.ln_bubble(i, point.ln_dist_to_center(centers, i)))
            .collect()
    }

    /// Evaluate kappa, K, u and the correction at one probe.
    pub fn eval(&self, point: &Point) -> Result<CoeffEval> {
        let dim = self.family.dim;
        let ln_us = self.ln_bubbles(point);
        let sums = tower_sums(dim, &ln_us);
        let ln_v = self.field.ln_v(self.family, point);
        let ln_tower = logsumexp_slice(&ln_us);
        let kappa = self.surgery.factor_at(point)?;
        let ln_p = ln_companion(&sums, ln_v, TailPad::None);
        // u = U + P: the companion restores exactly the mass the cap split
        // off, so this is the same number as v + sum u_i.
        let ln_u = logaddexp(sums.ln_cap, ln_p);
        let (_, branch) = envelope(dim, sums.ln_cap, kappa, ln_p)?;
        let (coeff, ln_lift) = match branch {
            Branch::Raw => (kappa, f64::NEG_INFINITY),
            Branch::Capped => {
                // The defect of K from the background satisfies
                // (1 - K) u^p = (U + P)^p - U^p - M. The first difference is
                // exact through the split power; subtracting the ceiling M
                // costs at most a factor p of relative precision, attained
                // at the branch seam.
                let ln_a =
                    dim.p() * sums.ln_cap + ln_pow1p_m1(ln_p - sums.ln_cap, dim.p());
                let ln_m = ln_source_ceiling(dim, kappa, &sums, ln_v, TailPad::None)?;
                let num = SignedLog::from_ln(ln_a).sub(SignedLog::from_ln(ln_m));
                if num.sign <= 0 {
                    return Err(Error::Invariant(format!(
                        "assembled coefficient reached the background \
                         curvature inside a bump at {point:?} \
                         (ln_a {ln_a}, ln_m {ln_m}, kappa {kappa:?})"
                    )));
                }
                let coeff = Factor::OneMinus(num.ln_abs - dim.p() * ln_u);
                let lift = factor_slack(coeff, kappa);
                let ln_lift =
                    if lift.sign > 0 { lift.ln_abs } else { f64::NEG_INFINITY };
                (coeff, ln_lift)
            }
        };
        Ok(CoeffEval {
            ln_u0: ln_v,
            ln_tower,
            ln_u: logaddexp(ln_v, ln_tower),
            kappa,
            coeff,
            branch,
            ln_lift,
            sums,
            extrapolated: !self
                .field
                .trusted(point.ln_radius(&self.family.placement.centers)),
        })
    }
}
