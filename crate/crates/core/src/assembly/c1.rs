//! C^1 control of the assembled coefficient.
//!
//! Off the deviation set the coefficient IS the surgered curvature, so its
//! gradient is the closed form, re-verified here against log-domain finite
//! differences. On the deviation set the gradient picks up the lift term,
//! which climbs from zero to the curvature defect across the branch seam;
//! its radial derivative is sampled on a per-bubble grid refined around the
//! certified seam radius, padded with a tangential bound, and compared
//! against the frozen gradient envelope. The per-shell suprema feed the
//! decreasing-trend check that evidences continuity of the gradient at the
//! origin.

use crate::correction::envelope::Branch;
use crate::error::Result;
use crate::num::logdomain::{logaddexp, SignedLog};
use crate::point::Point;

use super::fields::{factor_defect, CoeffEval, FieldAssembly};
use super::sset::DeviationSet;

/// The gradient-envelope constant, fitted once on the flagship run and
/// frozen; the comparison is reproducible, not a proof.
pub const GRAD_ENVELOPE_C: f64 = 16.0;

/// Finite-difference step for the surgered curvature, relative to the core
/// radius.
const FD_REL_STEP: f64 = 1e-4;

/// Gradient control of one bubble's deviation ball.
#[derive(Clone, Debug)]
pub struct BumpGrad {
    pub index: u32,
    /// ln of the sampled sup of the |grad K| upper estimate over the bump.
    pub ln_sup_grad: f64,
    /// ln of C (M_j^{-(m+2)/(4m(m+1))} + lambda_j^{1/8}).
    pub ln_envelope: f64,
    /// ln_envelope - ln_sup_grad.
    pub margin: f64,
}

/// Sampled sup of |grad K| over one dyadic annulus 2^{-t-1} < |x| <= 2^{-t}.
#[derive(Clone, Copy, Debug)]
pub struct ShellSup {
    pub t: i32,
    pub ln_sup: f64,
}

/// One sampled point on a bubble's inward radial grid, kept for the field
/// dumps: the ray through the center is where the gradient bound is
/// actually evaluated.
#[derive(Clone, Debug)]
pub struct RaySample {
    pub index: u32,
    /// ln distance to the bubble center.
    pub ln_t: f64,
    /// ln distance to the origin.
    pub ln_r: f64,
    /// ln of the assembled solution.
    pub ln_u: f64,
    /// ln of the assembled coefficient.
    pub ln_coeff: f64,
    /// ln (1 - K); minus infinity where the coefficient reaches one.
    pub ln_coeff_defect: f64,
    /// ln of the surgered curvature.
    pub ln_kappa: f64,
    /// ln (1 - kappa); minus infinity where the curvature reaches one.
    pub ln_kappa_defect: f64,
    pub capped: bool,
    /// ln of the |grad K| bound at the sample.
    pub ln_grad: f64,
}

/// Everything the C^1 ledger rows consume.
#[derive(Clone, Debug)]
pub struct C1Report {
    pub bumps: Vec<BumpGrad>,
    /// The radial grids behind `bumps`, in sample order.
    pub rays: Vec<RaySample>,
    /// min over bumps of the envelope margin.
    pub envelope_margin: f64,
    /// Per-annulus suprema, shallow to deep.
    pub shells: Vec<ShellSup>,
    /// Strict drops in the suffix of `shells` ending at the deepest one.
    pub trend_drops: usize,
    /// ln sup |K - ktilde| (attained on the raw part of a plateau).
    pub ln_c0: f64,
    /// ln of the global sup of the |grad K| estimate.
    pub ln_grad_sup: f64,
    /// ln (sup|K - ktilde| + sup|grad (K - ktilde)|).
    pub ln_c1: f64,
    /// ln eps - ln_c1.
    pub c1_margin: f64,
    /// Raw-branch probes where the coefficient equals the curvature.
    pub raw_identity_checked: usize,
    pub raw_identity_failures: usize,
    /// ln(1e-6) - ln(max relative deviation of closed-form grad kappa from
    /// the log-domain difference quotient on bump shoulders).
    pub fd_margin: f64,
}

/// |d lift / d t| at an anchored radius, as ln, by a central difference
/// with the documented relative step.
fn ln_lift_slope(
    fa: &FieldAssembly,
    center: u32,
    ln_t: f64,
    dir: &[f64],
) -> Result<f64> {
    let up = fa.eval(&Point::Anchored {
        center,
        ln_t: ln_t + FD_REL_STEP.ln_1p(),
        dir: dir.to_vec(),
    })?;
    let dn = fa.eval(&Point::Anchored {
        center,
        ln_t: ln_t + (-FD_REL_STEP).ln_1p(),
        dir: dir.to_vec(),
    })?;
    let diff = SignedLog::from_ln(up.ln_lift).sub(SignedLog::from_ln(dn.ln_lift));
    Ok(diff.ln_abs - (2.0 * FD_REL_STEP).ln() - ln_t)
}

/// Analyze the coefficient's C^1 data over the probe cloud and the located
/// deviation set.
pub fn analyze(
    fa: &FieldAssembly,
    probes: &[Point],
    evals: &[CoeffEval],
    dev: &DeviationSet,
    eps: f64,
) -> Result<C1Report> {
    let family = fa.family;
    let dim = family.dim;
    let centers = &family.placement.centers;
    let two_h = dim.nf() - 2.0 * dim.mf();
    let m_exp = -(dim.mf() + 2.0) / (4.0 * dim.mf() * (dim.mf() + 1.0));

    // Per-bump sampled sup of |grad K| <= |grad kappa| + |d lift/dt| + pad.
    let mut bumps = Vec::with_capacity(family.entries.len());
    let mut rays = Vec::new();
    let mut envelope_margin = f64::INFINITY;
    let mut shell_map: std::collections::BTreeMap<i32, f64> = std::collections::BTreeMap::new();
    for e in &family.entries {
        let c = &centers[e.index as usize - 1];
        // Inward radial direction keeps every sample in the annulus of the
        // center itself.
        let dir: Vec<f64> =
            c.position.iter().map(|v| -v / c.ln_norm.exp()).collect();
        // The tangential variation of the lift rides the neighbor fields,
        // which change over the center-gap scale at most like their own
        // logarithmic slope; the pad is crude and dwarfed by the radial term.
        let mut ln_gap = c.ln_norm;
        for other in &family.entries {
            if other.index != e.index {
                ln_gap =
                    ln_gap.min(family.placement.ln_center_distance(e.index, other.index));
            }
        }
        let ln_pad_coeff = (dim.p() * two_h).ln() - ln_gap;

        let mut grid: Vec<f64> = Vec::new();
        let lo = e.ln_lambda - 10.0;
        let hi = e.ln_rho + 1.45f64.ln();
        let coarse = 60usize;
        for i in 0..=coarse {
            grid.push(lo + (hi - lo) * i as f64 / coarse as f64);
        }
        if let Some(seam) =
            dev.extents.iter().find(|x| x.index == e.index).and_then(|x| x.ln_seam)
        {
            // The lift climbs across the seam; refine there so the sampled
            // sup sees the steep zone.
            for i in 0..=40 {
                grid.push(seam - 3.0 + 3.5 * i as f64 / 40.0);
            }
        }
        grid.sort_by(f64::total_cmp);
        let mut ln_sup = f64::NEG_INFINITY;
        for &ln_t in &grid {
            let p = Point::Anchored { center: e.index, ln_t, dir: dir.clone() };
            let ln_gk = fa.surgery.ln_grad_norm(&p)?;
            let ev = fa.eval(&p)?;
            let mut bound = ln_gk;
            if ev.branch == Branch::Capped && ev.ln_lift > f64::NEG_INFINITY {
                let radial = ln_lift_slope(fa, e.index, ln_t, &dir)?;
                bound = logaddexp(bound, radial);
                bound = logaddexp(bound, ev.ln_lift + ln_pad_coeff);
            }
            ln_sup = ln_sup.max(bound);
            let ln_r = p.ln_radius(centers);
            let t_shell = (-(ln_r / std::f64::consts::LN_2)).floor() as i32;
            let cell = shell_map.entry(t_shell).or_insert(f64::NEG_INFINITY);
            *cell = cell.max(bound);
            rays.push(RaySample {
                index: e.index,
                ln_t,
                ln_r,
                ln_u: ev.ln_u,
                ln_coeff: ev.coeff.ln_value(),
                ln_coeff_defect: ev.coeff.ln_gap().unwrap_or(f64::NEG_INFINITY),
                ln_kappa: ev.kappa.ln_value(),
                ln_kappa_defect: ev.kappa.ln_gap().unwrap_or(f64::NEG_INFINITY),
                capped: ev.branch == Branch::Capped,
                ln_grad: bound,
            });
        }
        let ln_env = GRAD_ENVELOPE_C.ln()
            + logaddexp(m_exp * e.ln_m, e.ln_lambda / 8.0);
        let margin = ln_env - ln_sup;
        envelope_margin = envelope_margin.min(margin);
        bumps.push(BumpGrad { index: e.index, ln_sup_grad: ln_sup, ln_envelope: ln_env, margin });
    }

    // Raw-branch probes: the coefficient is the curvature itself.
    let mut raw_identity_checked = 0usize;
    let mut raw_identity_failures = 0usize;
    for ev in evals {
        if ev.branch == Branch::Raw {
            raw_identity_checked += 1;
            if ev.coeff != ev.kappa {
                raw_identity_failures += 1;
            }
        }
    }
    let _ = probes;

    // Closed-form gradient vs a difference quotient of the assembled
    // coefficient on the transition shoulders, where the branch is raw and
    // the cutoff slope is well away from its flat tails (the quotient's
    // truncation error grows like the inverse fourth power of the distance
    // to a tail).
    let mut worst_rel = 0.0f64;
    for e in &family.entries {
        let c = &centers[e.index as usize - 1];
        let dir: Vec<f64> =
            c.position.iter().map(|v| -v / c.ln_norm.exp()).collect();
        for f in [1.2f64, 1.25, 1.3] {
            let ln_t = e.ln_rho + f.ln();
            let p = Point::Anchored { center: e.index, ln_t, dir: dir.clone() };
            let ln_closed = fa.surgery.ln_grad_norm(&p)?;
            if ln_closed == f64::NEG_INFINITY {
                continue;
            }
            // Step 1e-4 rho_j in absolute distance.
            let step = FD_REL_STEP / f;
            let kp = fa.eval(&Point::Anchored {
                center: e.index,
                ln_t: ln_t + step.ln_1p(),
                dir: dir.clone(),
            })?;
            let km = fa.eval(&Point::Anchored {
                center: e.index,
                ln_t: ln_t + (-step).ln_1p(),
                dir: dir.clone(),
            })?;
            let diff = factor_defect(kp.coeff).sub(factor_defect(km.coeff));
            let ln_fd = diff.ln_abs - (2.0 * FD_REL_STEP).ln() - e.ln_rho;
            let rel = (ln_fd - ln_closed).exp_m1().abs();
            worst_rel = worst_rel.max(rel);
        }
    }
    let fd_margin = 1e-6f64.ln() - worst_rel.ln();

    // C^1 distance from the background: the value gap peaks at a plateau
    // (the full curvature defect), the gradient at the sampled sup.
    let ln_c0 = family
        .entries
        .iter()
        .map(|e| e.ln_s)
        .fold(f64::NEG_INFINITY, f64::max);
    let ln_grad_sup =
        bumps.iter().map(|b| b.ln_sup_grad).fold(f64::NEG_INFINITY, f64::max);
    let ln_c1 = logaddexp(ln_c0, ln_grad_sup);
    let c1_margin = eps.ln() - ln_c1;

    let shells: Vec<ShellSup> =
        shell_map.into_iter().map(|(t, ln_sup)| ShellSup { t, ln_sup }).collect();
    let mut trend_drops = 0usize;
    for w in shells.windows(2).rev() {
        if w[1].ln_sup < w[0].ln_sup {
            trend_drops += 1;
        } else {
            break;
        }
    }

    Ok(C1Report {
        bumps,
        rays,
        envelope_margin,
        shells,
        trend_drops,
        ln_c0,
        ln_grad_sup,
        ln_c1,
        c1_margin,
        raw_identity_checked,
        raw_identity_failures,
        fd_margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::sset;
    use crate::testutil::flagship;

    fn analyzed() -> C1Report {
        let fx = flagship();
        let fa = fx.assembly();
        let evals: Vec<CoeffEval> =
            fx.probes.points.iter().map(|p| fa.eval(p).unwrap()).collect();
        let dev = sset::locate(&fa, &fx.probes.points, &evals).unwrap();
        analyze(&fa, &fx.probes.points, &evals, &dev, 0.5).unwrap()
    }

    #[test]
    fn gradient_stays_under_the_frozen_envelope() {
        let rep = analyzed();
        assert_eq!(rep.bumps.len(), 18);
        for b in &rep.bumps {
            assert!(
                b.margin > 0.0,
                "bubble {} breaks the envelope: sup {} env {}",
                b.index,
                b.ln_sup_grad,
                b.ln_envelope
            );
            assert!(b.ln_sup_grad.is_finite(), "sampled sup must be positive");
        }
        assert!(rep.envelope_margin > 0.0);
    }

    #[test]
    fn shell_suprema_decrease_toward_the_origin() {
        let rep = analyzed();
        assert!(
            rep.shells.len() >= 7,
            "ring plus cascade must populate at least 7 annuli, got {:?}",
            rep.shells
        );
        assert!(
            rep.trend_drops >= 6,
            "trend drops {} over shells {:?}",
            rep.trend_drops,
            rep.shells
        );
    }

    #[test]
    fn coefficient_background_distance_is_far_below_budget() {
        let rep = analyzed();
        assert!(rep.c1_margin > 0.0, "C1 margin {}", rep.c1_margin);
        // The whole surgery lives at e^{-140} scales; the budget is 0.5.
        assert!(rep.ln_c1 < -30.0, "ln C1 {}", rep.ln_c1);
        assert_eq!(rep.raw_identity_failures, 0);
        assert!(rep.raw_identity_checked > 500);
        assert!(rep.fd_margin > 0.0, "fd margin {}", rep.fd_margin);
    }
}
