//! Sampled witnesses for the three conclusions about the assembled
//! solution: peak growth along the tower against the blow-up gauge,
//! far-field decay at the background rate, and positivity of the iterated
//! Laplacians.
//!
//! The Laplacian ladder is exact: (-Delta)^s of the unit bubble profile
//! (1+r^2)^{-h} is Q_s(r^2) (1+r^2)^{-h-2s} with Q_s produced by a
//! polynomial recurrence whose coefficients stay dyadic-exact in doubles,
//! and positivity of every coefficient of Q_1..Q_{m-1} transfers to the
//! whole tower because each bubble is a scaled, translated, positively
//! weighted copy of the unit profile. At s = m the recurrence must collapse
//! to the constant c^{p-1} (the profile solves the pure power equation),
//! which pins the ladder against the bubble normalization to machine
//! precision. The correction term's ladder positivity is witnessed by the
//! solver's source-positivity count: the correction is the 2m-th order
//! potential of that source, so each intermediate Laplacian is a lower
//! order potential of the same nonnegative density.

use crate::dims::Dimensions;
use crate::error::{Error, Result};
use crate::num::logdomain::{logaddexp, logsumexp_slice, LN_ZERO};
use crate::point::Point;

use super::fields::{CoeffEval, FieldAssembly};

/// Decade of radii the decay witness samples; beyond the outer edge the
/// correction's probe cloud has no support.
const DECAY_R_LO: u32 = 10;
const DECAY_R_HI: u32 = 100;
/// Two-sided tolerance factor for the decay ratio.
const DECAY_FACTOR: f64 = 4.0;

/// One tower peak against its gauge bound.
#[derive(Clone, Copy, Debug)]
pub struct PeakMargin {
    pub index: u32,
    /// ln u at the center.
    pub ln_u: f64,
    /// ln (index * phi(|x_index|)).
    pub ln_bound: f64,
    /// ln_u - ln_bound.
    pub margin: f64,
}

/// The tower forces the gauge: margins positive and increasing.
#[derive(Clone, Debug)]
pub struct BlowUpReport {
    pub peaks: Vec<PeakMargin>,
    pub all_positive: bool,
    pub increasing: bool,
    /// ln of the deepest concentration scale; finite even when the plain
    /// value underflows doubles.
    pub ln_lambda_deepest: f64,
}

/// Far-field decay of the full solution at the background rate.
#[derive(Clone, Debug)]
pub struct DecayReport {
    /// ln of the analytic coefficient sum: closed-form bubble far
    /// coefficients plus the correction's anchored coefficient.
    pub ln_coeff_sum: f64,
    /// Extremes over the sampled decade of ln (r^{n-2m} u / coeff_sum).
    pub ln_ratio_hi: f64,
    pub ln_ratio_lo: f64,
    /// min(ln 4 - hi, lo + ln 4); positive iff every sample is within the
    /// factor-4 window.
    pub margin: f64,
    pub samples: usize,
}

/// Coefficients of Q_s: (-Delta)^s (1+r^2)^{-h} = Q_s(r^2) (1+r^2)^{-h-2s}.
#[derive(Clone, Debug)]
pub struct LadderRow {
    pub s: u32,
    pub coeffs: Vec<f64>,
    pub min_coeff: f64,
}

/// Positivity of the iterated Laplacians.
#[derive(Clone, Debug)]
pub struct SignsReport {
    /// Rows 1..=m; rows below m carry the theorem's claim, row m the
    /// normalization cross-check.
    pub ladder: Vec<LadderRow>,
    /// Smallest coefficient over rows 1..=m-1 (positive = claim holds).
    pub ladder_min: f64,
    /// |Q_m - c^{p-1}| relative to c^{p-1}, plus its spurious higher
    /// coefficients, as one deviation number.
    pub normalization_dev: f64,
    /// Smallest ln u over the probe evaluations (finite = u > 0).
    pub min_ln_u: f64,
    /// Quadrature nodes whose source was not positive, from the solve.
    pub nonpositive_sources: usize,
}

/// The three conclusions bundled.
#[derive(Clone, Debug)]
pub struct TheoremReport {
    pub blow_up: BlowUpReport,
    pub decay: DecayReport,
    pub signs: SignsReport,
}

/// One application of -Delta in the y = r^2 variable to Q (1+y)^{-g}:
/// using Delta f(r) = 4 y F'' + 2 n F' for radial f(r) = F(y),
///
/// ```text
/// Q_next = -4 y Q'' (1+y)^2 + 8 g y Q' (1+y) - 4 g (g+1) y Q
///          - 2 n Q' (1+y)^2 + 2 n g Q (1+y).
/// ```
fn ladder_step(n: f64, g: f64, q: &[f64]) -> Vec<f64> {
    let deg = q.len() - 1;
    let mut out = vec![0.0f64; deg + 2];
    for (j, &c) in q.iter().enumerate() {
        let jf = j as f64;
        // -4 y Q'' (1+y)^2: Q'' term j contributes j(j-1) c y^{j-2}.
        if j >= 2 {
            let a = -4.0 * jf * (jf - 1.0) * c;
            out[j - 1] += a;
            out[j] += 2.0 * a;
            out[j + 1] += a;
        }
        // 8 g y Q' (1+y)
        if j >= 1 {
            let a = 8.0 * g * jf * c;
            out[j] += a;
            out[j + 1] += a;
        }
        // -4 g (g+1) y Q
        out[j + 1] += -4.0 * g * (g + 1.0) * c;
        // -2 n Q' (1+y)^2
        if j >= 1 {
            let a = -2.0 * n * jf * c;
            out[j - 1] += a;
            out[j] += 2.0 * a;
            out[j + 1] += a;
        }
        // 2 n g Q (1+y)
        out[j] += 2.0 * n * g * c;
        out[j + 1] += 2.0 * n * g * c;
    }
    while out.len() > 1 && out.last() == Some(&0.0) {
        out.pop();
    }
    out
}

/// The full ladder through s = s_max for the unit profile (1+r^2)^{-h}.
pub fn laplacian_ladder(dim: Dimensions, s_max: u32) -> Vec<LadderRow> {
    let n = dim.nf();
    let h = dim.half_deficit();
    let mut rows = Vec::with_capacity(s_max as usize);
    let mut q = vec![1.0f64];
    for s in 1..=s_max {
        let g = h + 2.0 * (s - 1) as f64;
        q = ladder_step(n, g, &q);
        let min_coeff = q.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(LadderRow { s, coeffs: q.clone(), min_coeff });
    }
    rows
}

/// Evaluate all three conclusion witnesses.
pub fn verify(
    fa: &FieldAssembly,
    evals: &[CoeffEval],
    nonpositive_sources: usize,
) -> Result<TheoremReport> {
    let family = fa.family;
    let dim = family.dim;
    let centers = &family.placement.centers;
    let two_h = dim.nf() - 2.0 * dim.mf();

    // Blow-up: the solution at each center against index * gauge.
    let mut peaks = Vec::with_capacity(family.entries.len());
    let mut dir0 = vec![0.0; dim.n() as usize];
    dir0[0] = 1.0;
    for e in &family.entries {
        let ev = fa.eval(&Point::Anchored {
            center: e.index,
            ln_t: LN_ZERO,
            dir: dir0.clone(),
        })?;
        let ln_bound = f64::from(e.index).ln()
            + family.gauge.ln_phi(centers[e.index as usize - 1].ln_norm);
        peaks.push(PeakMargin {
            index: e.index,
            ln_u: ev.ln_u,
            ln_bound,
            margin: ev.ln_u - ln_bound,
        });
    }
    let all_positive = peaks.iter().all(|p| p.margin > 0.0);
    let increasing = peaks.windows(2).all(|w| w[1].margin > w[0].margin);
    let ln_lambda_deepest = family
        .entries
        .last()
        .map(|e| e.ln_lambda)
        .ok_or_else(|| Error::Invariant("blow-up check needs at least one bubble".into()))?;
    let blow_up = BlowUpReport { peaks, all_positive, increasing, ln_lambda_deepest };

    // Decay: r^{n-2m} u across the sampled decade against the coefficient
    // sum. The correction has no closed form; its coefficient is anchored
    // at the outer edge of its trusted radial range, so the content of the
    // window is the flatness of the whole decade plus the bubbles' exact
    // far coefficients.
    let dirs: Vec<Vec<f64>> = {
        let nd = dim.n() as usize;
        let mut ds = vec![vec![0.0; nd], vec![0.0; nd], vec![0.0; nd], vec![0.0; nd]];
        ds[0][0] = 1.0;
        ds[1][1] = 1.0;
        ds[2][2] = 1.0;
        let inv = (0.5f64).sqrt();
        ds[3][0] = inv;
        ds[3][1] = inv;
        ds
    };
    let far: Vec<f64> =
        (1..=family.entries.len() as u32).map(|i| family.ln_far_coeff(i)).collect();
    let anchor_point = Point::Global(
        dirs[0].iter().map(|d| d * f64::from(DECAY_R_HI)).collect(),
    );
    let ln_anchor = fa.field.ln_v(family, &anchor_point)
        + two_h * f64::from(DECAY_R_HI).ln();
    let ln_coeff_sum = logaddexp(logsumexp_slice(&far), ln_anchor);
    let mut ln_ratio_hi = f64::NEG_INFINITY;
    let mut ln_ratio_lo = f64::INFINITY;
    let mut samples = 0usize;
    for r in DECAY_R_LO..=DECAY_R_HI {
        let rf = f64::from(r);
        for d in &dirs {
            let p = Point::Global(d.iter().map(|di| di * rf).collect());
            let ev = fa.eval(&p)?;
            let ln_ratio = two_h * rf.ln() + ev.ln_u - ln_coeff_sum;
            ln_ratio_hi = ln_ratio_hi.max(ln_ratio);
            ln_ratio_lo = ln_ratio_lo.min(ln_ratio);
            samples += 1;
        }
    }
    let margin = (DECAY_FACTOR.ln() - ln_ratio_hi).min(ln_ratio_lo + DECAY_FACTOR.ln());
    let decay = DecayReport { ln_coeff_sum, ln_ratio_hi, ln_ratio_lo, margin, samples };

    // Signs: exact ladder plus the probe and quadrature witnesses.
    let ladder = laplacian_ladder(dim, dim.m());
    let ladder_min = ladder
        .iter()
        .take(dim.m() as usize - 1)
        .map(|r| r.min_coeff)
        .fold(f64::INFINITY, f64::min);
    let last = ladder.last().expect("m >= 1 rows");
    let want = ((dim.p() - 1.0) * dim.ln_c()).exp();
    let mut dev = (last.coeffs[0] - want).abs() / want;
    for &c in &last.coeffs[1..] {
        dev = dev.max(c.abs() / want);
    }
    let min_ln_u = evals.iter().map(|e| e.ln_u).fold(f64::INFINITY, f64::min);
    let signs = SignsReport {
        ladder,
        ladder_min,
        normalization_dev: dev,
        min_ln_u,
        nonpositive_sources,
    };

    Ok(TheoremReport { blow_up, decay, signs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::flagship;

    #[test]
    fn ladder_matches_the_hand_expansion_and_the_normalization() {
        let dim = Dimensions::new(8, 2).unwrap();
        let rows = laplacian_ladder(dim, 2);
        // One application: 2nh + 2h(n - 2h - 2) y = 32 + 8y.
        assert_eq!(rows[0].coeffs, vec![32.0, 8.0]);
        // Two applications collapse to the constant c^{p-1} = 1920.
        assert_eq!(rows[1].coeffs, vec![1920.0]);
        assert!((dim.ln_c() - 0.5 * 1920.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ladder_stays_positive_across_admissible_dimensions() {
        for (n, m) in [(8u32, 2u32), (10, 2), (11, 2), (13, 3), (16, 4), (21, 3)] {
            let dim = Dimensions::new(n, m).unwrap();
            let rows = laplacian_ladder(dim, m);
            for row in rows.iter().take(m as usize - 1) {
                assert!(
                    row.min_coeff > 0.0,
                    "(n,m)=({n},{m}) s={} coeffs {:?}",
                    row.s,
                    row.coeffs
                );
            }
            let last = rows.last().unwrap();
            let want = ((dim.p() - 1.0) * dim.ln_c()).exp();
            assert!(
                (last.coeffs[0] - want).abs() < 1e-9 * want,
                "(n,m)=({n},{m}) constant {} vs {want}",
                last.coeffs[0]
            );
            for &c in &last.coeffs[1..] {
                assert!(c.abs() < 1e-9 * want, "(n,m)=({n},{m}) residual {c}");
            }
        }
    }

    #[test]
    fn flagship_conclusions_hold_with_margins() {
        let fx = flagship();
        let fa = fx.assembly();
        let evals: Vec<CoeffEval> =
            fx.probes.points.iter().map(|p| fa.eval(p).unwrap()).collect();
        let rep = verify(&fa, &evals, fx.solve.nonpositive_sources).unwrap();

        assert_eq!(rep.blow_up.peaks.len(), 18);
        assert!(rep.blow_up.all_positive, "peaks {:?}", rep.blow_up.peaks);
        assert!(rep.blow_up.increasing, "peaks {:?}", rep.blow_up.peaks);
        assert!(rep.blow_up.ln_lambda_deepest.is_finite());

        assert!(
            rep.decay.margin > 0.0,
            "decay ratios [{}, {}] around sum {}",
            rep.decay.ln_ratio_lo,
            rep.decay.ln_ratio_hi,
            rep.decay.ln_coeff_sum
        );
        assert_eq!(rep.decay.samples, 91 * 4);
        assert!(rep.decay.ln_ratio_hi.is_finite());

        assert!(rep.signs.ladder_min > 0.0);
        assert!(rep.signs.normalization_dev < 1e-12);
        assert!(rep.signs.min_ln_u.is_finite());
        assert_eq!(rep.signs.nonpositive_sources, 0);
    }
}
