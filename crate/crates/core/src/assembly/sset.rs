//! Location and certification of the deviation set.
//!
//! The assembled coefficient deviates from the surgered curvature exactly
//! where the source takes its capped branch, and the branch indicator
//! U > Z(kappa, P) can only fire where kappa dips below one, i.e. inside a
//! bump support. Along each bubble's plateau the tower height falls like
//! t^{-2(n-2m)} while the stationary height is pinned by the neighbor
//! mass, so the deviation set is a union of small balls around the
//! centers. This module brackets each ball's radius by bisection and
//! certifies the union against the core radii, and cross-checks the probe
//! cloud against the certified radii.

use crate::correction::envelope::{ln_stationary, Branch};
use crate::correction::hfun::{ln_companion, tower_sums, TailPad};
use crate::correction::kappa::Region;
use crate::error::{Error, Result};
use crate::num::logdomain::logsumexp_slice;
use crate::point::Point;

use super::fields::{CoeffEval, FieldAssembly};

/// The power-sum ratio and its certified bound, both as ln values: for
/// lam > 1 and positive entries with ln values `ln_a`,
/// sum a_i^lam / (sum a_i)^lam <= (1 + a2/a1)/(1 + lam a2/a1) < 1,
/// where a1 is the largest entry and a2 the second largest.
pub fn power_sum_ratio_ln(lam: f64, ln_a: &[f64]) -> (f64, f64) {
    let powered: Vec<f64> = ln_a.iter().map(|v| lam * v).collect();
    let ln_ratio = logsumexp_slice(&powered) - lam * logsumexp_slice(ln_a);
    let mut sorted = ln_a.to_vec();
    sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let r = if sorted.len() > 1 { (sorted[1] - sorted[0]).exp() } else { 0.0 };
    let ln_bound = r.ln_1p() - (lam * r).ln_1p();
    (ln_ratio, ln_bound)
}

/// The certified deviation radius of one bubble.
#[derive(Clone, Debug)]
pub struct SeamExtent {
    pub index: u32,
    /// ln of the deviation radius along the worst probed direction; `None`
    /// when the bubble never caps.
    pub ln_seam: Option<f64>,
    /// ln rho_j - ln seam: positive certifies the deviation ball inside the
    /// core ball.
    pub margin_rho: f64,
    /// ln 2 rho_j - ln seam.
    pub margin_two_rho: f64,
}

/// The deviation set, located and cross-checked against the probe cloud.
#[derive(Clone, Debug)]
pub struct DeviationSet {
    pub extents: Vec<SeamExtent>,
    /// Probes whose source took the capped branch.
    pub capped: Vec<usize>,
    /// Capped probes outside their bubble's core ball; expected empty.
    pub flagged: Vec<usize>,
    /// min over bubbles of `margin_rho`.
    pub margin_rho: f64,
    /// min over bubbles of `margin_two_rho`.
    pub margin_two_rho: f64,
    /// The tracked floor constant: min over capped probes of
    /// ln u_j - (1 - alpha)(n - 2m)/(4m) ln M_j with j the probe's bubble.
    /// Infinite when no probe caps.
    pub ln_floor_const: f64,
    /// min over capped probes of the slack in the power-sum ratio bound
    /// k_j^{(n+2m)/(4m)} (sum_{i != j} u_i)^p > sum_{i != j} u_i^p, the
    /// quantity the containment argument runs on. Positive certifies it.
    pub ratio_margin: f64,
}

/// Whether the source caps at a point, decided exactly as the envelope
/// decides it.
pub fn capped_at(fa: &FieldAssembly, point: &Point) -> Result<bool> {
    let dim = fa.family.dim;
    let kappa = fa.surgery.factor_at(point)?;
    if kappa.ge_one() {
        return Ok(false);
    }
    let ln_us = fa.ln_bubbles(point);
    let sums = tower_sums(dim, &ln_us);
    let ln_v = fa.field.ln_v(fa.family, point);
    let seam = ln_stationary(dim, kappa, ln_companion(&sums, ln_v, TailPad::None))?;
    Ok(sums.ln_cap > seam)
}

/// Bracket the deviation radius of bubble `j` along one direction by
/// bisection in ln t. Returns `None` when even the concentration scale
/// does not cap.
fn seam_along(fa: &FieldAssembly, j: u32, dir: &[f64]) -> Result<Option<f64>> {
    let e = fa.family.entry(j);
    let probe = |ln_t: f64| Point::Anchored { center: j, ln_t, dir: dir.to_vec() };
    let mut lo = e.ln_lambda - 60.0;
    if !capped_at(fa, &probe(lo))? {
        return Ok(None);
    }
    // The plateau ends at half the core radius; start the upper bracket
    // just below it and widen toward the support edge if needed.
    let mut hi = e.ln_rho + 0.49f64.ln();
    while capped_at(fa, &probe(hi))? {
        hi += 0.25;
        if hi > e.ln_rho + 1.45f64.ln() {
            // Still capped at the support edge: report the edge itself and
            // let the containment margins go negative.
            return Ok(Some(hi));
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if capped_at(fa, &probe(mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(hi))
}

/// Locate the deviation set and cross-check the evaluated probe cloud.
pub fn locate(
    fa: &FieldAssembly,
    probes: &[Point],
    evals: &[CoeffEval],
) -> Result<DeviationSet> {
    let n = fa.family.dim.n() as usize;
    let dirs = crate::pipeline::probes::unit_dirs(n, 3);
    let mut extents = Vec::with_capacity(fa.family.entries.len());
    let mut margin_rho = f64::INFINITY;
    let mut margin_two_rho = f64::INFINITY;
    for e in &fa.family.entries {
        let mut worst: Option<f64> = None;
        for d in &dirs {
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            for dd in [d.clone(), neg] {
                if let Some(s) = seam_along(fa, e.index, &dd)? {
                    worst = Some(worst.map_or(s, |w: f64| w.max(s)));
                }
            }
        }
        let (m_rho, m_two) = match worst {
            Some(s) => (e.ln_rho - s, e.ln_rho + std::f64::consts::LN_2 - s),
            None => (f64::INFINITY, f64::INFINITY),
        };
        margin_rho = margin_rho.min(m_rho);
        margin_two_rho = margin_two_rho.min(m_two);
        extents.push(SeamExtent {
            index: e.index,
            ln_seam: worst,
            margin_rho: m_rho,
            margin_two_rho: m_two,
        });
    }

    let dim = fa.family.dim;
    let floor_exp = (1.0 - dim.alpha()) * (dim.nf() - 2.0 * dim.mf()) / (4.0 * dim.mf());
    let mut capped = Vec::new();
    let mut flagged = Vec::new();
    let mut ln_floor_const = f64::INFINITY;
    let mut ratio_margin = f64::INFINITY;
    for (pi, ev) in evals.iter().enumerate() {
        if ev.branch != Branch::Capped {
            continue;
        }
        capped.push(pi);
        let j = match fa.surgery.region(&probes[pi])? {
            Region::Bump { index, t } => {
                if t >= 1.0 {
                    flagged.push(pi);
                }
                index
            }
            Region::Background => {
                return Err(Error::Invariant(format!(
                    "capped source outside every bump support at probe {pi}: \
                     the background curvature cannot cap"
                )));
            }
        };
        let e = fa.family.entry(j);
        let ln_us = fa.ln_bubbles(&probes[pi]);
        let ln_uj = ln_us[j as usize - 1];
        ln_floor_const = ln_floor_const.min(ln_uj - floor_exp * e.ln_m);
        // Slack of the ratio bound with the bubble's own term removed.
        let others: Vec<f64> = ln_us
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j as usize - 1)
            .map(|(_, v)| *v)
            .collect();
        if !others.is_empty() {
            let (ln_ratio, _) = power_sum_ratio_ln(dim.p(), &others);
            let exponent = (dim.nf() + 2.0 * dim.mf()) / (4.0 * dim.mf());
            ratio_margin = ratio_margin.min(exponent * e.ln_k - ln_ratio);
        }
    }

    Ok(DeviationSet {
        extents,
        capped,
        flagged,
        margin_rho,
        margin_two_rho,
        ln_floor_const,
        ratio_margin,
    })
}
