//! Exact Newton and Riesz potentials of piecewise-power radial densities.
//!
//! For a radial source g supported in a ball, the Newton potential solving
//! -Delta v = g is the classical one-dimensional expression
//!
//!   v(r) = (n-2)^{-1} [ r^{2-n} int_0^r g(t) t^{n-1} dt + int_r^infty g(t) t dt ],
//!
//! and both integrals map sums of powers c t^e to sums of powers in closed
//! form. Iterating m times gives I_{2m} exactly on this class — no quadrature
//! error, valid at any amplitude because amplitudes ride along in log scale.
//! All profiles here live at unit scale; microscopic balls are handled by the
//! scaling law I_{2m}[g(./R)] (x) = R^{2m} I_{2m}[g](x/R).

use crate::dims::Dimensions;
use crate::error::{Error, Result};
use crate::num::logdomain::SignedLog;

/// Exponent-collision guard: an integration step that would produce a
/// logarithmic term (exponent hitting -n or -2) is rejected.
const EXPONENT_GUARD: f64 = 1e-9;

/// One monomial c * r^e.
#[derive(Clone, Copy, Debug)]
pub struct PowerTerm {
    pub exp: f64,
    pub coeff: f64,
}

/// A radial function given as power sums on consecutive intervals
/// [breaks[k], breaks[k+1]] plus a power-sum tail on [breaks.last(), infinity).
#[derive(Clone, Debug, Default)]
pub struct RadialProfile {
    /// 0 = b_0 < b_1 < ... < b_K.
    pub breaks: Vec<f64>,
    /// pieces[k] lives on [b_k, b_{k+1}]; len = breaks.len() - 1.
    pub pieces: Vec<Vec<PowerTerm>>,
    /// Valid for r >= b_K; empty for compactly supported profiles.
    pub tail: Vec<PowerTerm>,
}

impl RadialProfile {
    pub fn support(&self) -> f64 {
        *self.breaks.last().expect("profile has at least one break")
    }

    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        let k = self.piece_index(r);
        match k {
            Some(k) => eval_terms(&self.pieces[k], r),
            None => eval_terms(&self.tail, r),
        }
    }

    /// ln of the (positive) profile value at log-radius `ln_r`. Handles radii
    /// far outside f64 range on both ends: tiny radii collapse onto the first
    /// piece, huge radii use a sign-tracked log-domain tail sum.
    pub fn eval_ln(&self, ln_r: f64) -> f64 {
        let last = self.support();
        if ln_r <= last.ln() {
            let v = self.eval(ln_r.exp());
            if v > 0.0 {
                v.ln()
            } else {
                f64::NEG_INFINITY
            }
        } else {
            let mut acc = SignedLog::ZERO;
            for t in &self.tail {
                acc = acc.add(SignedLog {
                    sign: if t.coeff >= 0.0 { 1 } else { -1 },
                    ln_abs: t.coeff.abs().ln() + t.exp * ln_r,
                });
            }
            debug_assert!(acc.sign >= 0, "potential tail went negative");
            if acc.sign > 0 {
                acc.ln_abs
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    fn piece_index(&self, r: f64) -> Option<usize> {
        if r >= self.support() {
            if self.tail.is_empty() {
                // Compact support: clamp onto the last piece so eval at the
                // boundary radius works; beyond it the value is zero anyway.
                if r == self.support() {
                    return Some(self.pieces.len() - 1);
                }
                return None;
            }
            return None;
        }
        // breaks is tiny (tens of entries); linear scan keeps it simple.
        let mut k = 0;
        while k + 2 < self.breaks.len() && r >= self.breaks[k + 1] {
            k += 1;
        }
        Some(k)
    }

    /// int_0^support g(t) t^{n-1} dt: the weighted mass that feeds the
    /// far-field coefficient of the potential.
    pub fn weighted_mass(&self, n: u32) -> Result<f64> {
        let nf = f64::from(n);
        let mut acc = 0.0;
        for (k, terms) in self.pieces.iter().enumerate() {
            let (lo, hi) = (self.breaks[k], self.breaks[k + 1]);
            for t in terms {
                let e = t.exp + nf;
                if e.abs() < EXPONENT_GUARD {
                    return Err(Error::Domain(format!(
                        "integration would produce a log term (exponent {} near -n)",
                        t.exp
                    )));
                }
                acc += t.coeff * (hi.powf(e) - lo.powf(e)) / e;
            }
        }
        Ok(acc)
    }

    /// Apply the Newton potential once. The input tail must decay faster
    /// than r^{-2} for the outer integral to converge.
    pub fn newton(&self, n: u32) -> Result<RadialProfile> {
        let nf = f64::from(n);
        if n < 3 {
            return Err(Error::Domain("Newton potential needs n >= 3".into()));
        }
        let k_pieces = self.pieces.len();
        assert_eq!(self.breaks.len(), k_pieces + 1);

        let guard = |e: f64| -> Result<()> {
            if (e + nf).abs() < EXPONENT_GUARD || (e + 2.0).abs() < EXPONENT_GUARD {
                Err(Error::Domain(format!(
                    "integration would produce a log term (exponent {e} near -n or -2)"
                )))
            } else {
                Ok(())
            }
        };

        // Cumulative inner integral A(b_k) = int_0^{b_k} g t^{n-1} dt.
        let mut a_at = vec![0.0; k_pieces + 1];
        for k in 0..k_pieces {
            let (lo, hi) = (self.breaks[k], self.breaks[k + 1]);
            let mut inc = 0.0;
            for t in &self.pieces[k] {
                guard(t.exp)?;
                let e = t.exp + nf;
                inc += t.coeff * (hi.powf(e) - lo.powf(e)) / e;
            }
            a_at[k + 1] = a_at[k] + inc;
        }

        // Outer integral from above: B(b_K) = int_{b_K}^inf g t dt over the tail.
        let b_k_edge = self.support();
        let mut b_edge = 0.0;
        for t in &self.tail {
            guard(t.exp)?;
            if t.exp + 2.0 >= 0.0 {
                return Err(Error::Domain(format!(
                    "tail exponent {} does not decay fast enough for the Newton potential",
                    t.exp
                )));
            }
            b_edge -= t.coeff * b_k_edge.powf(t.exp + 2.0) / (t.exp + 2.0);
        }
        let mut b_at = vec![0.0; k_pieces + 1];
        b_at[k_pieces] = b_edge;
        for k in (0..k_pieces).rev() {
            let (lo, hi) = (self.breaks[k], self.breaks[k + 1]);
            let mut inc = 0.0;
            for t in &self.pieces[k] {
                let e = t.exp + 2.0;
                inc += t.coeff * (hi.powf(e) - lo.powf(e)) / e;
            }
            b_at[k] = b_at[k + 1] + inc;
        }

        let inv = 1.0 / (nf - 2.0);
        let mut out_pieces = Vec::with_capacity(k_pieces);
        for k in 0..k_pieces {
            let (lo, hi) = (self.breaks[k], self.breaks[k + 1]);
            let mut terms: Vec<PowerTerm> = Vec::new();
            // alpha_k r^{2-n}: inner integral constant below this piece.
            let mut alpha = a_at[k];
            let mut beta = b_at[k + 1];
            for t in &self.pieces[k] {
                alpha -= t.coeff * lo.powf(t.exp + nf) / (t.exp + nf);
                beta += t.coeff * hi.powf(t.exp + 2.0) / (t.exp + 2.0);
                push_term(
                    &mut terms,
                    t.exp + 2.0,
                    t.coeff * inv * (1.0 / (t.exp + nf) - 1.0 / (t.exp + 2.0)),
                );
            }
            push_term(&mut terms, 2.0 - nf, alpha * inv);
            push_term(&mut terms, 0.0, beta * inv);
            out_pieces.push(terms);
        }

        // Tail of the result.
        let mut out_tail: Vec<PowerTerm> = Vec::new();
        let mut alpha_tail = a_at[k_pieces];
        for t in &self.tail {
            alpha_tail -= t.coeff * b_k_edge.powf(t.exp + nf) / (t.exp + nf);
            push_term(
                &mut out_tail,
                t.exp + 2.0,
                t.coeff * inv * (1.0 / (t.exp + nf) - 1.0 / (t.exp + 2.0)),
            );
        }
        push_term(&mut out_tail, 2.0 - nf, alpha_tail * inv);

        Ok(RadialProfile {
            breaks: self.breaks.clone(),
            pieces: out_pieces,
            tail: out_tail,
        })
    }

    /// m-fold Newton potential = Riesz potential I_{2m} on this class.
    pub fn riesz(&self, dim: Dimensions) -> Result<RadialProfile> {
        let mut acc = self.clone();
        for _ in 0..dim.m() {
            acc = acc.newton(dim.n())?;
        }
        Ok(acc)
    }

    /// Coefficient of the slowest-decaying tail power (largest exponent).
    pub fn tail_leading(&self) -> Option<PowerTerm> {
        self.tail
            .iter()
            .copied()
            .max_by(|a, b| a.exp.partial_cmp(&b.exp).unwrap())
    }
}

fn push_term(terms: &mut Vec<PowerTerm>, exp: f64, coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    for t in terms.iter_mut() {
        if t.exp == exp {
            t.coeff += coeff;
            return;
        }
    }
    terms.push(PowerTerm { exp, coeff });
}

fn eval_terms(terms: &[PowerTerm], r: f64) -> f64 {
    terms.iter().map(|t| {
        if t.exp == 0.0 {
            t.coeff
        } else {
            t.coeff * r.powf(t.exp)
        }
    }).sum()
}

/// A nonnegative radial density with a piecewise-linear unit profile around
/// `center`, vanishing beyond `support_radius`. Amplitude is carried by the
/// caller in log scale; `values` describe the unit shape.
#[derive(Clone, Debug)]
pub struct RadialDensity {
    pub center: Vec<f64>,
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
    pub support_radius: f64,
}

impl RadialDensity {
    pub fn indicator(center: Vec<f64>, radius: f64) -> Self {
        RadialDensity {
            center,
            breaks: vec![0.0, radius],
            values: vec![1.0, 1.0],
            support_radius: radius,
        }
    }

    /// Plateau 1 on [0, rho], linear down to 0 at 2 rho.
    pub fn tent(center: Vec<f64>, rho: f64) -> Self {
        RadialDensity {
            center,
            breaks: vec![0.0, rho, 2.0 * rho],
            values: vec![1.0, 1.0, 0.0],
            support_radius: 2.0 * rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.breaks.len() != self.values.len() || self.breaks.len() < 2 {
            return Err(Error::Domain("radial density needs matched breaks/values".into()));
        }
        if self.breaks[0] != 0.0 || !self.breaks.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain("radial density breaks must increase from 0".into()));
        }
        if self.values.iter().any(|v| *v < 0.0) {
            return Err(Error::Domain("radial density must be nonnegative".into()));
        }
        if *self.breaks.last().unwrap() != self.support_radius {
            return Err(Error::Domain("support radius must equal the last break".into()));
        }
        Ok(())
    }

    /// Lower the piecewise-linear profile into power-sum pieces.
    pub fn to_profile(&self) -> Result<RadialProfile> {
        self.validate()?;
        let mut pieces = Vec::with_capacity(self.breaks.len() - 1);
        for w in 0..self.breaks.len() - 1 {
            let (b0, b1) = (self.breaks[w], self.breaks[w + 1]);
            let (v0, v1) = (self.values[w], self.values[w + 1]);
            let slope = (v1 - v0) / (b1 - b0);
            let mut terms = Vec::new();
            push_term(&mut terms, 0.0, v0 - slope * b0);
            push_term(&mut terms, 1.0, slope);
            pieces.push(terms);
        }
        Ok(RadialProfile {
            breaks: self.breaks.clone(),
            pieces,
            tail: Vec::new(),
        })
    }
}

/// Newton potential of a piecewise-linear radial density (one inversion of
/// -Delta), as an exact radial profile.
pub fn newton_potential_radial(d: &RadialDensity, dim: Dimensions) -> Result<RadialProfile> {
    d.to_profile()?.newton(dim.n())
}

/// Riesz potential I_{2m} of a piecewise-linear radial density: m-fold
/// Newton potential.
pub fn riesz_potential_radial(d: &RadialDensity, dim: Dimensions) -> Result<RadialProfile> {
    d.to_profile()?.riesz(dim)
}

/// The kernel normalizations tied to (n, m): I_{2m} g = gamma_{n,m} |.|^{2m-n} * g,
/// and each single inversion of -Delta convolves with |.|^{2-n}/((n-2) omega_{n-1}).
#[derive(Clone, Copy, Debug)]
pub struct RieszKernelConstants {
    pub ln_gamma: f64,
    pub ln_newton: f64,
    pub order: u32,
}

impl RieszKernelConstants {
    pub fn new(dim: Dimensions) -> Self {
        RieszKernelConstants {
            ln_gamma: dim.ln_riesz_gamma(),
            ln_newton: -((dim.nf() - 2.0).ln() + dim.ln_sphere_area()),
            order: 2 * dim.m(),
        }
    }
}

/// A cached unit-scale potential: I_{2m} of a unit-amplitude shape supported
/// in a ball, with the two numbers the parameter search needs constantly.
#[derive(Clone, Debug)]
pub struct UnitPotential {
    pub profile: RadialProfile,
    /// Value at the center (r = 0).
    pub center_value: f64,
    /// Coefficient of r^{2m-n}, the slowest-decaying far-field power.
    pub tail_leading_coeff: f64,
}

fn unit_potential(d: &RadialDensity, dim: Dimensions) -> Result<UnitPotential> {
    let profile = riesz_potential_radial(d, dim)?;
    let center_value = profile.eval(0.0);
    let lead = profile
        .tail_leading()
        .ok_or_else(|| Error::Domain("potential has no far-field tail".into()))?;
    let want = 2.0 * dim.mf() - dim.nf();
    if (lead.exp - want).abs() > 1e-9 {
        return Err(Error::Invariant(format!(
            "far-field decay exponent {} != 2m - n = {want}",
            lead.exp
        )));
    }
    Ok(UnitPotential {
        profile,
        center_value,
        tail_leading_coeff: lead.coeff,
    })
}

/// I_{2m} of the indicator of the unit ball.
pub fn unit_indicator_riesz(dim: Dimensions) -> Result<UnitPotential> {
    unit_potential(&RadialDensity::indicator(vec![], 1.0), dim)
}

/// I_{2m} of the unit tent (plateau on [0,1], linear to 0 at 2).
pub fn unit_tent_riesz(dim: Dimensions) -> Result<UnitPotential> {
    unit_potential(&RadialDensity::tent(vec![], 1.0), dim)
}

/// Build a profile from log-log samples of a positive function on
/// [exp(ln_r[0]), exp(ln_r.last())]: each gap becomes one power piece matching
/// both endpoints, and the value is held constant on [0, first radius].
/// Radii must be normalized to order-one scale by the caller.
pub fn profile_from_log_samples(ln_r: &[f64], ln_v: &[f64]) -> Result<RadialProfile> {
    if ln_r.len() != ln_v.len() || ln_r.len() < 2 {
        return Err(Error::Domain("need at least two log-log samples".into()));
    }
    if !ln_r.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain("sample radii must strictly increase".into()));
    }
    let mut breaks = Vec::with_capacity(ln_r.len() + 1);
    let mut pieces = Vec::with_capacity(ln_r.len());
    breaks.push(0.0);
    // Constant head piece.
    breaks.push(ln_r[0].exp());
    pieces.push(vec![PowerTerm { exp: 0.0, coeff: ln_v[0].exp() }]);
    for w in 0..ln_r.len() - 1 {
        let mut e = (ln_v[w + 1] - ln_v[w]) / (ln_r[w + 1] - ln_r[w]);
        // Slopes that land on a negative-integer resonance of the repeated
        // Newton integration (t^{-n} or t^{-2} integrands) would produce
        // log terms no power piece can hold; nudge them clear. The profile
        // drifts by at most the nudge times the gap width, far below its
        // sampling error. Sources whose log-log slope locks onto twice a
        // bubble decay rate hit this for real, not just by rounding.
        if e <= -1.5 {
            let near = e.round();
            if (e - near).abs() < 5e-6 {
                e = near + if e >= near { 5e-6 } else { -5e-6 };
            }
        }
        let coeff = (ln_v[w] - e * ln_r[w]).exp();
        breaks.push(ln_r[w + 1].exp());
        pieces.push(vec![PowerTerm { exp: e, coeff }]);
    }
    Ok(RadialProfile {
        breaks,
        pieces,
        tail: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(n: u32, m: u32) -> Dimensions {
        Dimensions::new(n, m).unwrap()
    }

    #[test]
    fn newton_of_unit_ball_indicator_n8() {
        // Hand-checked: inside (4 - 3 r^2)/48, outside r^{-6}/48.
        let d = dims(8, 2);
        let prof = newton_potential_radial(&RadialDensity::indicator(vec![], 1.0), d).unwrap();
        for r in [0.0f64, 0.3, 0.77, 1.0] {
            let want = (4.0 - 3.0 * r * r) / 48.0;
            assert!((prof.eval(r) - want).abs() < 1e-15, "r={r}");
        }
        for r in [1.0f64, 2.5, 10.0] {
            let want = r.powi(-6) / 48.0;
            assert!((prof.eval_ln(r.ln()).exp() - want).abs() < 1e-15 * want.max(1e-3));
        }
        // Center value R^2/(2(n-2)) = 1/12.
        assert!((prof.eval(0.0) - 1.0 / 12.0).abs() < 1e-16);
    }

    #[test]
    fn riesz_of_unit_ball_indicator_n8_m2() {
        let d = dims(8, 2);
        let up = unit_indicator_riesz(d).unwrap();
        // Interior 1/192 - r^2/192 + r^4/640; tail r^{-4}/384 - r^{-6}/960.
        for r in [0.0f64, 0.4, 1.0] {
            let want = 1.0 / 192.0 - r * r / 192.0 + r.powi(4) / 640.0;
            assert!((up.profile.eval(r) - want).abs() < 1e-15, "r={r}");
        }
        for r in [1.0f64, 3.0, 50.0] {
            let want = r.powi(-4) / 384.0 - r.powi(-6) / 960.0;
            let got = up.profile.eval_ln(r.ln()).exp();
            assert!((got - want).abs() < 1e-13 * want, "r={r}");
        }
        assert!((up.center_value - 1.0 / 192.0).abs() < 1e-17);
        // Leading far-field coefficient = gamma_{n,m} * vol(B_1) = 1/384 for (8,2).
        assert!((up.tail_leading_coeff - 1.0 / 384.0).abs() < 1e-15);
    }

    #[test]
    fn far_field_matches_kernel_constant() {
        // For any admissible (n, m): leading tail coeff of I_{2m} chi_{B_1}
        // equals gamma_{n,m} |B_1| (mass seen from far away).
        for (n, m) in [(8u32, 2u32), (6, 1), (10, 3), (11, 2)] {
            let d = dims(n, m);
            let up = unit_indicator_riesz(d).unwrap();
            let ln_vol = d.ln_sphere_area() - d.nf().ln();
            let want = (d.ln_riesz_gamma() + ln_vol).exp();
            assert!(
                ((up.tail_leading_coeff - want) / want).abs() < 1e-11,
                "({n},{m}): {} vs {want}",
                up.tail_leading_coeff
            );
        }
    }

    #[test]
    fn potentials_continuous_and_decreasing() {
        let d = dims(8, 2);
        for up in [unit_indicator_riesz(d).unwrap(), unit_tent_riesz(d).unwrap()] {
            // Continuity across breaks.
            for &b in &up.profile.breaks[1..] {
                let lo = up.profile.eval(b - 1e-9);
                let hi = up.profile.eval_ln((b + 1e-9).ln()).exp();
                assert!((lo - hi).abs() < 1e-7 * lo.abs().max(1e-12), "break {b}");
            }
            // Radially nonincreasing.
            let mut prev = f64::INFINITY;
            for i in 0..400 {
                let r = 1e-3 * (1.03f64).powi(i);
                let v = up.profile.eval_ln(r.ln()).exp();
                assert!(v <= prev + 1e-15, "r={r}");
                prev = v;
            }
        }
    }

    #[test]
    fn tent_center_exceeds_indicator_center() {
        // The tent majorizes the unit indicator, so its potential does too.
        let d = dims(8, 2);
        let ind = unit_indicator_riesz(d).unwrap();
        let tent = unit_tent_riesz(d).unwrap();
        assert!(tent.center_value > ind.center_value);
    }

    #[test]
    fn log_sample_profile_roundtrip() {
        // Reconstruct r^{-1.5} from samples and integrate it exactly.
        let ln_r: Vec<f64> = (0..20).map(|i| -4.0 + 0.3 * i as f64).collect();
        let ln_v: Vec<f64> = ln_r.iter().map(|lr| -1.5 * lr).collect();
        let prof = profile_from_log_samples(&ln_r, &ln_v).unwrap();
        for lr in [-3.9, -2.0, 0.5, 1.6] {
            assert!((prof.eval_ln(lr) - (-1.5 * lr)).abs() < 1e-10);
        }
        // weighted_mass with n = 8: int_0^R r^{-1.5} r^7 dr, with the constant
        // head on [0, r_0] replacing the power there.
        let r0: f64 = ln_r[0].exp();
        let rend: f64 = ln_r.last().unwrap().exp();
        let head = r0.powf(-1.5) * r0.powi(8) / 8.0;
        let body = (rend.powf(6.5) - r0.powf(6.5)) / 6.5;
        let got = prof.weighted_mass(8).unwrap();
        assert!(((got - (head + body)) / (head + body)).abs() < 1e-9);
    }

    #[test]
    fn log_term_guard_trips() {
        // A tail decaying exactly like r^{-2} cannot be integrated against t dt.
        let prof = RadialProfile {
            breaks: vec![0.0, 1.0],
            pieces: vec![vec![PowerTerm { exp: 0.0, coeff: 1.0 }]],
            tail: vec![PowerTerm { exp: -2.0, coeff: 1.0 }],
        };
        assert!(matches!(prof.newton(8), Err(Error::Domain(_))));
    }

    #[test]
    fn density_validation() {
        let mut d = RadialDensity::tent(vec![0.0; 8], 0.5);
        assert!(d.validate().is_ok());
        d.values[1] = -0.1;
        assert!(d.validate().is_err());
    }
}
