//! Log-domain scalar arithmetic.
//!
//! Tower parameters reach scales like e^-30000, far outside f64 range, so
//! every field amplitude in this crate is carried as a natural logarithm.
//! Subtraction-prone quantities additionally track a sign (`SignedLog`).
//! Near-one quantities k are never stored directly: we keep ln(1 - k) and
//! derive everything (ln k, ln(1 - k^e), ...) from it without cancellation.

/// Logarithm of an exact zero.
pub const LN_ZERO: f64 = f64::NEG_INFINITY;

/// log(e^a + e^b), stable for any argument order.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == LN_ZERO {
        return b;
    }
    if b == LN_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(e^a - e^b) for a >= b. Equal arguments give `LN_ZERO` exactly.
#[inline]
pub fn logsubexp(a: f64, b: f64) -> f64 {
    debug_assert!(a >= b, "logsubexp needs a >= b, got {a} < {b}");
    if b == LN_ZERO {
        return a;
    }
    if a == b {
        return LN_ZERO;
    }
    a + log1mexp(b - a)
}

/// log(1 - e^a) for a <= 0, switching expansions at -ln 2 to stay accurate
/// on both ends.
#[inline]
pub fn log1mexp(a: f64) -> f64 {
    debug_assert!(a <= 0.0, "log1mexp needs a <= 0, got {a}");
    if a == LN_ZERO {
        return 0.0;
    }
    if a > -std::f64::consts::LN_2 {
        (-a.exp_m1()).ln()
    } else {
        (-a.exp()).ln_1p()
    }
}

/// log(1 + e^t) without overflow for large t.
#[inline]
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// ln(-ln k) given ln s where s = 1 - k, for k in (0, 1).
///
/// For s below e^-30 the expansion -ln k = s (1 + s/2 + ...) is used; the
/// dropped terms are below relative 1e-26.
#[inline]
pub fn ln_neg_ln_k(ln_s: f64) -> f64 {
    debug_assert!(ln_s < 0.0, "1 - k must be in (0,1), got ln_s = {ln_s}");
    if ln_s < -30.0 {
        ln_s + 0.5 * ln_s.exp()
    } else {
        let minus_ln_k = -(-ln_s.exp()).ln_1p();
        minus_ln_k.ln()
    }
}

/// ln(1 - k^e) given ln s (s = 1 - k) and an exponent e > 0.
///
/// 1 - k^e = 1 - e^{-x} with x = e * (-ln k); the small-x branch expands
/// ln(1 - e^{-x}) = ln x - x/2 + O(x^2).
#[inline]
pub fn ln_one_minus_kpow(ln_s: f64, e: f64) -> f64 {
    debug_assert!(e > 0.0);
    let ln_x = e.ln() + ln_neg_ln_k(ln_s);
    if ln_x < -30.0 {
        ln_x - 0.5 * ln_x.exp()
    } else {
        log1mexp(-ln_x.exp())
    }
}

/// ln k given ln s where s = 1 - k. Exact via ln_1p; the result is a tiny
/// negative number and stays representable long after k itself rounds to 1.
#[inline]
pub fn ln_k_from_ln_s(ln_s: f64) -> f64 {
    debug_assert!(ln_s < 0.0);
    if ln_s < -700.0 {
        // e^{ln_s} underflows; ln k = -s to relative accuracy s.
        -ln_s.exp()
    } else {
        (-ln_s.exp()).ln_1p()
    }
}

/// log((1 + e^lt)^p - 1) for p > 0: the relative-increment helper used when a
/// p-th power of a sum is compared against its largest term.
#[inline]
pub fn ln_pow1p_m1(lt: f64, p: f64) -> f64 {
    debug_assert!(p > 0.0);
    if lt < -700.0 {
        // t underflows inside softplus, but (1+t)^p - 1 = p t to full
        // precision long before that, and ln(p t) stays representable.
        return p.ln() + lt;
    }
    // (1+t)^p - 1 = e^{p ln(1+t)} - 1 with t = e^lt.
    let x = p * softplus(lt);
    if x > 33.0 {
        // ln(e^x - 1) = x + ln(1 - e^{-x}) without materializing e^x.
        x + log1mexp(-x)
    } else if x > 1e-17 {
        x.exp_m1().ln()
    } else {
        // x below rounding: e^x - 1 = x to full precision.
        x.ln()
    }
}

/// A real number as sign plus log of absolute value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedLog {
    pub sign: i8, // -1, 0, +1
    pub ln_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        sign: 0,
        ln_abs: LN_ZERO,
    };

    /// A positive value given as its logarithm.
    #[inline]
    pub fn from_ln(ln_abs: f64) -> Self {
        if ln_abs == LN_ZERO {
            Self::ZERO
        } else {
            SignedLog { sign: 1, ln_abs }
        }
    }

    #[inline]
    pub fn from_f64(v: f64) -> Self {
        if v == 0.0 {
            Self::ZERO
        } else {
            SignedLog {
                sign: if v > 0.0 { 1 } else { -1 },
                ln_abs: v.abs().ln(),
            }
        }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        f64::from(self.sign) * self.ln_abs.exp()
    }

    #[inline]
    pub fn neg(self) -> Self {
        SignedLog {
            sign: -self.sign,
            ln_abs: self.ln_abs,
        }
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    /// Multiply by a positive factor given in log form.
    #[inline]
    pub fn scale_ln(self, ln_factor: f64) -> Self {
        if self.sign == 0 {
            self
        } else {
            SignedLog {
                sign: self.sign,
                ln_abs: self.ln_abs + ln_factor,
            }
        }
    }

    pub fn add(self, other: Self) -> Self {
        match (self.sign, other.sign) {
            (0, _) => other,
            (_, 0) => self,
            (a, b) if a == b => SignedLog {
                sign: a,
                ln_abs: logaddexp(self.ln_abs, other.ln_abs),
            },
            _ => {
                // Opposite signs: subtract magnitudes.
                if self.ln_abs == other.ln_abs {
                    Self::ZERO
                } else if self.ln_abs > other.ln_abs {
                    SignedLog {
                        sign: self.sign,
                        ln_abs: logsubexp(self.ln_abs, other.ln_abs),
                    }
                } else {
                    SignedLog {
                        sign: other.sign,
                        ln_abs: logsubexp(other.ln_abs, self.ln_abs),
                    }
                }
            }
        }
    }

    #[inline]
    pub fn sub(self, other: Self) -> Self {
        self.add(other.neg())
    }

    #[inline]
    pub fn mul(self, other: Self) -> Self {
        if self.sign == 0 || other.sign == 0 {
            Self::ZERO
        } else {
            SignedLog {
                sign: self.sign * other.sign,
                ln_abs: self.ln_abs + other.ln_abs,
            }
        }
    }
}

/// log(sum of e^{v}) over a slice, computed with a deterministic pairwise
/// reduction relative to the maximum.
pub fn logsumexp_slice(vals: &[f64]) -> f64 {
    let mx = vals.iter().copied().fold(LN_ZERO, f64::max);
    if mx == LN_ZERO {
        return LN_ZERO;
    }
    let mut shifted: Vec<f64> = vals.iter().map(|v| (v - mx).exp()).collect();
    mx + pairwise_sum(&mut shifted).ln()
}

/// Deterministic pairwise summation (mutates the scratch slice).
pub fn pairwise_sum(vals: &mut [f64]) -> f64 {
    let mut len = vals.len();
    if len == 0 {
        return 0.0;
    }
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            vals[i] = vals[2 * i] + vals[2 * i + 1];
        }
        if len % 2 == 1 {
            vals[half] = vals[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    vals[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-13;

    #[test]
    fn logaddexp_matches_direct() {
        for (a, b) in [(0.0f64, 0.0f64), (1.0, -3.0), (-700.0, -701.0), (3.5, 3.5)] {
            let direct = (a.exp() + b.exp()).ln();
            assert!((logaddexp(a, b) - direct).abs() < TOL, "a={a} b={b}");
        }
        // Far outside f64 range: shift invariance.
        let big = logaddexp(-40000.0, -40000.0);
        assert!((big - (-40000.0 + std::f64::consts::LN_2)).abs() < TOL);
        assert_eq!(logaddexp(LN_ZERO, -5.0), -5.0);
    }

    #[test]
    fn logsubexp_and_log1mexp() {
        let v = logsubexp(0.5, -0.5);
        assert!((v - (0.5f64.exp() - (-0.5f64).exp()).ln()).abs() < TOL);
        assert_eq!(logsubexp(2.0, 2.0), LN_ZERO);
        // Both branches of log1mexp.
        for a in [-1e-12f64, -0.1, -0.6, -0.70, -5.0, -40.0] {
            let direct = if a > -1e-8 {
                (-a * (1.0 + a / 2.0)).ln() // 1 - e^a = -a(1 + a/2 + ...)
            } else if a > -30.0 {
                (1.0 - a.exp()).ln()
            } else {
                -a.exp() // ln(1-e^a) = -e^a + O(e^2a)
            };
            assert!(
                (log1mexp(a) - direct).abs() < 1e-10 * direct.abs().max(1.0),
                "a={a}"
            );
        }
    }

    #[test]
    fn softplus_branches() {
        for t in [-50.0f64, -1.0, 0.0, 1.0, 50.0, 800.0] {
            let direct = if t < 500.0 { (1.0 + t.exp()).ln() } else { t };
            assert!((softplus(t) - direct).abs() < TOL * direct.abs().max(1.0));
        }
    }

    #[test]
    fn near_one_helpers() {
        // Moderate s: compare against direct evaluation.
        let s: f64 = 1e-3;
        let k = 1.0 - s;
        assert!((ln_neg_ln_k(s.ln()) - (-k.ln()).ln()).abs() < 1e-12);
        assert!((ln_k_from_ln_s(s.ln()) - k.ln()).abs() < 1e-15);
        for e in [0.75f64, 1.5, 2.0] {
            let direct = (1.0 - k.powf(e)).ln();
            assert!(
                (ln_one_minus_kpow(s.ln(), e) - direct).abs() < 1e-11,
                "e={e}"
            );
        }
        // Extreme s = e^-75: 1 - k^e = e*s to first order.
        let ln_s = -75.0;
        let got = ln_one_minus_kpow(ln_s, 0.75);
        assert!((got - (ln_s + 0.75f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn ln_pow1p_m1_small_and_large() {
        // t = e^-2, p = 3: direct.
        let direct = ((1.0 + (-2.0f64).exp()).powi(3) - 1.0).ln();
        assert!((ln_pow1p_m1(-2.0, 3.0) - direct).abs() < 1e-12);
        // Tiny t: (1+t)^p - 1 = p t.
        let got = ln_pow1p_m1(-500.0, 3.0);
        assert!((got - (3.0f64.ln() - 500.0)).abs() < 1e-9);
    }

    #[test]
    fn signed_log_arithmetic() {
        let a = SignedLog::from_f64(3.0);
        let b = SignedLog::from_f64(-2.0);
        assert!((a.add(b).to_f64() - 1.0).abs() < 1e-14);
        assert!((a.sub(b).to_f64() - 5.0).abs() < 1e-14);
        assert!((a.mul(b).to_f64() + 6.0).abs() < 1e-13);
        assert!(a.sub(a).is_zero());
        // Scale far below f64 range and back.
        let deep = a.scale_ln(-50000.0);
        assert_eq!(deep.sign, 1);
        assert!((deep.ln_abs - (3.0f64.ln() - 50000.0)).abs() < 1e-12);
    }

    #[test]
    fn pairwise_and_logsumexp() {
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&mut xs) - naive).abs() < 1e-9);
        let ls = logsumexp_slice(&[-3.0, -4.0, LN_ZERO, -2.0]);
        let direct = ((-3.0f64).exp() + (-4.0f64).exp() + (-2.0f64).exp()).ln();
        assert!((ls - direct).abs() < 1e-13);
        assert_eq!(logsumexp_slice(&[LN_ZERO, LN_ZERO]), LN_ZERO);
    }
}
