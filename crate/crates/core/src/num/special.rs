//! Exact special-function values at integer and half-integer arguments.
//!
//! Everything the kernel normalizations need — Gamma at n/2, sphere areas,
//! the Riesz constant — reduces to factorials and powers of pi, so we
//! evaluate those directly instead of calling a general lgamma.

use std::f64::consts::PI;

/// ln(k!) by direct summation; exact to f64 rounding for the small k used
/// here (dimension-sized arguments).
pub fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

/// ln Gamma(x) for x = twice_x / 2 > 0, twice_x a positive integer.
///
/// Integer x uses Gamma(x) = (x-1)!; half-integer x uses
/// Gamma(j + 1/2) = (2j)! sqrt(pi) / (4^j j!).
pub fn ln_gamma_half(twice_x: u64) -> f64 {
    assert!(twice_x > 0, "Gamma argument must be positive");
    if twice_x % 2 == 0 {
        ln_factorial(twice_x / 2 - 1)
    } else {
        let j = (twice_x - 1) / 2;
        ln_factorial(2 * j) - 2.0 * (j as f64) * std::f64::consts::LN_2 - ln_factorial(j)
            + 0.5 * PI.ln()
    }
}

/// ln of the surface area of the unit (n-1)-sphere in R^n:
/// omega_{n-1} = 2 pi^{n/2} / Gamma(n/2).
pub fn ln_sphere_area(n: u32) -> f64 {
    std::f64::consts::LN_2 + 0.5 * f64::from(n) * PI.ln() - ln_gamma_half(u64::from(n))
}

/// ln of the Riesz kernel constant for order 2m in R^n:
/// gamma_{n,m} = Gamma(n/2 - m) / (2^{2m} pi^{n/2} Gamma(m)),
/// the constant in I_{2m} g = gamma_{n,m} |x|^{2m-n} * g.
pub fn ln_riesz_gamma(n: u32, m: u32) -> f64 {
    assert!(n > 2 * m);
    ln_gamma_half(u64::from(n - 2 * m)) - 2.0 * f64::from(m) * std::f64::consts::LN_2
        - 0.5 * f64::from(n) * PI.ln()
        - ln_gamma_half(u64::from(2 * m))
}

/// ln B(n/2, m), the normalizer of the Beta(n/2, m) law used by the
/// radial importance sampler.
pub fn ln_beta_half(n: u32, m: u32) -> f64 {
    ln_gamma_half(u64::from(n)) + ln_gamma_half(u64::from(2 * m))
        - ln_gamma_half(u64::from(n + 2 * m))
}
