//! Dimension pair (n, m) and the exponents derived from it.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::One;

use crate::error::{Error, Result};
use crate::num::special;

/// Validated dimension pair: polyharmonic order m >= 1 acting in R^n with
/// n >= 2m + 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dimensions {
    n: u32,
    m: u32,
}

impl Dimensions {
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if m < 1 || n < 2 * m + 4 {
            return Err(Error::Hypothesis { n, m });
        }
        Ok(Dimensions { n, m })
    }

    #[inline]
    pub fn n(&self) -> u32 {
        self.n
    }

    #[inline]
    pub fn m(&self) -> u32 {
        self.m
    }

    #[inline]
    pub fn nf(&self) -> f64 {
        f64::from(self.n)
    }

    #[inline]
    pub fn mf(&self) -> f64 {
        f64::from(self.m)
    }

    /// Critical exponent p = (n + 2m) / (n - 2m).
    #[inline]
    pub fn p(&self) -> f64 {
        f64::from(self.n + 2 * self.m) / f64::from(self.n - 2 * self.m)
    }

    pub fn p_rational(&self) -> BigRational {
        BigRational::new(
            BigUint::from(self.n + 2 * self.m).into(),
            BigUint::from(self.n - 2 * self.m).into(),
        )
    }

    /// Decay rate of the standard bubble: h = (n - 2m) / 2.
    #[inline]
    pub fn half_deficit(&self) -> f64 {
        f64::from(self.n - 2 * self.m) / 2.0
    }

    /// theta = (n - 2m) / (4m), the exponent that controls how fast the
    /// capped envelope blows up as its curvature slot approaches 1.
    #[inline]
    pub fn theta(&self) -> f64 {
        f64::from(self.n - 2 * self.m) / (4.0 * f64::from(self.m))
    }

    /// 1/theta = 4m / (n - 2m).
    #[inline]
    pub fn inv_theta(&self) -> f64 {
        4.0 * f64::from(self.m) / f64::from(self.n - 2 * self.m)
    }

    /// theta' = (n + 2m) / (4m): the curvature slot of the envelope is fed
    /// k^{theta'} wherever a bubble cap is compared against its neighbors.
    #[inline]
    pub fn theta_prime(&self) -> f64 {
        f64::from(self.n + 2 * self.m) / (4.0 * f64::from(self.m))
    }

    /// alpha = m / (6m + 6), the interpolation weight balancing the cap
    /// height against the scale in the gradient estimate.
    #[inline]
    pub fn alpha(&self) -> f64 {
        f64::from(self.m) / (6.0 * f64::from(self.m) + 6.0)
    }

    /// Exact integer base A = (n + 2m - 2)!! / (n - 2m - 2)!!, i.e. the
    /// product of n - 2m, n - 2m + 2, ..., n + 2m - 2. The bubble constant
    /// is c = A^{(n-2m)/(4m)} and satisfies c^p = c * A exactly.
    pub fn bubble_base(&self) -> BigUint {
        let mut acc = BigUint::one();
        let mut t = self.n - 2 * self.m;
        while t <= self.n + 2 * self.m - 2 {
            acc *= BigUint::from(t);
            t += 2;
        }
        acc
    }

    /// ln A, summed directly so it stays exact for any admissible (n, m).
    pub fn ln_bubble_base(&self) -> f64 {
        let mut acc = 0.0;
        let mut t = self.n - 2 * self.m;
        while t <= self.n + 2 * self.m - 2 {
            acc += f64::from(t).ln();
            t += 2;
        }
        acc
    }

    /// ln c with c = A^theta the bubble normalization constant.
    #[inline]
    pub fn ln_c(&self) -> f64 {
        self.theta() * self.ln_bubble_base()
    }

    /// ln gamma_{n,m}, the Riesz kernel constant for I_{2m}.
    #[inline]
    pub fn ln_riesz_gamma(&self) -> f64 {
        special::ln_riesz_gamma(self.n, self.m)
    }

    /// ln of the unit-sphere area omega_{n-1}.
    #[inline]
    pub fn ln_sphere_area(&self) -> f64 {
        special::ln_sphere_area(self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::ToPrimitive;

    #[test]
    fn hypothesis_gate() {
        assert!(Dimensions::new(8, 2).is_ok());
        assert!(Dimensions::new(6, 1).is_ok());
        assert!(Dimensions::new(10, 3).is_ok());
        assert!(matches!(
            Dimensions::new(7, 2),
            Err(Error::Hypothesis { n: 7, m: 2 })
        ));
        assert!(Dimensions::new(5, 0).is_err());
        assert!(Dimensions::new(4, 1).is_err());
    }

    #[test]
    fn exponents_flagship() {
        let d = Dimensions::new(8, 2).unwrap();
        assert_eq!(d.p(), 3.0);
        assert_eq!(d.theta(), 0.5);
        assert_eq!(d.theta_prime(), 1.5);
        assert_eq!(d.half_deficit(), 2.0);
        assert!((d.alpha() - 1.0 / 9.0).abs() < 1e-16);
    }

    #[test]
    fn bubble_bases() {
        // (6,1): 4*6 = 24; (8,2): 4*6*8*10 = 1920; (10,3): 4*6*8*10*12*14.
        assert_eq!(Dimensions::new(6, 1).unwrap().bubble_base().to_u64(), Some(24));
        assert_eq!(Dimensions::new(8, 2).unwrap().bubble_base().to_u64(), Some(1920));
        assert_eq!(
            Dimensions::new(10, 3).unwrap().bubble_base().to_u64(),
            Some(322_560)
        );
        let d = Dimensions::new(8, 2).unwrap();
        assert!((d.ln_bubble_base() - 1920.0f64.ln()).abs() < 1e-12);
        assert!((d.ln_c() - 1920.0f64.sqrt().ln()).abs() < 1e-12);
    }
}
