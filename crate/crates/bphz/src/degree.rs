//! Exact degrees with two infinitesimal corrections.
//!
//! Degrees of labels and trees have the form `q + a*ks + b*k` where `ks`
//! and `k` are formal infinitesimals with `0 < k << ks << 1`.  Keeping the
//! coefficients exact (rather than substituting small numbers) realizes the
//! "sufficiently small" regime directly: comparisons are lexicographic in
//! `(q, a, b)`.

use num_rational::Rational64;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

pub type Rat = Rational64;

/// `q + a*ks + b*k` with exact rational coefficients, ordered
/// lexicographically on `(q, a, b)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InfDegree {
    pub q: Rat,
    pub kstar: Rat,
    pub kappa: Rat,
}

impl InfDegree {
    pub const fn new(q: Rat, kstar: Rat, kappa: Rat) -> Self {
        InfDegree { q, kstar, kappa }
    }

    pub fn rational(n: i64, d: i64) -> Self {
        InfDegree {
            q: Rat::new(n, d),
            kstar: Rat::zero(),
            kappa: Rat::zero(),
        }
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(n, 1)
    }

    pub fn zero() -> Self {
        Self::integer(0)
    }

    /// Multiples of the infinitesimals.
    pub fn kstar(c: i64) -> Self {
        InfDegree {
            q: Rat::zero(),
            kstar: Rat::new(c, 1),
            kappa: Rat::zero(),
        }
    }

    pub fn kappa(c: i64) -> Self {
        InfDegree {
            q: Rat::zero(),
            kstar: Rat::zero(),
            kappa: Rat::new(c, 1),
        }
    }

    pub fn is_negative(&self) -> bool {
        *self < InfDegree::zero()
    }

    pub fn is_positive(&self) -> bool {
        *self > InfDegree::zero()
    }

    /// The rational part with all infinitesimal corrections dropped.
    pub fn rational_part(&self) -> Rat {
        self.q
    }

    /// Numeric value for reporting, with `ks` and `k` evaluated at tiny
    /// reference magnitudes (only used for human-readable output).
    pub fn approx(&self) -> f64 {
        let r = |x: Rat| *x.numer() as f64 / *x.denom() as f64;
        r(self.q) + 1e-6 * r(self.kstar) + 1e-12 * r(self.kappa)
    }

    pub fn scale(&self, n: i64) -> Self {
        let c = Rat::new(n, 1);
        InfDegree {
            q: self.q * c,
            kstar: self.kstar * c,
            kappa: self.kappa * c,
        }
    }
}

impl Add for InfDegree {
    type Output = InfDegree;
    fn add(self, rhs: InfDegree) -> InfDegree {
        InfDegree {
            q: self.q + rhs.q,
            kstar: self.kstar + rhs.kstar,
            kappa: self.kappa + rhs.kappa,
        }
    }
}

impl Sub for InfDegree {
    type Output = InfDegree;
    fn sub(self, rhs: InfDegree) -> InfDegree {
        InfDegree {
            q: self.q - rhs.q,
            kstar: self.kstar - rhs.kstar,
            kappa: self.kappa - rhs.kappa,
        }
    }
}

impl Neg for InfDegree {
    type Output = InfDegree;
    fn neg(self) -> InfDegree {
        InfDegree {
            q: -self.q,
            kstar: -self.kstar,
            kappa: -self.kappa,
        }
    }
}

impl Mul<i64> for InfDegree {
    type Output = InfDegree;
    fn mul(self, rhs: i64) -> InfDegree {
        self.scale(rhs)
    }
}

impl PartialOrd for InfDegree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for InfDegree {
    fn cmp(&self, other: &Self) -> Ordering {
        self.q
            .cmp(&other.q)
            .then_with(|| self.kstar.cmp(&other.kstar))
            .then_with(|| self.kappa.cmp(&other.kappa))
    }
}

impl fmt::Debug for InfDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.q)?;
        for (c, name) in [(self.kstar, "ks"), (self.kappa, "k")] {
            if !c.is_zero() {
                if c.is_negative() {
                    write!(f, "{}{}", c, name)?;
                } else {
                    write!(f, "+{}{}", c, name)?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for InfDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_order_models_small_infinitesimals() {
        // -3/2 - ks < -3/2 < -3/2 + k
        let base = InfDegree::rational(-3, 2);
        assert!(base + InfDegree::kstar(-1) < base);
        assert!(base < base + InfDegree::kappa(1));
        // k << ks: -ks + 1000k is still negative
        let x = InfDegree::kstar(-1) + InfDegree::kappa(1000);
        assert!(x.is_negative());
    }

    #[test]
    fn arithmetic_is_componentwise() {
        let a = InfDegree::rational(2, 3) + InfDegree::kstar(-2);
        let b = a.scale(3);
        assert_eq!(b.q, Rat::new(2, 1));
        assert_eq!(b.kstar, Rat::new(-6, 1));
        assert_eq!(a - a, InfDegree::zero());
    }
}
