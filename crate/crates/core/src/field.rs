//! Arithmetic in a prime field `F_p`.
//!
//! The production modulus is the Mersenne prime `2^61 - 1`, which keeps every
//! product inside a `u128` without big integers. The type is generic over the
//! modulus so the same sharing code can be exercised over tiny fields (e.g.
//! `p = 101`) where exhaustive checks are feasible.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// `2^61 - 1`.
pub const MODULUS: u64 = (1 << 61) - 1;

/// An element of `F_P`, always held in canonical form (`value < P`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Fp<const P: u64>(u64);

/// Field element over the production modulus.
pub type FieldElement = Fp<MODULUS>;

impl<const P: u64> Fp<P> {
    pub const ZERO: Self = Fp(0);
    pub const ONE: Self = Fp(1);

    /// Reduces an arbitrary `u64` into the field.
    pub const fn new(value: u64) -> Self {
        Fp(value % P)
    }

    /// Returns `None` unless `value < P`.
    pub const fn from_canonical(value: u64) -> Option<Self> {
        if value < P {
            Some(Fp(value))
        } else {
            None
        }
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn modulus() -> u64 {
        P
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    fn reduce_wide(x: u128) -> u64 {
        if P == MODULUS {
            // 2^61 = 1 (mod p): fold the high bits down twice.
            let lo = (x as u64) & MODULUS;
            let hi = (x >> 61) as u64;
            let mut r = lo + (hi & MODULUS) + (hi >> 61);
            while r >= MODULUS {
                r -= MODULUS;
            }
            r
        } else {
            (x % P as u128) as u64
        }
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat's little theorem; `None` for zero.
    pub fn inv(self) -> Option<Self> {
        if self.is_zero() {
            None
        } else {
            Some(self.pow(P - 2))
        }
    }

    /// Uniform sample by rejection over the bit length of `P`.
    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let bits = 64 - P.leading_zeros();
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let candidate = rng.next_u64() & mask;
            if candidate < P {
                return Fp(candidate);
            }
        }
    }
}

/// `(a + b) mod p`.
pub fn field_add(a: FieldElement, b: FieldElement) -> FieldElement {
    a + b
}

impl<const P: u64> Add for Fp<P> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        // Both operands < P < 2^63, so the sum cannot overflow.
        let s = self.0 + rhs.0;
        Fp(if s >= P { s - P } else { s })
    }
}

impl<const P: u64> Sub for Fp<P> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        if self.0 >= rhs.0 {
            Fp(self.0 - rhs.0)
        } else {
            Fp(P - (rhs.0 - self.0))
        }
    }
}

impl<const P: u64> Neg for Fp<P> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::ZERO - self
    }
}

impl<const P: u64> Mul for Fp<P> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Fp(Self::reduce_wide(self.0 as u128 * rhs.0 as u128))
    }
}

impl<const P: u64> AddAssign for Fp<P> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const P: u64> SubAssign for Fp<P> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const P: u64> MulAssign for Fp<P> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const P: u64> std::iter::Sum for Fp<P> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, x| acc + x)
    }
}

impl<const P: u64> From<u32> for Fp<P> {
    fn from(v: u32) -> Self {
        Fp::new(v as u64)
    }
}

impl<const P: u64> fmt::Debug for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp({})", self.0)
    }
}

impl<const P: u64> fmt::Display for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseFieldError {
    #[error("not a decimal integer: {0:?}")]
    NotDecimal(String),
    #[error("value {0} is not below the field modulus")]
    OutOfRange(u64),
}

impl<const P: u64> FromStr for Fp<P> {
    type Err = ParseFieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseFieldError::NotDecimal(s.to_owned()));
        }
        let v: u64 = s
            .parse()
            .map_err(|_| ParseFieldError::NotDecimal(s.to_owned()))?;
        Fp::from_canonical(v).ok_or(ParseFieldError::OutOfRange(v))
    }
}

// Wire form is a decimal string so that JSON consumers without 64-bit
// integers do not lose precision.
impl<const P: u64> Serialize for Fp<P> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de, const P: u64> Deserialize<'de> for Fp<P> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
