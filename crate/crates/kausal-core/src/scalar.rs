//! Dual-mode arithmetic: exact rationals for small oracle instances, `f64` otherwise.

use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

/// Exact rational used in rational mode.
pub type Rational = BigRational;

/// Number type over which measures, couplings and the simplex are generic.
///
/// Comparisons take an `f64` tolerance that exact types ignore.
pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const EXACT: bool;

    fn zero() -> Self;
    fn one() -> Self;
    /// Exact for rationals (every finite `f64` is dyadic).
    fn from_f64(x: f64) -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    fn to_f64(&self) -> f64;

    fn is_zero_tol(&self, tol: f64) -> bool {
        if Self::EXACT {
            *self == Self::zero()
        } else {
            self.to_f64().abs() <= tol
        }
    }

    fn is_neg_tol(&self, tol: f64) -> bool {
        if Self::EXACT {
            *self < Self::zero()
        } else {
            self.to_f64() < -tol
        }
    }

    fn is_pos_tol(&self, tol: f64) -> bool {
        if Self::EXACT {
            *self > Self::zero()
        } else {
            self.to_f64() > tol
        }
    }

    fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        if Self::EXACT {
            self == other
        } else {
            (self.to_f64() - other.to_f64()).abs() <= tol
        }
    }

    fn abs_val(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn sum<'a, I: IntoIterator<Item = &'a Self>>(items: I) -> Self {
        items.into_iter().fold(Self::zero(), |acc, x| acc + x.clone())
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        num_traits::One::one()
    }
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn to_f64(&self) -> f64 {
        num_traits::ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
}

/// Parses a decimal (`0.125`, `-3`, `1e-2`) or fraction (`1/3`) literal exactly.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut digits = alloc::string::String::from(int_part);
    digits.push_str(frac_part);
    let mut num: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    if neg {
        num = -num;
    }
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        BigRational::from_integer(num * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(num, num_traits::pow(ten, (-scale) as usize))
    };
    Some(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_and_fractions() {
        assert_eq!(parse_rational("0.125"), Some(Rational::from_ratio(1, 8)));
        assert_eq!(parse_rational("1/3"), Some(Rational::from_ratio(1, 3)));
        assert_eq!(parse_rational("-2.5e-1"), Some(Rational::from_ratio(-1, 4)));
        assert_eq!(parse_rational("3"), Some(Rational::from_ratio(3, 1)));
        assert_eq!(parse_rational("1e2"), Some(Rational::from_ratio(100, 1)));
        assert_eq!(parse_rational("abc"), None);
        assert_eq!(parse_rational("1/0"), None);
    }

    #[test]
    fn float_conversion_is_exact() {
        let r = Rational::from_f64(0.1);
        assert_ne!(r, Rational::from_ratio(1, 10));
        assert_eq!(Scalar::to_f64(&r), 0.1);
    }

    #[test]
    fn tolerance_is_ignored_in_exact_mode() {
        let a = Rational::from_ratio(1, 3);
        let b = Rational::from_ratio(1, 3) + Rational::from_ratio(1, 1_000_000_000_000);
        assert!(!a.approx_eq(&b, 1e-3));
        assert!(1.0f64.approx_eq(&(1.0 + 1e-13), 1e-12));
    }
}
