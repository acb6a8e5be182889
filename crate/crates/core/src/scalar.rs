//! Numeric abstraction shared by the finite-grid machinery.
//!
//! Everything that can be computed by enumeration (virtual values, reserves,
//! tie-corrected payments, outcome rules, exact revenue and deviation search)
//! is written once against [`Scalar`] and instantiated either with `f64` or
//! with arbitrary-precision rationals. Integration-based code (continuous
//! bid functions, quadrature, Monte Carlo) stays on `f64`.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

/// A field-like number type usable by the exact engines.
pub trait Scalar:
    Num + Signed + FromPrimitive + ToPrimitive + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    /// `true` when arithmetic is exact (no rounding).
    const EXACT: bool;

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize fits scalar")
    }

    /// Conversion of a binary float. Exact for rationals.
    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite float")
    }

    fn ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).unwrap() / Self::from_i64(den).unwrap()
    }

    fn as_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Comparison slack used where floating-point noise must be absorbed.
    /// Zero for exact types.
    fn slack() -> Self;

    fn powu(&self, exp: usize) -> Self {
        let mut acc = Self::one();
        for _ in 0..exp {
            acc = acc * self.clone();
        }
        acc
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }

    /// Parses `"3"`, `"0.25"`, `"-1e-3"` or `"1/3"`. Decimal strings are read
    /// exactly when the scalar is exact.
    fn parse_exact(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some((n, d)) = text.split_once('/') {
            let n = Self::parse_exact(n)?;
            let d = Self::parse_exact(d)?;
            if d.is_zero() {
                return None;
            }
            return Some(n / d);
        }
        if !Self::EXACT {
            return text.parse::<f64>().ok().and_then(Self::from_f64);
        }
        parse_decimal(text).map(|(mantissa, exp10)| {
            let ten = Self::from_i64(10).unwrap();
            let mut value = Self::zero();
            let neg = mantissa.starts_with('-');
            for ch in mantissa.trim_start_matches(['-', '+']).chars() {
                let digit = Self::from_u32(ch.to_digit(10).unwrap()).unwrap();
                value = value * ten.clone() + digit;
            }
            let scale = ten.powu(exp10.unsigned_abs() as usize);
            let value = if exp10 >= 0 { value * scale } else { value / scale };
            if neg {
                -value
            } else {
                value
            }
        })
    }
}

/// Splits a decimal literal into its digit string and a power of ten.
fn parse_decimal(text: &str) -> Option<(String, i64)> {
    let (body, exp) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i64>().ok()?),
        None => (text, 0),
    };
    let (sign, body) = match body.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("", body.strip_prefix('+').unwrap_or(body)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{sign}{int}{frac}");
    Some((digits, exp - frac.len() as i64))
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn slack() -> Self {
        1e-12
    }

    fn powu(&self, exp: usize) -> Self {
        self.powi(exp as i32)
    }
}

impl Scalar for f32 {
    const EXACT: bool = false;

    fn slack() -> Self {
        1e-5
    }

    fn powu(&self, exp: usize) -> Self {
        self.powi(exp as i32)
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn slack() -> Self {
        BigRational::zero()
    }

    fn from_count(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn powu(&self, exp: usize) -> Self {
        num_traits::pow(self.clone(), exp)
    }
}

/// `n choose k` in the scalar type.
pub fn binomial<T: Scalar>(n: usize, k: usize) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = T::one();
    for i in 0..k {
        acc = acc * T::from_count(n - i) / T::from_count(i + 1);
    }
    acc
}

/// `n!` in the scalar type.
pub fn factorial<T: Scalar>(n: usize) -> T {
    (1..=n).fold(T::one(), |acc, i| acc * T::from_count(i))
}

/// `|a - b| <= slack`, i.e. exact equality for rationals.
pub fn approx_eq<T: Scalar>(a: &T, b: &T) -> bool {
    (a.clone() - b.clone()).abs() <= T::slack()
}
