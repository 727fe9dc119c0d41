//! Exact rational helpers shared by the bounds, ledger and reports.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub fn int(n: impl Into<BigInt>) -> Rational {
    Rational::from_integer(n.into())
}

pub fn ratio(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Rational {
    Rational::new(num.into(), den.into())
}

pub fn from_biguint(n: BigUint) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Always `num/den` in lowest terms, e.g. `0/1`, `21/256`.
pub fn ratio_string(value: &Rational) -> String {
    format!("{}/{}", value.numer(), value.denom())
}

pub fn parse_ratio(text: &str) -> Option<Rational> {
    let (num, den) = text.split_once('/')?;
    let num: BigInt = num.trim().parse().ok()?;
    let den: BigInt = den.trim().parse().ok()?;
    (!den.is_zero()).then(|| Rational::new(num, den))
}

/// Decimal rendering rounded half-up to `digits` significant digits.
pub fn decimal_string(value: &Rational, digits: usize) -> String {
    assert!(digits > 0);
    if value.is_zero() {
        return "0".to_string();
    }
    let sign = if value.is_negative() { "-" } else { "" };
    let abs = value.abs();

    // Exponent e with 10^e <= abs < 10^(e+1).
    let ten = BigInt::from(10);
    let mut exp: i64 = abs.to_integer().to_string().len() as i64 - 1;
    if abs < int(1) {
        exp = -1;
        while &abs * pow10(-exp) < int(1) {
            exp -= 1;
        }
    }
    let shift = digits as i64 - 1 - exp;
    let scaled = &abs * pow10(shift);
    let (mut q, r) = scaled.numer().div_rem(scaled.denom());
    if r * 2 >= *scaled.denom() {
        q += 1;
    }
    let mut shift = shift;
    if q.to_string().len() > digits {
        q /= &ten;
        shift -= 1;
    }
    let digit_str = q.to_string();
    let body = if shift <= 0 {
        format!("{}{}", digit_str, "0".repeat((-shift) as usize))
    } else {
        let shift = shift as usize;
        if digit_str.len() > shift {
            let (a, b) = digit_str.split_at(digit_str.len() - shift);
            format!("{a}.{b}")
        } else {
            format!("0.{}{}", "0".repeat(shift - digit_str.len()), digit_str)
        }
    };
    format!("{sign}{body}")
}

fn pow10(exp: i64) -> Rational {
    let p = num_traits::pow(BigInt::from(10), exp.unsigned_abs() as usize);
    if exp >= 0 {
        Rational::from_integer(p)
    } else {
        Rational::new(BigInt::from(1), p)
    }
}

pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

pub fn serialize_ratio<S: serde::Serializer>(value: &Rational, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_str(&ratio_string(value))
}
