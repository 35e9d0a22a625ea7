//! Exact rational helpers: decimal formatting, parsing and rounding.
//!
//! Network parameters travel through JSON files and SMT scripts as text. A
//! value whose denominator has only the prime factors 2 and 5 has a finite
//! decimal expansion and is written that way; anything else is written as
//! `p/q`. Both forms parse back to the identical rational.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Number of decimal digits needed to write `r` exactly, or `None` when the
/// expansion does not terminate.
pub fn decimal_digits(r: &BigRational) -> Option<usize> {
    let mut den = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let (mut twos, mut fives) = (0usize, 0usize);
    while den.is_even() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    den.is_one().then_some(twos.max(fives))
}

/// Writes `r` as a plain decimal when it terminates, `p/q` otherwise.
pub fn format_rational(r: &BigRational) -> String {
    match decimal_digits(r) {
        Some(digits) => format_decimal(r, digits),
        None => format!("{}/{}", r.numer(), r.denom()),
    }
}

/// Exact decimal rendering with `digits` fractional digits. The caller
/// guarantees that `r * 10^digits` is an integer.
fn format_decimal(r: &BigRational, digits: usize) -> String {
    let scale = BigInt::from(10).pow(digits as u32);
    let scaled = (r * BigRational::from_integer(scale)).to_integer();
    let neg = scaled.sign() == Sign::Minus;
    let mut s = scaled.abs().to_string();
    if digits > 0 {
        if s.len() <= digits {
            s = format!("{}{}", "0".repeat(digits + 1 - s.len()), s);
        }
        s.insert(s.len() - digits, '.');
    }
    if neg {
        s.insert(0, '-');
    }
    s
}

/// Parses `-12`, `3.25`, `1e-3`, `-2.5E2` or `p/q` exactly.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if let Some((p, q)) = t.split_once('/') {
        let p = parse_rational(p)?;
        let q = parse_rational(q)?;
        if q.is_zero() {
            return None;
        }
        return Some(p / q);
    }
    let (mantissa, exp) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i32>().ok()?),
        None => (t, 0),
    };
    let (neg, body) = match mantissa.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int_part}{frac_part}").parse().ok()?;
    let shift = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(digits);
    if shift >= 0 {
        value *= BigRational::from_integer(ten.pow(shift as u32));
    } else {
        value /= BigRational::from_integer(ten.pow((-shift) as u32));
    }
    Some(if neg { -value } else { value })
}

/// Exact value of a finite `f64`.
pub fn from_f64_exact(v: f64) -> Result<BigRational> {
    BigRational::from_float(v)
        .ok_or_else(|| Error::InvalidInput(format!("non-finite value {v}")))
}

/// The shortest decimal that round-trips to `v`, as an exact rational.
/// This is the value a CSV file shows for `v`.
pub fn from_f64_shortest(v: f64) -> Result<BigRational> {
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite value {v}")));
    }
    parse_rational(&format!("{v}"))
        .ok_or_else(|| Error::InvalidInput(format!("unparseable float {v}")))
}

/// Rounds half away from zero to `decimals` fractional digits.
pub fn round_to_decimals(r: &BigRational, decimals: u32) -> BigRational {
    let scale = BigRational::from_integer(BigInt::from(10).pow(decimals));
    (r * &scale).round() / scale
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

pub fn is_integer(r: &BigRational) -> bool {
    r.denom().is_one()
}
