//! Exact rational parsing and formatting.
//!
//! The wire format for every number in this crate is a lowest-terms fraction
//! string: `"3/4"`, `"-7/2"`, or a plain integer `"12"`. JSON inputs may also
//! use native integers; outputs are always strings so that round-trips are
//! exact and diffs are stable.

use crate::{Error, Rational, Result};
use num_bigint::BigInt;
use num_traits::{One, Zero};
use std::str::FromStr;

/// Builds the rational `n` (integer shorthand).
///
/// # Examples
///
/// ```
/// use spreadbench_core::rational::{format_rational, rat};
/// assert_eq!(format_rational(&rat(-3)), "-3");
/// ```
pub fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Builds the rational `n/d` in lowest terms.
///
/// # Panics
///
/// Panics when `d == 0`; use [`parse_rational`] for untrusted input.
///
/// # Examples
///
/// ```
/// use spreadbench_core::rational::{format_rational, ratio};
/// assert_eq!(format_rational(&ratio(6, -4)), "-3/2");
/// ```
pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// Parses `"p/q"` or `"p"` into an exact rational.
///
/// Whitespace around the string and around the `/` is tolerated; a zero
/// denominator or anything non-numeric is [`Error::MalformedRational`].
///
/// # Examples
///
/// ```
/// use spreadbench_core::rational::{parse_rational, ratio};
/// assert_eq!(parse_rational("-3/4").unwrap(), ratio(-3, 4));
/// assert_eq!(parse_rational("12").unwrap(), ratio(12, 1));
/// assert!(parse_rational("1/0").is_err());
/// ```
pub fn parse_rational(s: &str) -> Result<Rational> {
    let bad = || Error::MalformedRational(s.to_string());
    let trimmed = s.trim();
    if trimmed.is_empty() {
        return Err(bad());
    }
    let (num_str, den_str) = match trimmed.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (trimmed, "1"),
    };
    let numer = BigInt::from_str(num_str).map_err(|_| bad())?;
    let denom = BigInt::from_str(den_str).map_err(|_| bad())?;
    if denom.is_zero() {
        return Err(bad());
    }
    Ok(Rational::new(numer, denom))
}

/// Formats a rational in lowest terms: `"p/q"`, or `"p"` when the
/// denominator is 1.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Reads a rational from a JSON value: either a `"p/q"` string or a native
/// integer.
pub fn rational_from_json(v: &serde_json::Value) -> Result<Rational> {
    match v {
        serde_json::Value::String(s) => parse_rational(s),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(rat(i))
            } else if let Some(u) = n.as_u64() {
                Ok(Rational::from_integer(BigInt::from(u)))
            } else {
                Err(Error::MalformedRational(format!(
                    "{n} (only integers and \"p/q\" strings are exact)"
                )))
            }
        }
        other => Err(Error::MalformedRational(other.to_string())),
    }
}

/// Writes a rational as a canonical JSON string value.
pub fn rational_to_json(r: &Rational) -> serde_json::Value {
    serde_json::Value::String(format_rational(r))
}
