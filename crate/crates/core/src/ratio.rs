//! Text form `a/b` for exact rationals in reports and files.

use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serializer;

pub fn format(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

/// Accepts `a/b` or a bare integer.
pub fn parse(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if s.contains('/') {
        let q = BigRational::from_str(s).ok()?;
        Some(q)
    } else {
        BigInt::from_str(s).ok().map(BigRational::from_integer)
    }
}

pub fn to_f64(q: &BigRational) -> f64 {
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn from_ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn serialize<S: Serializer>(q: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format(q))
}

pub fn serialize_vec<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(format))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let q = from_ratio(6, 8);
        assert_eq!(format(&q), "3/4");
        assert_eq!(parse("3/4"), Some(q));
        assert_eq!(parse("2"), Some(from_ratio(2, 1)));
        assert_eq!(parse("x"), None);
        assert_eq!(parse("1/0"), None);
    }
}
