//! Exact rational helpers and the `"p/q"` text encoding used in files.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Q = BigRational;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn one() -> Q {
    Q::one()
}

pub fn from_u128(n: u128) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // Ratios of huge integers: scale both down to keep the quotient.
        let n = x.numer().bits() as i64;
        let d = x.denom().bits() as i64;
        let shift = (n.max(d) - 1000).max(0) as u64;
        let nn = (x.numer() >> shift).to_f64().unwrap_or(f64::NAN);
        let dd = (x.denom() >> shift).to_f64().unwrap_or(f64::NAN);
        nn / dd
    })
}

pub fn format(x: &Q) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn parse(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((a, b)) => {
            let n: BigInt = a.trim().parse().map_err(|_| bad())?;
            let d: BigInt = b.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => match s.split_once('.') {
            Some((int, frac)) => {
                let neg = int.trim_start().starts_with('-');
                if frac.is_empty() || !frac.bytes().all(|c| c.is_ascii_digit()) {
                    return Err(bad());
                }
                let i: BigInt = if int.is_empty() || int == "-" { BigInt::zero() } else { int.parse().map_err(|_| bad())? };
                let f: BigInt = frac.parse().map_err(|_| bad())?;
                let scale = num_traits::pow(BigInt::from(10), frac.len());
                let f = Q::new(f, scale);
                let i = Q::from_integer(i);
                Ok(if neg { i - f } else { i + f })
            }
            None => Ok(Q::from_integer(s.parse().map_err(|_| bad())?)),
        },
    }
}

pub fn abs(x: &Q) -> Q {
    x.abs()
}

/// Serde adapter storing a rational as a `"p/q"` string.
pub mod serde_q {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Q, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Binomial coefficient as an exact big integer (zero outside `0 ≤ k ≤ n`).
pub fn binom(n: i64, k: i64) -> BigInt {
    if k < 0 || n < 0 || k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Binomial coefficient as u128; panics on overflow, which only happens far
/// beyond the sizes handled explicitly.
pub fn binom_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

pub fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |a, i| a * BigInt::from(i))
}

/// Weights over their least common denominator `D`, as `(D, numerators)`.
/// `None` if anything leaves `i128`.
pub fn common_scale<'a>(ws: impl IntoIterator<Item = &'a Q>) -> Option<(i128, Vec<i128>)> {
    use num_integer::Integer;
    let ws: Vec<&Q> = ws.into_iter().collect();
    let d = ws.iter().fold(BigInt::from(1), |acc, w| acc.lcm(w.denom()));
    let nums = ws.iter().map(|w| (w.numer() * (&d / w.denom())).to_i128()).collect::<Option<Vec<_>>>()?;
    Some((d.to_i128()?, nums))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse("3/6").unwrap(), q(1, 2));
        assert_eq!(parse("0.25").unwrap(), q(1, 4));
        assert_eq!(parse("-1.5").unwrap(), q(-3, 2));
        assert_eq!(parse("-0.5").unwrap(), q(-1, 2));
        assert_eq!(parse("7").unwrap(), qi(7));
        assert!(parse("1/0").is_err());
        assert!(parse("1.").is_err());
        assert!(parse("x").is_err());
    }

    #[test]
    fn scale_roundtrip() {
        let ws = [q(1, 3), q(-1, 4), q(5, 6)];
        let (d, n) = common_scale(ws.iter()).unwrap();
        assert_eq!(d, 12);
        assert_eq!(n, vec![4, -3, 10]);
    }
}
