//! Serde helpers that carry `f64` values as shortest round-trip decimal
//! strings. Parsing a decimal string with `str::parse` is correctly rounded,
//! so `decode(encode(x)) == x` bit for bit. Non-finite values are rejected in
//! both directions.

use serde::de::Error as _;
use serde::ser::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

/// `{:?}` on `f64` yields the shortest string that parses back to the same
/// bits, switching to exponent notation for very large or small magnitudes.
pub fn format_real(x: f64) -> Option<String> {
    if x.is_finite() {
        Some(format!("{x:?}"))
    } else {
        None
    }
}

pub fn parse_real(s: &str) -> Option<f64> {
    // `f64::from_str` accepts "inf" and "NaN"; the wire does not.
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b)) {
        return None;
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn ser_one<S: Serializer>(x: f64, s: S) -> Result<S::Ok, S::Error> {
    match format_real(x) {
        Some(text) => s.serialize_str(&text),
        None => Err(S::Error::custom(format!("non-finite value {x}"))),
    }
}

fn de_one<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
    parse_real(&text).ok_or_else(|| D::Error::custom(format!("invalid real {text:?}")))
}

pub mod one {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        ser_one(*x, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        de_one(d)
    }
}

pub mod vec {
    use super::*;
    use serde::ser::SerializeSeq;

    struct Real(f64);

    impl<'de> Deserialize<'de> for Real {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            de_one(d).map(Real)
        }
    }

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for &x in xs {
            let text = format_real(x).ok_or_else(|| S::Error::custom(format!("non-finite value {x}")))?;
            seq.serialize_element(&text)?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Real>::deserialize(d)?;
        Ok(v.into_iter().map(|r| r.0).collect())
    }

    pub(crate) fn de_nested<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let v = Vec::<Vec<Real>>::deserialize(d)?;
        Ok(v.into_iter().map(|row| row.into_iter().map(|r| r.0).collect()).collect())
    }
}

pub mod nested {
    use super::*;
    use serde::ser::SerializeSeq;

    struct Row<'a>(&'a [f64]);

    impl serde::Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            super::vec::serialize(self.0, s)
        }
    }

    pub fn serialize<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(rows.len()))?;
        for row in rows {
            seq.serialize_element(&Row(row))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        super::vec::de_nested(d)
    }
}
