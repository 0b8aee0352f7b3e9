//! Fixed 17-significant-digit float serialization.
//!
//! `{:.16e}` round-trips every finite `f64` and prints the same bytes on
//! every platform, unlike shortest-representation formatting which depends
//! on the formatter implementation. Non-finite values become `null`.

use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub fn format(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return s.serialize_none();
    }
    RawValue::from_string(format(*x))
        .map_err(S::Error::custom)?
        .serialize(s)
}

pub fn opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => f64(v, s),
        None => s.serialize_none(),
    }
}

struct Fixed<'a>(&'a f64);

impl Serialize for Fixed<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        f64(self.0, s)
    }
}

pub fn vec<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(Fixed))
}

pub fn opt_vec<S: Serializer>(xs: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match xs {
        Some(v) => vec(v, s),
        None => s.serialize_none(),
    }
}
