//! Number formatting and comparison helpers shared by the text formats.

use alloc::format;
use alloc::string::String;

/// Formats a double so that parsing the result gives back the same value.
///
/// Uses the shortest digit string that round-trips; switches to exponent
/// notation outside `[1e-5, 1e16)` to keep tokens short. Non-finite values
/// are written as `NaN`, `inf` and `-inf`, which `str::parse::<f64>` accepts.
pub fn fmt_real(x: f64) -> String {
    let mag = x.abs();
    if !x.is_finite() || mag == 0.0 || (1e-5..1e16).contains(&mag) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Parses a real literal as written by [`fmt_real`] or by hand.
pub fn parse_real(token: &str) -> Option<f64> {
    match token {
        "nan" | "NaN" | "NAN" => Some(f64::NAN),
        _ => token.parse::<f64>().ok(),
    }
}

/// Bit equality, except that any two NaNs compare equal.
pub fn same_value(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || a.to_bits() == b.to_bits()
}

/// `|a - b|` with NaN-aware semantics: equal values (including two NaNs or
/// two equal infinities) give 0, any other comparison involving a NaN or an
/// infinity gives `+inf`.
pub fn abs_diff(a: f64, b: f64) -> f64 {
    if a == b || (a.is_nan() && b.is_nan()) {
        return 0.0;
    }
    let d = (a - b).abs();
    if d.is_nan() {
        f64::INFINITY
    } else {
        d
    }
}

/// Whether `x` is a finite whole number.
pub fn is_integral(x: f64) -> bool {
    x.is_finite() && libm::trunc(x) == x
}

/// Serde adapter for reals in formats without NaN or infinities: finite
/// values stay numbers, the rest become the strings `NaN`, `inf`, `-inf`.
pub mod json_real {
    use core::fmt;

    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::fmt_real(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct Real;

        impl Visitor<'_> for Real {
            type Value = f64;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or one of \"NaN\", \"inf\", \"-inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match super::parse_real(v) {
                    Some(x) if !x.is_finite() => Ok(x),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }

        d.deserialize_any(Real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_awkward_values() {
        for x in [
            0.1,
            -0.0,
            1.0 / 3.0,
            1e-300,
            5e-324,
            f64::MAX,
            f64::MIN_POSITIVE,
            123456789.123,
            1e16,
            -2.5e-6,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ] {
            let back = parse_real(&fmt_real(x)).unwrap();
            assert!(same_value(x, back), "{x} -> {} -> {back}", fmt_real(x));
        }
        assert!(parse_real(&fmt_real(f64::NAN)).unwrap().is_nan());
    }

    #[test]
    fn integers_print_without_fraction() {
        assert_eq!(fmt_real(3.0), "3");
        assert_eq!(fmt_real(-9999.0), "-9999");
        assert_eq!(fmt_real(1e-9), "1e-9");
    }

    #[test]
    fn abs_diff_handles_specials() {
        assert_eq!(abs_diff(f64::NAN, f64::NAN), 0.0);
        assert_eq!(abs_diff(f64::NAN, 1.0), f64::INFINITY);
        assert_eq!(abs_diff(f64::INFINITY, f64::INFINITY), 0.0);
        assert_eq!(abs_diff(f64::INFINITY, 1.0), f64::INFINITY);
        assert_eq!(abs_diff(1.0, 2.5), 1.5);
    }
}
