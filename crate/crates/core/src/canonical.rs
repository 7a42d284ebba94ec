//! Canonical text serialization.
//!
//! Every document written by this crate is JSON with floats printed at 17
//! significant digits, which is enough for a bit-exact round trip of any
//! finite `f64`. Object key order follows struct field order, so two equal
//! values always produce identical bytes.

use std::io::{self, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};

/// Pretty JSON formatter that prints floats in `{:.16e}` form.
struct CanonicalFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident : $ty:ty),*)),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.inner.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for CanonicalFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{}", format_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{}", format_f64(value as f64))
    }

    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

/// Formats a finite float with 17 significant digits.
pub fn format_f64(value: f64) -> String {
    if value == 0.0 {
        // keeps the sign of negative zero
        if value.is_sign_negative() {
            "-0.0000000000000000e0".to_string()
        } else {
            "0.0000000000000000e0".to_string()
        }
    } else {
        format!("{value:.16e}")
    }
}

/// Serializes `value` to canonical JSON text (trailing newline included).
pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let fmt = CanonicalFormatter {
        inner: PrettyFormatter::with_indent(b"  "),
    };
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn from_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_file<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    crate::error::write_text(path, to_string(value)?)?;
    Ok(())
}

pub fn read_file<T: DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    from_str(&crate::error::read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(format_f64(44.589372), "4.4589371999999997e1");
        assert_eq!(format_f64(0.0), "0.0000000000000000e0");
        let text = to_string(&vec![0.1f64, -2.5]).unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
    }

    proptest! {
        #[test]
        fn finite_floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let text = to_string(&vec![x]).unwrap();
            let back: Vec<f64> = from_str(&text).unwrap();
            prop_assert_eq!(back[0].to_bits(), x.to_bits());
        }
    }
}
