//! Unit-suffixed quantity parsing for scene and run-config files.
//!
//! Values are written as a number immediately followed by (or separated by
//! whitespace from) a unit suffix, e.g. `20nm`, `0.1 T`, `4K`, `10MHz`,
//! `2us`. Parsed values are returned in SI base units (m, s, Hz, T, K).
//! A bare number is accepted only where the caller allows dimensionless
//! input (normalized mode).

use crate::error::{QdmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Time,
    Frequency,
    Field,
    Temperature,
    Dimensionless,
}

const LENGTH: &[(&str, i32)] = &[("pm", -12), ("nm", -9), ("um", -6), ("μm", -6), ("mm", -3), ("m", 0)];
const TIME: &[(&str, i32)] = &[("ps", -12), ("ns", -9), ("us", -6), ("μs", -6), ("ms", -3), ("s", 0)];
const FREQUENCY: &[(&str, i32)] = &[("GHz", 9), ("MHz", 6), ("kHz", 3), ("Hz", 0)];
const FIELD: &[(&str, i32)] = &[("nT", -9), ("uT", -6), ("μT", -6), ("mT", -3), ("T", 0)];
const TEMPERATURE: &[(&str, i32)] = &[("mK", -3), ("K", 0)];

fn table(dim: Dimension) -> &'static [(&'static str, i32)] {
    match dim {
        Dimension::Length => LENGTH,
        Dimension::Time => TIME,
        Dimension::Frequency => FREQUENCY,
        Dimension::Field => FIELD,
        Dimension::Temperature => TEMPERATURE,
        Dimension::Dimensionless => &[],
    }
}

/// `value·10^exp`, dividing for negative exponents so that e.g. `200us`
/// gives exactly `2e-4`.
fn scale(value: f64, exp: i32) -> f64 {
    if exp < 0 {
        value / 10f64.powi(-exp)
    } else {
        value * 10f64.powi(exp)
    }
}

/// Split `"20nm"` into `("20", "nm")`.
fn split_number(text: &str) -> (&str, &str) {
    let text = text.trim();
    let end = text
        .char_indices()
        .find(|&(i, c)| {
            !(c.is_ascii_digit()
                || c == '.'
                || c == '+'
                || c == '-'
                || ((c == 'e' || c == 'E')
                    && text[i + 1..]
                        .chars()
                        .next()
                        .is_some_and(|n| n.is_ascii_digit() || n == '-' || n == '+')))
        })
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    (&text[..end], text[end..].trim())
}

/// Parse a quantity of the given dimension into SI base units.
///
/// `allow_bare` accepts a suffix-free number as already being in the
/// caller's internal unit (used by normalized scenes).
pub fn parse_quantity(text: &str, dim: Dimension, allow_bare: bool) -> Result<f64> {
    let (num, suffix) = split_number(text);
    let value: f64 = num.parse().map_err(|_| QdmError::Parse {
        line: 0,
        message: format!("not a number: {text:?}"),
    })?;
    if !value.is_finite() {
        return Err(QdmError::Parse {
            line: 0,
            message: format!("non-finite value: {text:?}"),
        });
    }
    if suffix.is_empty() {
        if allow_bare || dim == Dimension::Dimensionless {
            return Ok(value);
        }
        return Err(QdmError::Parse {
            line: 0,
            message: format!("missing unit suffix on {text:?} (expected {dim:?})"),
        });
    }
    table(dim)
        .iter()
        .find(|(s, _)| *s == suffix)
        .map(|&(_, exp)| scale(value, exp))
        .ok_or_else(|| QdmError::Parse {
            line: 0,
            message: format!("unknown {dim:?} unit {suffix:?} in {text:?}"),
        })
}

/// Parse a comma-separated list of quantities.
pub fn parse_list(text: &str, dim: Dimension, allow_bare: bool) -> Result<Vec<f64>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_quantity(s, dim, allow_bare))
        .collect()
}

/// Attach a line number to parse errors raised without one.
pub(crate) fn at_line<T>(line: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        QdmError::Parse { line: 0, message } => QdmError::Parse { line, message },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_quantity("20nm", Dimension::Length, false).unwrap(), 20e-9);
        assert_eq!(parse_quantity("0.1 T", Dimension::Field, false).unwrap(), 0.1);
        assert_eq!(parse_quantity("4K", Dimension::Temperature, false).unwrap(), 4.0);
        assert_eq!(parse_quantity("10MHz", Dimension::Frequency, false).unwrap(), 1e7);
        assert!((parse_quantity("2us", Dimension::Time, false).unwrap() - 2e-6).abs() < 1e-20);
        assert_eq!(parse_quantity("1e-3s", Dimension::Time, false).unwrap(), 1e-3);
        assert!((parse_quantity("-2.5e1 nm", Dimension::Length, false).unwrap() + 25e-9).abs() < 1e-22);
    }

    #[test]
    fn bare_numbers() {
        assert!(parse_quantity("20", Dimension::Length, false).is_err());
        assert_eq!(parse_quantity("0.05", Dimension::Length, true).unwrap(), 0.05);
        assert_eq!(parse_quantity("7", Dimension::Dimensionless, false).unwrap(), 7.0);
    }

    #[test]
    fn wrong_dimension() {
        assert!(parse_quantity("20nm", Dimension::Time, false).is_err());
        assert!(parse_quantity("abc", Dimension::Time, true).is_err());
    }

    #[test]
    fn lists() {
        let v = parse_list("2us,200us, 20ms", Dimension::Time, false).unwrap();
        assert_eq!(v.len(), 3);
        assert!((v[2] - 0.02).abs() < 1e-15);
    }
}
