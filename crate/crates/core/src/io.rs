//! Shared CSV formatting. Every real number is written with 17 significant
//! digits so that files round-trip bit-for-bit.

use crate::error::{FilterError, Result};

/// Formats `x` with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| FilterError::Csv(format!("line {line}: {e} in {s:?}")))
}

pub(crate) fn parse_optional(s: &str, line: usize) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_field(s, line).map(Some)
    }
}
