//! Line-oriented helpers shared by the plain-text dump formats.
//!
//! Every dump starts with a header of the form
//!
//! ```text
//! # tag=value key=value ...
//! ```
//!
//! followed by whitespace-separated data rows. Floating-point values are
//! written with 17 significant digits (`{:.16e}`), which round-trips `f64`
//! exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{IbisError, Result};

/// Format a float with 17 significant digits.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Append a row of 17-significant-digit floats (space-separated).
pub(crate) fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

/// Split a `# tag[=value] key=value ...` header into key/value pairs,
/// checking that the first key is `tag` (which may appear bare, as in
/// `# heights lower=... upper=...`).
pub(crate) fn header_pairs<'a>(line: &'a str, tag: &str) -> Result<Vec<(&'a str, &'a str)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| IbisError::Parse(format!("expected '# {tag}...' header, got '{line}'")))?;
    let mut pairs = Vec::new();
    for (idx, tok) in body.split_whitespace().enumerate() {
        match tok.split_once('=') {
            Some((k, v)) => pairs.push((k, v)),
            None if idx == 0 => pairs.push((tok, "")),
            None => {
                return Err(IbisError::Parse(format!("malformed header token '{tok}'")));
            }
        }
    }
    match pairs.first() {
        Some(&(k, _)) if k == tag => Ok(pairs),
        _ => Err(IbisError::Parse(format!(
            "expected '# {tag}...' header, got '{line}'"
        ))),
    }
}

/// Look up and parse a header value.
pub(crate) fn header_get<T: FromStr>(pairs: &[(&str, &str)], key: &str) -> Result<T> {
    let (_, v) = pairs
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| IbisError::Parse(format!("header is missing '{key}'")))?;
    v.parse()
        .map_err(|_| IbisError::Parse(format!("cannot parse {key}='{v}'")))
}

/// Next non-empty line, or a parse error mentioning `what`.
pub(crate) fn next_line<'a>(lines: &mut std::str::Lines<'a>, what: &str) -> Result<&'a str> {
    for line in lines {
        if !line.trim().is_empty() {
            return Ok(line);
        }
    }
    Err(IbisError::Parse(format!(
        "unexpected end of input, expected {what}"
    )))
}

/// Parse one whitespace-separated data row into exactly `n` floats.
pub(crate) fn parse_row(line: &str, n: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        line.split_whitespace().map(f64::from_str).collect();
    let vals = vals.map_err(|_| IbisError::Parse(format!("bad data row '{line}'")))?;
    if vals.len() != n {
        return Err(IbisError::Parse(format!(
            "expected {n} columns, got {} in '{line}'",
            vals.len()
        )));
    }
    Ok(vals)
}
