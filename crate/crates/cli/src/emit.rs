//! CSV and JSON result tables.

use std::fs;
use std::path::Path;

use crate::config::Format;
use crate::experiment::Row;

pub const COLUMNS: [&str; 17] = [
    "a",
    "kappa_lower_r",
    "kappa_lower_e",
    "kappa_upper_r",
    "kappa_upper_e",
    "delta",
    "beta",
    "delta1",
    "delta2",
    "lower",
    "upper",
    "pi_tilde_r",
    "error_bound",
    "tv_bound",
    "wall_time_seconds",
    "status",
    "validation",
];

pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error("refusing to write an empty table")]
    EmptyTable,
    #[error("write failed: {0}")]
    Io(#[source] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[source] csv::Error),
    #[error("json: {0}")]
    Json(#[source] serde_json::Error),
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().unwrap_or(v)
}

fn rounded(row: &Row) -> Row {
    let r = |v: Option<f64>| v.map(round_sig);
    Row {
        kappa_lower_r: r(row.kappa_lower_r),
        kappa_lower_e: r(row.kappa_lower_e),
        kappa_upper_r: r(row.kappa_upper_r),
        kappa_upper_e: r(row.kappa_upper_e),
        delta: r(row.delta),
        beta: r(row.beta),
        delta1: r(row.delta1),
        delta2: r(row.delta2),
        lower: r(row.lower),
        upper: r(row.upper),
        pi_tilde_r: r(row.pi_tilde_r),
        error_bound: r(row.error_bound),
        tv_bound: r(row.tv_bound),
        wall_time_seconds: round_sig(row.wall_time_seconds),
        ..row.clone()
    }
}

pub fn to_csv(rows: &[Row]) -> Result<String, EmitError> {
    if rows.is_empty() {
        return Err(EmitError::EmptyTable);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(rounded(row)).map_err(EmitError::Csv)?;
    }
    let bytes = w.into_inner().map_err(|e| EmitError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_json(rows: &[Row]) -> Result<String, EmitError> {
    if rows.is_empty() {
        return Err(EmitError::EmptyTable);
    }
    let rows: Vec<Row> = rows.iter().map(rounded).collect();
    serde_json::to_string_pretty(&rows).map_err(EmitError::Json)
}

pub fn render(rows: &[Row], format: Format) -> Result<String, EmitError> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Json => to_json(rows),
    }
}

/// Writes the table to `path`, or to stdout when `path` is `None`.
pub fn emit(rows: &[Row], format: Format, path: Option<&Path>) -> Result<(), EmitError> {
    let text = render(rows, format)?;
    match path {
        Some(p) => fs::write(p, text).map_err(EmitError::Io),
        None => {
            print!("{text}");
            if format == Format::Json {
                println!();
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Row {
        Row {
            a: 1000,
            kappa_lower_r: Some(1.0 / 3.0),
            kappa_lower_e: Some(1.5),
            kappa_upper_r: Some(0.5),
            kappa_upper_e: Some(1.5),
            delta: Some(1.0),
            beta: Some(0.999_999_999_999_9),
            delta1: Some(0.0),
            delta2: Some(0.0),
            lower: Some(130.147_201_234_567_89),
            upper: Some(137.547_360_000_1),
            pi_tilde_r: Some(133.0),
            error_bound: Some(1e-20),
            tv_bound: Some(2e-20),
            wall_time_seconds: 0.012_345_678_901_234,
            status: "ok".into(),
            validation: "skipped".into(),
        }
    }

    #[test]
    fn one_row_csv_has_header_and_row() {
        let csv = to_csv(&[sample()]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], COLUMNS.join(","));
        assert!(lines[1].starts_with("1000,0.333333333333,1.5,"), "{}", lines[1]);
        assert!(lines[1].contains(",130.147201235,"));
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![sample(), Row { a: 2000, lower: None, status: "degenerate_delta".into(), ..sample() }];
        let text = to_json(&rows).unwrap();
        let back: Vec<Row> = serde_json::from_str(&text).unwrap();
        let expected: Vec<Row> = rows.iter().map(rounded).collect();
        assert_eq!(back, expected);
        let again = to_json(&back).unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn json_keys_match_columns() {
        let text = to_json(&[sample()]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&String> = v[0].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), COLUMNS.len());
        for c in COLUMNS {
            assert!(v[0].get(c).is_some(), "{c}");
        }
    }

    #[test]
    fn empty_table_is_an_error() {
        assert!(matches!(to_csv(&[]), Err(EmitError::EmptyTable)));
        assert!(matches!(to_json(&[]), Err(EmitError::EmptyTable)));
    }

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(123.456_789_012_345), 123.456_789_012);
        assert_eq!(round_sig(-1.234_567_890_123_4e-7), -1.234_567_890_12e-7);
    }
}
