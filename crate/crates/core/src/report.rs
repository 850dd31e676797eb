//! Exact-fraction rendering and deterministic report emission.
//!
//! Two output formats share one record model: an aligned plain-text table and
//! one JSON object per line. Both start with `#`-prefixed header lines that
//! carry the schema, recipe and seeds, so byte-identical inputs give
//! byte-identical files.

use std::fmt;
use std::io::{self, Write};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

/// Digits after the point in decimal renderings.
pub const DECIMAL_PLACES: usize = 6;

/// `a/b` in lowest terms, or `a` when the denominator is 1.
pub fn fraction(q: &BigRational) -> String {
    if q.denom() == &BigInt::from(1) {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Fixed-point rendering, rounded half away from zero.
pub fn decimal(q: &BigRational, places: usize) -> String {
    let scale = BigInt::from(10).pow(places as u32);
    let scaled = q.abs() * BigRational::from_integer(scale.clone());
    let (whole, rem) = scaled.numer().div_rem(scaled.denom());
    let rounded = if rem * 2 >= *scaled.denom() {
        whole + 1
    } else {
        whole
    };
    let (int_part, frac_part) = rounded.div_rem(&scale);
    let sign = if q.is_negative() && !rounded_is_zero(&int_part, &frac_part) {
        "-"
    } else {
        ""
    };
    if places == 0 {
        return format!("{sign}{int_part}");
    }
    format!(
        "{sign}{int_part}.{:0>width$}",
        frac_part.to_string(),
        width = places
    )
}

fn rounded_is_zero(a: &BigInt, b: &BigInt) -> bool {
    a.is_zero() && b.is_zero()
}

pub fn parse_fraction(text: &str) -> Option<BigRational> {
    let parse = |s: &str| s.parse::<BigInt>().ok();
    match text.split_once('/') {
        Some((n, d)) => {
            let d = parse(d)?;
            if d.is_zero() {
                return None;
            }
            Some(BigRational::new(parse(n)?, d))
        }
        None => Some(BigRational::from_integer(parse(text)?)),
    }
}

pub fn ratio(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// An exact rational that serializes as `{"exact": "4/3", "decimal": "1.333333"}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exact(pub BigRational);

impl Exact {
    pub fn from_ratio(n: usize, d: usize) -> Self {
        Exact(ratio(n, d))
    }
}

impl From<BigRational> for Exact {
    fn from(q: BigRational) -> Self {
        Exact(q)
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&fraction(&self.0))
    }
}

#[derive(Serialize, Deserialize)]
struct ExactRepr {
    exact: String,
    decimal: String,
}

impl Serialize for Exact {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ExactRepr {
            exact: fraction(&self.0),
            decimal: decimal(&self.0, DECIMAL_PLACES),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = ExactRepr::deserialize(d)?;
        parse_fraction(&repr.exact)
            .map(Exact)
            .ok_or_else(|| serde::de::Error::custom(format!("bad fraction {}", repr.exact)))
    }
}

/// One report cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Text(String),
    Count(u64),
    Ratio(BigRational),
    Missing(String),
}

impl Cell {
    fn table_text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Count(n) => n.to_string(),
            Cell::Ratio(q) => format!("{} ({})", decimal(q, DECIMAL_PLACES), fraction(q)),
            Cell::Missing(why) => why.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Text(s) => serde_json::Value::String(s.clone()),
            Cell::Count(n) => serde_json::Value::from(*n),
            Cell::Ratio(q) => serde_json::to_value(Exact(q.clone())).expect("exact serializes"),
            Cell::Missing(why) => serde_json::Value::String(why.clone()),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Count(n as u64)
    }
}

impl From<BigRational> for Cell {
    fn from(q: BigRational) -> Self {
        Cell::Ratio(q)
    }
}

impl From<Option<BigRational>> for Cell {
    fn from(q: Option<BigRational>) -> Self {
        q.map_or(Cell::Missing("undefined".into()), Cell::Ratio)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Lines,
}

/// Rows under named columns, with `key=value` header metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub schema: String,
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    pub fn new(schema: impl Into<String>, columns: &[&str]) -> Self {
        Report {
            schema: schema.into(),
            header: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match columns"
        );
        self.rows.push(row);
    }

    fn write_header<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# schema={}", self.schema)?;
        for (k, v) in &self.header {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, format: ReportFormat, mut out: W) -> io::Result<()> {
        self.write_header(&mut out)?;
        match format {
            ReportFormat::Table => {
                let cells: Vec<Vec<String>> = self
                    .rows
                    .iter()
                    .map(|r| r.iter().map(Cell::table_text).collect())
                    .collect();
                let widths: Vec<usize> = (0..self.columns.len())
                    .map(|i| {
                        cells
                            .iter()
                            .map(|r| r[i].chars().count())
                            .chain(std::iter::once(self.columns[i].chars().count()))
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let line = |items: &[String]| -> String {
                    items
                        .iter()
                        .zip(&widths)
                        .map(|(s, w)| format!("{s:<w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                        .trim_end()
                        .to_string()
                };
                writeln!(out, "{}", line(&self.columns))?;
                writeln!(
                    out,
                    "{}",
                    widths
                        .iter()
                        .map(|w| "-".repeat(*w))
                        .collect::<Vec<_>>()
                        .join("  ")
                )?;
                for row in &cells {
                    writeln!(out, "{}", line(row))?;
                }
            }
            ReportFormat::Lines => {
                for row in &self.rows {
                    let mut obj = serde_json::Map::new();
                    for (c, cell) in self.columns.iter().zip(row) {
                        obj.insert(c.clone(), cell.json());
                    }
                    writeln!(out, "{}", serde_json::Value::Object(obj))?;
                }
            }
        }
        Ok(())
    }

    pub fn to_string(&self, format: ReportFormat) -> String {
        let mut buf = Vec::new();
        self.write(format, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("reports are utf-8")
    }
}

/// Unweighted mean of per-problem values; `None` for an empty list.
pub fn macro_mean(values: &[BigRational]) -> Option<BigRational> {
    if values.is_empty() {
        return None;
    }
    let sum: BigRational = values.iter().cloned().sum();
    Some(sum / BigRational::from_integer(BigInt::from(values.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_and_decimals() {
        assert_eq!(fraction(&ratio(4, 3)), "4/3");
        assert_eq!(fraction(&ratio(6, 3)), "2");
        assert_eq!(decimal(&ratio(4, 3), 6), "1.333333");
        assert_eq!(decimal(&ratio(2, 3), 6), "0.666667");
        assert_eq!(decimal(&ratio(1, 2), 0), "1");
        assert_eq!(decimal(&-ratio(1, 8), 2), "-0.13");
        assert_eq!(decimal(&-ratio(1, 1000), 2), "0.00");
        assert_eq!(parse_fraction("4/3"), Some(ratio(4, 3)));
        assert_eq!(parse_fraction("-2"), Some(-ratio(2, 1)));
        assert_eq!(parse_fraction("1/0"), None);
    }

    #[test]
    fn exact_serializes_both_forms() {
        let text = serde_json::to_string(&Exact::from_ratio(1, 2)).unwrap();
        assert_eq!(text, r#"{"exact":"1/2","decimal":"0.500000"}"#);
        let back: Exact = serde_json::from_str(&text).unwrap();
        assert_eq!(back, Exact::from_ratio(1, 2));
    }

    #[test]
    fn report_bytes_are_stable() {
        let mut r = Report::new("gear-test/1", &["problem", "gamma"]).meta("seed", 7);
        r.push(vec!["p1".into(), ratio(4, 3).into()]);
        r.push(vec!["p2".into(), None.into()]);
        let table = r.to_string(ReportFormat::Table);
        assert_eq!(table, r.clone().to_string(ReportFormat::Table));
        assert!(table.starts_with("# schema=gear-test/1\n# seed=7\nproblem"));
        assert!(table.contains("1.333333 (4/3)"));
        let lines = r.to_string(ReportFormat::Lines);
        assert!(lines.contains(r#"{"gamma":{"decimal":"1.333333","exact":"4/3"},"problem":"p1"}"#));
        assert!(lines.contains(r#""gamma":"undefined""#));
    }

    #[test]
    fn macro_mean_is_unweighted() {
        assert_eq!(
            macro_mean(&[ratio(1, 1), ratio(0, 1), ratio(1, 2)]),
            Some(ratio(1, 2))
        );
        assert_eq!(macro_mean(&[]), None);
    }
}
