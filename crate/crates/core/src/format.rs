//! Fixed numeric formatting for CSV and JSON output.

use serde::Serialize;
use serde_json::Value;

pub const VOLTAGE_DIGITS: usize = 6;
pub const TIME_DIGITS: usize = 9;
pub const PROBABILITY_DIGITS: usize = 6;

/// Formats `x` with `digits` significant digits in plain decimal notation,
/// trimming trailing zeros.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1) as i32;
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = digits - 1 - magnitude;
    let s = if decimals >= 0 {
        format!("{:.*}", decimals as usize, x)
    } else {
        let scale = 10f64.powi(-decimals);
        format!("{:.0}", (x / scale).round() * scale)
    };
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

pub fn fmt_time(t: f64) -> String {
    fmt_sig(t, TIME_DIGITS)
}

pub fn fmt_voltage(v: f64) -> String {
    fmt_sig(v, VOLTAGE_DIGITS)
}

pub fn fmt_prob(p: f64) -> String {
    fmt_sig(p, PROBABILITY_DIGITS)
}

/// A CSV table held as already-formatted cells so that the CSV and JSON
/// renderings carry identical values.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(String),
    Text(String),
}

impl Cell {
    fn as_str(&self) -> &str {
        match self {
            Cell::Num(s) | Cell::Text(s) => s,
        }
    }
}

impl Table {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(header: I) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<&str> = row.iter().map(Cell::as_str).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// JSON array with one object per row. Numeric cells become JSON numbers
    /// parsed back from their formatted text.
    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let map = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(k, cell)| {
                        let v = match cell {
                            Cell::Num(s) => s
                                .parse::<f64>()
                                .ok()
                                .and_then(|x| serde_json::Number::from_f64(x).map(Value::Number))
                                .unwrap_or_else(|| Value::String(s.clone())),
                            Cell::Text(s) => match s.as_str() {
                                "true" => Value::Bool(true),
                                "false" => Value::Bool(false),
                                _ => Value::String(s.clone()),
                            },
                        };
                        (k.clone(), v)
                    })
                    .collect::<serde_json::Map<_, _>>();
                Value::Object(map)
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("table serializes");
        s.push('\n');
        s
    }
}

pub fn num(s: String) -> Cell {
    Cell::Num(s)
}

pub fn text<S: ToString>(s: S) -> Cell {
    Cell::Text(s.to_string())
}
