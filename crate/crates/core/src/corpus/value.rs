use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Text,
    Integer,
    Decimal,
    Date,
}

impl ColumnKind {
    pub(crate) fn sql_type(self) -> &'static str {
        match self {
            ColumnKind::Text | ColumnKind::Date => "TEXT",
            ColumnKind::Integer => "INTEGER",
            ColumnKind::Decimal => "REAL",
        }
    }

    /// Parses one CSV cell. Empty cells are NULL.
    pub fn parse_cell(self, raw: &str) -> Result<Value, String> {
        if raw.is_empty() {
            return Ok(Value::Null);
        }
        match self {
            ColumnKind::Text => Ok(Value::Text(raw.to_string())),
            ColumnKind::Integer => raw
                .trim()
                .parse::<i64>()
                .map(Value::Integer)
                .map_err(|_| format!("{raw:?} is not an integer")),
            ColumnKind::Decimal => raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(Value::Real)
                .ok_or_else(|| format!("{raw:?} is not a decimal")),
            ColumnKind::Date => {
                if is_iso_date(raw.trim()) {
                    Ok(Value::Text(raw.trim().to_string()))
                } else {
                    Err(format!("{raw:?} is not a YYYY-MM-DD date"))
                }
            }
        }
    }
}

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    if !(digits(0..4) && digits(5..7) && digits(8..10)) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

/// A cell value as stored in the corpus or returned by a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    /// Text form used for value lookup and CSV output.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Integer(i) => i.to_string(),
            Value::Real(f) => f.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    /// Total order used when comparing result multisets.
    pub fn canonical_cmp(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Integer(_) | Value::Real(_) => 1,
                Value::Text(_) => 2,
            }
        }
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) if rank(a) == 1 && rank(b) == 1 => a.as_f64().total_cmp(&b.as_f64()),
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }

    fn as_f64(&self) -> f64 {
        match self {
            Value::Integer(i) => *i as f64,
            Value::Real(f) => *f,
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            other => f.write_str(&other.render()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_parse_by_kind() {
        assert_eq!(ColumnKind::Integer.parse_cell("2021").unwrap(), Value::Integer(2021));
        assert_eq!(ColumnKind::Decimal.parse_cell("0.25").unwrap(), Value::Real(0.25));
        assert_eq!(ColumnKind::Text.parse_cell("").unwrap(), Value::Null);
        assert!(ColumnKind::Integer.parse_cell("20x1").is_err());
        assert!(ColumnKind::Date.parse_cell("2021-13-01").is_err());
        assert!(ColumnKind::Date.parse_cell("2021-03-07").is_ok());
        assert!(ColumnKind::Decimal.parse_cell("inf").is_err());
    }

    #[test]
    fn json_keeps_integer_and_real_apart() {
        let vals = vec![
            Value::Integer(3),
            Value::Real(3.0),
            Value::Text("x".into()),
            Value::Null,
        ];
        let json = serde_json::to_string(&vals).unwrap();
        assert_eq!(json, r#"[3,3.0,"x",null]"#);
        let back: Vec<Value> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vals);
    }
}
