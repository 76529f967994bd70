use std::borrow::Cow;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Storage type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Int64,
    String,
    Date,
    Float,
    Bool,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnKind::Int64 => "int64",
            ColumnKind::String => "string",
            ColumnKind::Date => "date",
            ColumnKind::Float => "float",
            ColumnKind::Bool => "bool",
        };
        f.write_str(s)
    }
}

/// A single cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Bool(bool),
    Date(NaiveDate),
    Text(String),
}

impl Value {
    /// Parses a CSV field. Empty fields are null for nullable columns and the
    /// empty string for non-nullable text columns.
    pub fn parse(kind: ColumnKind, nullable: bool, raw: &str) -> Result<Value, String> {
        if raw.is_empty() {
            if nullable {
                return Ok(Value::Null);
            }
            if kind == ColumnKind::String {
                return Ok(Value::Text(String::new()));
            }
            return Err(format!("empty value in non-nullable {kind} column"));
        }
        match kind {
            ColumnKind::Int64 => raw
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|e| format!("invalid int64 {raw:?}: {e}")),
            ColumnKind::Float => raw
                .parse::<f64>()
                .map(Value::Float)
                .map_err(|e| format!("invalid float {raw:?}: {e}")),
            ColumnKind::Bool => match raw {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                _ => Err(format!("invalid bool {raw:?}")),
            },
            ColumnKind::Date => NaiveDate::parse_from_str(raw, DATE_FORMAT)
                .map(Value::Date)
                .map_err(|e| format!("invalid date {raw:?}: {e}")),
            ColumnKind::String => Ok(Value::Text(raw.to_owned())),
        }
    }

    /// CSV rendering: dates as YYYY-MM-DD, null as the empty field.
    pub fn render(&self) -> Cow<'_, str> {
        match self {
            Value::Null => Cow::Borrowed(""),
            Value::Int(v) => Cow::Owned(v.to_string()),
            Value::Float(v) => Cow::Owned(v.to_string()),
            Value::Bool(v) => Cow::Borrowed(if *v { "true" } else { "false" }),
            Value::Date(d) => Cow::Owned(d.format(DATE_FORMAT).to_string()),
            Value::Text(s) => Cow::Borrowed(s.as_str()),
        }
    }

    pub fn matches_kind(&self, kind: ColumnKind, nullable: bool) -> bool {
        matches!(
            (self, kind),
            (Value::Int(_), ColumnKind::Int64)
                | (Value::Float(_), ColumnKind::Float)
                | (Value::Bool(_), ColumnKind::Bool)
                | (Value::Date(_), ColumnKind::Date)
                | (Value::Text(_), ColumnKind::String)
        ) || (nullable && *self == Value::Null)
    }
}

/// Conversion between a Rust field type and a [`Value`].
pub trait Cell: Sized {
    const KIND: ColumnKind;
    const NULLABLE: bool = false;
    fn to_value(&self) -> Value;
    fn from_value(v: &Value) -> Option<Self>;
}

impl Cell for i64 {
    const KIND: ColumnKind = ColumnKind::Int64;
    fn to_value(&self) -> Value {
        Value::Int(*self)
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl Cell for f64 {
    const KIND: ColumnKind = ColumnKind::Float;
    fn to_value(&self) -> Value {
        Value::Float(*self)
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }
}

impl Cell for bool {
    const KIND: ColumnKind = ColumnKind::Bool;
    fn to_value(&self) -> Value {
        Value::Bool(*self)
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl Cell for String {
    const KIND: ColumnKind = ColumnKind::String;
    fn to_value(&self) -> Value {
        Value::Text(self.clone())
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Text(s) => Some(s.clone()),
            _ => None,
        }
    }
}

impl Cell for NaiveDate {
    const KIND: ColumnKind = ColumnKind::Date;
    fn to_value(&self) -> Value {
        Value::Date(*self)
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Date(d) => Some(*d),
            _ => None,
        }
    }
}

impl<T: Cell> Cell for Option<T> {
    const KIND: ColumnKind = T::KIND;
    const NULLABLE: bool = true;
    fn to_value(&self) -> Value {
        match self {
            Some(v) => v.to_value(),
            None => Value::Null,
        }
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Null => Some(None),
            other => T::from_value(other).map(Some),
        }
    }
}
