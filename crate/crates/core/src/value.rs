//! Scalar values carried by statements, rows and bindings.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ModelError;

/// Fixed-point decimal with two fractional digits, stored as hundredths.
///
/// Currency columns go through this type so that sums over many rows stay
/// exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Decimal(i64);

impl Decimal {
    pub const ZERO: Decimal = Decimal(0);
    pub const SCALE: i64 = 100;

    pub const fn from_cents(cents: i64) -> Self {
        Decimal(cents)
    }

    pub const fn from_int(units: i64) -> Self {
        Decimal(units * Self::SCALE)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    pub fn checked_add(self, other: Decimal) -> Option<Decimal> {
        self.0.checked_add(other.0).map(Decimal)
    }

    pub fn checked_sub(self, other: Decimal) -> Option<Decimal> {
        self.0.checked_sub(other.0).map(Decimal)
    }

    /// Multiplies by an integer quantity (exact).
    pub fn checked_mul_int(self, factor: i64) -> Option<Decimal> {
        self.0.checked_mul(factor).map(Decimal)
    }

    /// Multiplies two decimals, rounding half away from zero back to two digits.
    pub fn checked_mul(self, other: Decimal) -> Option<Decimal> {
        let wide = (self.0 as i128) * (other.0 as i128);
        let scale = Self::SCALE as i128;
        let half = scale / 2;
        let rounded = if wide >= 0 {
            (wide + half) / scale
        } else {
            (wide - half) / scale
        };
        i64::try_from(rounded).ok().map(Decimal)
    }

    pub fn checked_neg(self) -> Option<Decimal> {
        self.0.checked_neg().map(Decimal)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Decimal {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Parse(format!("invalid decimal literal {s:?}"));
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = match digits.split_once('.') {
            Some((i, f)) => (i, f),
            None => (digits, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.len() > 2
        {
            return Err(bad());
        }
        let units: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let mut frac: i64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        if frac_part.len() == 1 {
            frac *= 10;
        }
        let cents = units
            .checked_mul(Self::SCALE)
            .and_then(|c| c.checked_add(frac))
            .ok_or_else(bad)?;
        Ok(Decimal(if neg { -cents } else { cents }))
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(deserializer)?;
        match &raw {
            serde_json::Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            serde_json::Value::Number(n) => n.to_string().parse().map_err(serde::de::Error::custom),
            _ => Err(serde::de::Error::custom("expected decimal string or number")),
        }
    }
}

/// Declared column type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Int,
    Decimal,
    Str,
    Timestamp,
}

/// A scalar SQL value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Null,
    Int(i64),
    Decimal(Decimal),
    Str(String),
    /// Milliseconds since the Unix epoch.
    Timestamp(i64),
}

impl Value {
    pub fn str(s: impl Into<String>) -> Self {
        Value::Str(s.into())
    }

    pub fn dec(s: &str) -> Self {
        Value::Decimal(s.parse().expect("valid decimal literal"))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) | Value::Timestamp(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_decimal(&self) -> Option<Decimal> {
        match self {
            Value::Decimal(d) => Some(*d),
            Value::Int(v) => v.checked_mul(Decimal::SCALE).map(Decimal::from_cents),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) => 1,
            Value::Decimal(_) => 2,
            Value::Str(_) => 3,
            Value::Timestamp(_) => 4,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Int(_) => "int",
            Value::Decimal(_) => "decimal",
            Value::Str(_) => "string",
            Value::Timestamp(_) => "timestamp",
        }
    }

    /// Converts the value to the declared column type where the conversion is
    /// lossless (`Int` widens to `Decimal` and `Timestamp`).
    pub fn coerce(&self, ty: ColumnType) -> Option<Value> {
        match (self, ty) {
            (Value::Null, _) => Some(Value::Null),
            (Value::Int(v), ColumnType::Int) => Some(Value::Int(*v)),
            (Value::Int(_), ColumnType::Decimal) => self.as_decimal().map(Value::Decimal),
            (Value::Int(v), ColumnType::Timestamp) => Some(Value::Timestamp(*v)),
            (Value::Decimal(d), ColumnType::Decimal) => Some(Value::Decimal(*d)),
            (Value::Decimal(d), ColumnType::Int) if d.cents() % Decimal::SCALE == 0 => {
                Some(Value::Int(d.cents() / Decimal::SCALE))
            }
            (Value::Str(s), ColumnType::Str) => Some(Value::Str(s.clone())),
            (Value::Timestamp(t), ColumnType::Timestamp) => Some(Value::Timestamp(*t)),
            _ => None,
        }
    }

    /// SQL equality with numeric widening. `NULL` never compares equal.
    pub fn sql_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => false,
            (Value::Int(_), Value::Decimal(_)) | (Value::Decimal(_), Value::Int(_)) => {
                self.as_decimal() == other.as_decimal()
            }
            (Value::Int(a), Value::Timestamp(b)) | (Value::Timestamp(a), Value::Int(b)) => a == b,
            _ => self == other,
        }
    }

    /// Converts a JSON scalar into a value: integers become `Int`, numbers
    /// with a fraction become `Decimal`, strings become `Str`. Tagged objects
    /// (`{"dec": "1.50"}`, `{"ts": 5}`, `{"int": 1}`, `{"str": "x"}`) select
    /// the type explicitly.
    pub fn from_json(v: &serde_json::Value) -> Result<Value, ModelError> {
        use serde_json::Value as J;
        match v {
            J::Null => Ok(Value::Null),
            J::Bool(b) => Ok(Value::Int(i64::from(*b))),
            J::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else {
                    Ok(Value::Decimal(n.to_string().parse()?))
                }
            }
            J::String(s) => Ok(Value::Str(s.clone())),
            J::Object(map) if map.len() == 1 => {
                let (tag, inner) = map.iter().next().expect("one entry");
                match (tag.as_str(), inner) {
                    ("dec", J::String(s)) => Ok(Value::Decimal(s.parse()?)),
                    ("dec", J::Number(n)) => Ok(Value::Decimal(n.to_string().parse()?)),
                    ("ts", J::Number(n)) => n
                        .as_i64()
                        .map(Value::Timestamp)
                        .ok_or_else(|| ModelError::Parse(format!("bad timestamp {n}"))),
                    ("int", J::Number(n)) => n
                        .as_i64()
                        .map(Value::Int)
                        .ok_or_else(|| ModelError::Parse(format!("bad int {n}"))),
                    ("str", J::String(s)) => Ok(Value::Str(s.clone())),
                    _ => Err(ModelError::Parse(format!("unknown value tag {tag:?}"))),
                }
            }
            other => Err(ModelError::Parse(format!("unsupported JSON value {other}"))),
        }
    }

    /// Inverse of [`Value::from_json`]; decimals and timestamps are tagged so
    /// the round trip is exact.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Int(v) => json!(v),
            Value::Decimal(d) => json!({ "dec": d.to_string() }),
            Value::Str(s) => json!(s),
            Value::Timestamp(t) => json!({ "ts": t }),
        }
    }

    /// Plain JSON rendering for client-facing results (decimals as strings).
    pub fn to_plain_json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Int(v) | Value::Timestamp(v) => json!(v),
            Value::Decimal(d) => json!(d.to_string()),
            Value::Str(s) => json!(s),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order used for primary-key indexes and canonical dumps: values of
/// different types order by type rank first.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Decimal(a), Value::Decimal(b)) => a.cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(v) | Value::Timestamp(v) => write!(f, "{v}"),
            Value::Decimal(d) => write!(f, "{d}"),
            Value::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<Decimal> for Value {
    fn from(d: Decimal) -> Self {
        Value::Decimal(d)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parse_and_display() {
        assert_eq!("25.5".parse::<Decimal>().unwrap(), Decimal::from_cents(2550));
        assert_eq!("-0.05".parse::<Decimal>().unwrap().to_string(), "-0.05");
        assert_eq!("3".parse::<Decimal>().unwrap().to_string(), "3.00");
        assert!("1.234".parse::<Decimal>().is_err());
        assert!("abc".parse::<Decimal>().is_err());
        assert!(".".parse::<Decimal>().is_err());
    }

    #[test]
    fn decimal_sum_is_exact() {
        let a: Decimal = "10.00".parse().unwrap();
        let b: Decimal = "15.50".parse().unwrap();
        assert_eq!(a.checked_add(b).unwrap().to_string(), "25.50");
        // 0.10 summed 1000 times is exactly 100.00
        let tenth: Decimal = "0.10".parse().unwrap();
        let total = (0..1000).fold(Decimal::ZERO, |acc, _| acc.checked_add(tenth).unwrap());
        assert_eq!(total.to_string(), "100.00");
    }

    #[test]
    fn decimal_mul_rounds_half_away() {
        let a: Decimal = "0.05".parse().unwrap();
        let b: Decimal = "0.50".parse().unwrap();
        // 0.025 -> 0.03
        assert_eq!(a.checked_mul(b).unwrap().to_string(), "0.03");
        assert_eq!(a.checked_neg().unwrap().checked_mul(b).unwrap().to_string(), "-0.03");
    }

    #[test]
    fn json_round_trip_keeps_types() {
        for v in [
            Value::Null,
            Value::Int(-4),
            Value::dec("12.34"),
            Value::str("it's"),
            Value::Timestamp(1_700_000_000_000),
        ] {
            assert_eq!(Value::from_json(&v.to_json()).unwrap(), v);
        }
        assert_eq!(Value::from_json(&serde_json::json!(25.5)).unwrap(), Value::dec("25.50"));
    }

    #[test]
    fn sql_equality_widens_and_rejects_null() {
        assert!(Value::Int(3).sql_eq(&Value::dec("3.00")));
        assert!(!Value::Null.sql_eq(&Value::Null));
        assert_eq!(Value::Int(2).coerce(ColumnType::Decimal), Some(Value::dec("2")));
        assert_eq!(Value::str("x").coerce(ColumnType::Int), None);
    }

    #[test]
    fn string_literal_escapes_quotes() {
        assert_eq!(Value::str("it's").to_string(), "'it''s'");
    }
}
