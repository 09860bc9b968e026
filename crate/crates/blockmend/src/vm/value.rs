//! Scalar runtime values and their coercions.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A variable or operand value. The block language mixes numbers, text and
/// booleans freely; coercion rules are fixed here so every run agrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn from_json(v: &Value) -> Option<Scalar> {
        match v {
            Value::Number(n) => n.as_f64().map(Scalar::Number),
            Value::String(s) => Some(Scalar::Text(s.clone())),
            Value::Bool(b) => Some(Scalar::Bool(*b)),
            _ => None,
        }
    }

    /// Numeric view: text parses as a float or counts as 0, booleans are
    /// 1/0, non-finite numbers collapse to 0.
    pub fn as_number(&self) -> f64 {
        let n = match self {
            Scalar::Number(n) => *n,
            Scalar::Text(s) => s.trim().parse::<f64>().unwrap_or(0.0),
            Scalar::Bool(b) => {
                if *b {
                    1.0
                } else {
                    0.0
                }
            }
        };
        if n.is_finite() {
            n
        } else {
            0.0
        }
    }

    pub fn as_text(&self) -> String {
        match self {
            Scalar::Number(n) => format_number(*n),
            Scalar::Text(s) => s.clone(),
            Scalar::Bool(b) => b.to_string(),
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Scalar::Bool(b) => *b,
            Scalar::Number(n) => *n != 0.0,
            Scalar::Text(s) => !s.is_empty() && s != "false" && s != "0",
        }
    }

    fn numeric_view(&self) -> Option<f64> {
        match self {
            Scalar::Number(n) => Some(*n),
            Scalar::Text(s) => s.trim().parse::<f64>().ok(),
            Scalar::Bool(_) => None,
        }
    }

    /// Loose equality: numeric when both sides read as numbers, otherwise
    /// case-insensitive text comparison.
    pub fn loose_eq(&self, other: &Scalar) -> bool {
        match (self.numeric_view(), other.numeric_view()) {
            (Some(a), Some(b)) => a == b,
            _ => self.as_text().eq_ignore_ascii_case(&other.as_text()),
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Scalar::Number(n) => {
                serde_json::Number::from_f64(*n).map(Value::Number).unwrap_or(Value::from(0))
            }
            Scalar::Text(s) => Value::String(s.clone()),
            Scalar::Bool(b) => Value::Bool(*b),
        }
    }
}

/// Integer-valued floats print without a trailing `.0`, matching how block
/// environments display numbers.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_coerces_to_number() {
        assert_eq!(Scalar::Text(" 12.5 ".into()).as_number(), 12.5);
        assert_eq!(Scalar::Text("abc".into()).as_number(), 0.0);
        assert_eq!(Scalar::Bool(true).as_number(), 1.0);
    }

    #[test]
    fn loose_equality() {
        assert!(Scalar::Number(5.0).loose_eq(&Scalar::Text("5".into())));
        assert!(Scalar::Text("Hello".into()).loose_eq(&Scalar::Text("hello".into())));
        assert!(!Scalar::Number(5.0).loose_eq(&Scalar::Number(6.0)));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(50.0), "50");
        assert_eq!(format_number(2.5), "2.5");
    }
}
