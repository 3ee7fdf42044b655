use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::template::Scale;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum InvalidReason {
    NoNumber,
    /// A JSON answer with more than one numeric value.
    Ambiguous,
    NonFinite,
    OutOfRange { value: f64 },
    NotInteger { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedResponse {
    Valid(f64),
    Invalid(InvalidReason),
}

impl ParsedResponse {
    pub fn value(self) -> Option<f64> {
        match self {
            ParsedResponse::Valid(v) => Some(v),
            ParsedResponse::Invalid(_) => None,
        }
    }
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex"))
}

fn numeric_leaves(value: &Value, out: &mut Vec<f64>) {
    match value {
        Value::Number(n) => out.push(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(items) => items.iter().for_each(|v| numeric_leaves(v, out)),
        Value::Object(map) => map.values().for_each(|v| numeric_leaves(v, out)),
        _ => {}
    }
}

/// The JSON object in `text`: either the whole trimmed text, or the span from
/// the first `{` to the last `}` (answers wrapped in prose or code fences).
fn json_object(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    let start = trimmed.find('{')?;
    let end = trimmed.rfind('}')?;
    if end <= start {
        return None;
    }
    match serde_json::from_str::<Value>(&trimmed[start..=end]) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// First number not glued to a word, e.g. `7` in "I'd say 7." but nothing in "v2".
fn first_standalone_number(text: &str) -> Option<f64> {
    for m in number_regex().find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let glued_before = before.is_some_and(|c| is_word_char(c) || c == '.');
        let glued_after = after.is_some_and(is_word_char);
        if glued_before || glued_after {
            continue;
        }
        if let Ok(v) = m.as_str().parse::<f64>() {
            return Some(v);
        }
    }
    None
}

/// Extracts a numeric answer and checks it against the scale.
///
/// A JSON object must contain exactly one numeric value. Otherwise the first
/// standalone numeric token is used. The value must be finite, inside
/// `[min, max]` and, for integer scales, whole.
pub fn parse_response(text: &str, scale: &Scale) -> ParsedResponse {
    let value = match json_object(text) {
        Some(obj) => {
            let mut leaves = Vec::new();
            numeric_leaves(&obj, &mut leaves);
            match leaves.len() {
                0 => return ParsedResponse::Invalid(InvalidReason::NoNumber),
                1 => leaves[0],
                _ => return ParsedResponse::Invalid(InvalidReason::Ambiguous),
            }
        }
        None => match first_standalone_number(text) {
            Some(v) => v,
            None => return ParsedResponse::Invalid(InvalidReason::NoNumber),
        },
    };
    if !value.is_finite() {
        return ParsedResponse::Invalid(InvalidReason::NonFinite);
    }
    if value < scale.min || value > scale.max {
        return ParsedResponse::Invalid(InvalidReason::OutOfRange { value });
    }
    if scale.integer_valued && value.fract() != 0.0 {
        return ParsedResponse::Invalid(InvalidReason::NotInteger { value });
    }
    ParsedResponse::Valid(value)
}

/// [`parse_response`] on raw bytes; invalid UTF-8 is replaced, never rejected.
pub fn parse_response_bytes(bytes: &[u8], scale: &Scale) -> ParsedResponse {
    parse_response(&String::from_utf8_lossy(bytes), scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LIKERT: Scale = Scale { min: 1.0, max: 5.0, integer_valued: true };
    const CONTINUOUS: Scale = Scale { min: 0.0, max: 100.0, integer_valued: false };

    #[test]
    fn decision_table() {
        let cases: &[(&str, Scale, ParsedResponse)] = &[
            (r#"{"answer": 3}"#, LIKERT, ParsedResponse::Valid(3.0)),
            ("I would say 7", LIKERT, ParsedResponse::Invalid(InvalidReason::OutOfRange { value: 7.0 })),
            (r#"{"a":2,"b":3}"#, LIKERT, ParsedResponse::Invalid(InvalidReason::Ambiguous)),
            (r#"{"answer": "three"}"#, LIKERT, ParsedResponse::Invalid(InvalidReason::NoNumber)),
            ("```json\n{\"answer\": 4}\n```", LIKERT, ParsedResponse::Valid(4.0)),
            (r#"Sure! {"rating": {"value": 2}}"#, LIKERT, ParsedResponse::Valid(2.0)),
            ("I'd say 4.", LIKERT, ParsedResponse::Valid(4.0)),
            ("version v2 then 3", LIKERT, ParsedResponse::Valid(3.0)),
            ("3.5", LIKERT, ParsedResponse::Invalid(InvalidReason::NotInteger { value: 3.5 })),
            ("3.5", CONTINUOUS, ParsedResponse::Valid(3.5)),
            ("-2", CONTINUOUS, ParsedResponse::Invalid(InvalidReason::OutOfRange { value: -2.0 })),
            ("1e400", CONTINUOUS, ParsedResponse::Invalid(InvalidReason::NonFinite)),
            ("no idea", LIKERT, ParsedResponse::Invalid(InvalidReason::NoNumber)),
            ("", LIKERT, ParsedResponse::Invalid(InvalidReason::NoNumber)),
            ("5", LIKERT, ParsedResponse::Valid(5.0)),
            ("1", LIKERT, ParsedResponse::Valid(1.0)),
        ];
        for (text, scale, expected) in cases {
            assert_eq!(parse_response(text, scale), *expected, "{text:?}");
        }
    }

    proptest! {
        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_response_bytes(&bytes, &LIKERT);
        }

        #[test]
        fn valid_values_respect_scale(text in ".{0,64}") {
            if let ParsedResponse::Valid(v) = parse_response(&text, &LIKERT) {
                prop_assert!((1.0..=5.0).contains(&v) && v.fract() == 0.0);
            }
        }

        #[test]
        fn json_answers_round_trip(v in 1i32..=5, key in "[a-z]{1,8}") {
            let text = format!(r#"{{"{key}": {v}}}"#);
            prop_assert_eq!(parse_response(&text, &LIKERT), ParsedResponse::Valid(v as f64));
        }
    }
}
