//! Canonical JSON: object keys sorted bytewise, no insignificant whitespace,
//! integers printed as integers and reals in a fixed, round-trippable format.

use serde::Serialize;
use serde_json::Value;

/// How floating point numbers are printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RealFormat {
    /// Shortest representation that parses back to the same `f64`.
    #[default]
    Shortest,
    /// Scientific notation with exactly 17 significant digits.
    Significant17,
}

pub fn to_canonical_string<T: Serialize>(value: &T, format: RealFormat) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &value, format);
    Ok(out)
}

/// One canonical record followed by a LF terminator.
pub fn to_canonical_line<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut line = to_canonical_string(value, RealFormat::Shortest)?;
    line.push('\n');
    Ok(line)
}

pub fn write_value(out: &mut String, value: &Value, format: RealFormat) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_f64(), n.is_f64()) {
            (Some(x), true) => write_real(out, x, format),
            _ => out.push_str(&n.to_string()),
        },
        Value::String(s) => write_str(out, s),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item, format);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut entries: Vec<_> = map.iter().collect();
            entries.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
            out.push('{');
            for (i, (k, v)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_str(out, k);
                out.push(':');
                write_value(out, v, format);
            }
            out.push('}');
        }
    }
}

fn write_str(out: &mut String, s: &str) {
    // Serializing a &str cannot fail.
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}

fn write_real(out: &mut String, x: f64, format: RealFormat) {
    match format {
        RealFormat::Shortest => {
            let n = serde_json::Number::from_f64(x).expect("finite real");
            out.push_str(&n.to_string());
        }
        RealFormat::Significant17 => out.push_str(&format!("{x:.16e}")),
    }
}
