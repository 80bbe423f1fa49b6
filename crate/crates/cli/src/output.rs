use k3h::invariants::fmt17;
use serde_json::Value;
use std::io::Write;

/// Serializes with every non-integer number at 17 significant digits.
pub fn to_json17(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, &mut out);
    out
}

/// Writes one JSON line to stdout. A closed pipe (e.g. `| head`) is not an error.
pub fn print_json(v: &Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", to_json17(v)).and_then(|_| out.flush());
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Number(n) if n.is_f64() => match n.as_f64() {
            Some(x) if x.is_finite() => out.push_str(&fmt17(x)),
            _ => out.push_str("null"),
        },
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(item, out);
            }
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn reals_get_seventeen_digits() {
        let s = to_json17(&json!({"a": 0.1, "b": 3, "c": [1.5, "x"], "d": null}));
        assert_eq!(s, r#"{"a":1.0000000000000001e-1,"b":3,"c":[1.5000000000000000e0,"x"],"d":null}"#);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }
}
