use serde_json::Value;

/// Canonical text for one case result.
///
/// Numbers use their shortest round-trip form, a top-level string is emitted
/// verbatim, nested strings are JSON-quoted, and map keys are sorted, so equal
/// values always render to equal bytes.
pub fn render_value(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => {
            let mut out = String::new();
            render_nested(other, &mut out);
            out
        }
    }
}

fn render_nested(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => out.push_str(&n.to_string()),
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                render_nested(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                render_nested(&map[key], out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn scalars() {
        assert_eq!(render_value(&json!(12)), "12");
        assert_eq!(render_value(&json!(-3)), "-3");
        assert_eq!(render_value(&json!(0.1)), "0.1");
        assert_eq!(render_value(&json!(2.5e-8)), "2.5e-8");
        assert_eq!(render_value(&json!(1.0)), "1.0");
        assert_eq!(render_value(&json!("hello world")), "hello world");
        assert_eq!(render_value(&json!(true)), "true");
        assert_eq!(render_value(&Value::Null), "null");
    }

    #[test]
    fn sequences_and_maps() {
        assert_eq!(render_value(&json!([1, 2])), "[1, 2]");
        assert_eq!(render_value(&json!([[1], "a"])), "[[1], \"a\"]");
        let a: Value = serde_json::from_str(r#"{"b": 2, "a": [1, {"z": 0, "y": 1}]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": [1, {"y": 1, "z": 0}], "b": 2}"#).unwrap();
        assert_eq!(render_value(&a), render_value(&b));
        assert_eq!(render_value(&a), r#"{"a": [1, {"y": 1, "z": 0}], "b": 2}"#);
    }
}
