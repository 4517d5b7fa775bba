//! Lenient JSON extraction for model replies: strips code fences and
//! scans for the first balanced JSON array or object.

/// Parse the first JSON array in `text`, tolerating code fences and
/// surrounding prose.
pub(crate) fn extract_array(text: &str) -> Option<serde_json::Value> {
    extract_value(text, '[', ']')
}

fn extract_value(text: &str, open: char, close: char) -> Option<serde_json::Value> {
    let cleaned = strip_fences(text);
    if let Ok(v) = serde_json::from_str(cleaned.trim()) {
        return match (&v, open) {
            (serde_json::Value::Array(_), '[') | (serde_json::Value::Object(_), '{') => Some(v),
            _ => scan_balanced(&cleaned, open, close),
        };
    }
    scan_balanced(&cleaned, open, close)
}

fn strip_fences(text: &str) -> String {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") {
        return trimmed.to_string();
    }
    trimmed
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn scan_balanced(text: &str, open: char, close: char) -> Option<serde_json::Value> {
    let start = text.find(open)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            c if c == open => depth += 1,
            c if c == close => {
                depth -= 1;
                if depth == 0 {
                    let candidate = &text[start..start + i + c.len_utf8()];
                    return serde_json::from_str(candidate).ok();
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_array_parses() {
        let v = extract_array(r#"[1, 2, 3]"#).unwrap();
        assert_eq!(v, serde_json::json!([1, 2, 3]));
    }

    #[test]
    fn fenced_array_with_prose_parses() {
        let text = "Here you go:\n```json\n[{\"q\": \"a [nested] one\"}]\n```\nThanks!";
        let v = extract_array(text).unwrap();
        assert_eq!(v[0]["q"], "a [nested] one");
    }

    #[test]
    fn array_embedded_in_prose_parses() {
        let v = extract_array("the plan is [\"City\", \"State\"] as discussed").unwrap();
        assert_eq!(v, serde_json::json!(["City", "State"]));
    }

    #[test]
    fn brackets_inside_strings_do_not_confuse_the_scan() {
        let v = extract_array(r#"x ["a]b", "c"] y"#).unwrap();
        assert_eq!(v, serde_json::json!(["a]b", "c"]));
    }

    #[test]
    fn garbage_yields_none() {
        assert!(extract_array("no json here").is_none());
        assert!(extract_array("[1, 2").is_none());
    }
}
