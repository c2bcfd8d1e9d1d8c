//! `key=value` metadata files.
//!
//! Keys are written in sorted order, one pair per line, so equal metadata
//! always serializes to identical bytes.

use std::collections::BTreeMap;

pub type Meta = BTreeMap<String, String>;

pub fn render(meta: &Meta) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key is an error.
pub fn parse_kv(text: &str) -> Result<Meta, String> {
    let mut out = Meta::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("line {}: duplicate key {k}", n + 1));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_sorted() {
        let mut m = Meta::new();
        m.insert("mode".into(), "oracle".into());
        m.insert("budget".into(), "10".into());
        let text = render(&m);
        assert_eq!(text, "budget=10\nmode=oracle\n");
        assert_eq!(parse_kv(&text).unwrap(), m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("a=1\na=2\n").is_err());
        assert_eq!(parse_kv("# c\n\na=b=c\n").unwrap()["a"], "b=c");
    }
}
