//! Source-level values: the literals that appear as call arguments in seed
//! programs and in knowledge-base defaults, plus helpers for scanning
//! Python-like source text (string-aware bracket matching and comma splitting).

use std::fmt;

use serde::{Deserialize, Serialize};

/// A scalar literal as written in target-language source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Literal {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(i) => Some(*i as f64),
            Literal::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Literal::Int(_) | Literal::Float(_))
    }

    /// Renders the literal as target-language (Python) source.
    pub fn render(&self) -> String {
        match self {
            Literal::None => "None".to_string(),
            Literal::Bool(true) => "True".to_string(),
            Literal::Bool(false) => "False".to_string(),
            Literal::Int(i) => i.to_string(),
            Literal::Float(f) => render_float(*f),
            Literal::Str(s) => quote_str(s),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn render_float(f: f64) -> String {
    if !f.is_finite() {
        return if f.is_nan() {
            "float('nan')".to_string()
        } else if f > 0.0 {
            "float('inf')".to_string()
        } else {
            "float('-inf')".to_string()
        };
    }
    // Debug formatting is the shortest round-tripping form and always carries
    // a '.' or an exponent, so the text re-parses as a float.
    format!("{f:?}")
}

fn quote_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// One call argument: either a literal the engine understands, or an opaque
/// expression carried verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgValue {
    Lit(Literal),
    Expr(String),
}

impl ArgValue {
    /// Classifies argument source text.
    pub fn parse(text: &str) -> ArgValue {
        let t = text.trim();
        match parse_literal(t) {
            Some(lit) => ArgValue::Lit(lit),
            None => ArgValue::Expr(t.to_string()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            ArgValue::Lit(l) => l.render(),
            ArgValue::Expr(e) => e.clone(),
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            ArgValue::Lit(l) => Some(l),
            ArgValue::Expr(_) => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses a Python scalar literal: `None`, `True`, `False`, ints, floats and
/// single- or double-quoted strings without prefixes.
pub fn parse_literal(text: &str) -> Option<Literal> {
    let t = text.trim();
    match t {
        "" => return None,
        "None" => return Some(Literal::None),
        "True" => return Some(Literal::Bool(true)),
        "False" => return Some(Literal::Bool(false)),
        _ => {}
    }
    let first = t.chars().next()?;
    if first == '\'' || first == '"' {
        return parse_quoted(t);
    }
    parse_number(t)
}

fn parse_number(t: &str) -> Option<Literal> {
    let body = t.strip_prefix(['-', '+']).unwrap_or(t);
    if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+' | '_')) {
        return None;
    }
    if !body.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None;
    }
    let cleaned: String = t.chars().filter(|c| *c != '_').collect();
    if body.contains(['.', 'e', 'E']) {
        cleaned.parse::<f64>().ok().filter(|f| f.is_finite()).map(Literal::Float)
    } else {
        cleaned.parse::<i64>().ok().map(Literal::Int)
    }
}

fn parse_quoted(t: &str) -> Option<Literal> {
    let mut chars = t.chars();
    let quote = chars.next()?;
    let mut out = String::new();
    let mut escaped = false;
    let mut closed = false;
    for c in chars.by_ref() {
        if escaped {
            out.push(match c {
                'n' => '\n',
                't' => '\t',
                'r' => '\r',
                other => other,
            });
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == quote {
            closed = true;
            break;
        } else {
            out.push(c);
        }
    }
    if closed && chars.next().is_none() {
        Some(Literal::Str(out))
    } else {
        None
    }
}

/// Index of the `#` that starts a trailing comment, ignoring `#` inside
/// string literals.
pub fn comment_start(line: &str) -> Option<usize> {
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for (i, b) in line.bytes().enumerate() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
        } else if b == b'\'' || b == b'"' {
            quote = Some(b);
        } else if b == b'#' {
            return Some(i);
        }
    }
    None
}

/// Given the index of an opening bracket, returns the index of its matching
/// closing bracket, skipping over string literals.
pub fn matching_close(text: &str, open: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'\'' | b'"' => quote = Some(b),
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i);
                }
            }
            b'#' => return None,
            _ => {}
        }
    }
    None
}

/// Splits an argument list on top-level commas. Empty trailing segments
/// (from a trailing comma) are dropped.
pub fn split_top_level(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    let mut start = 0;
    for (i, b) in text.bytes().enumerate() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'\'' | b'"' => quote = Some(b),
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b',' if depth == 0 => {
                parts.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&text[start..]);
    parts.retain(|p| !p.trim().is_empty());
    parts
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_parse() {
        assert_eq!(parse_literal("None"), Some(Literal::None));
        assert_eq!(parse_literal("True"), Some(Literal::Bool(true)));
        assert_eq!(parse_literal("-3"), Some(Literal::Int(-3)));
        assert_eq!(parse_literal("0.5"), Some(Literal::Float(0.5)));
        assert_eq!(parse_literal("1e-3"), Some(Literal::Float(1e-3)));
        assert_eq!(parse_literal(".5"), Some(Literal::Float(0.5)));
        assert_eq!(parse_literal("'relu'"), Some(Literal::Str("relu".into())));
        assert_eq!(parse_literal("\"it's\""), Some(Literal::Str("it's".into())));
        assert_eq!(parse_literal("x"), None);
        assert_eq!(parse_literal("(3, 3)"), None);
        assert_eq!(parse_literal("'a' + 'b'"), None);
        assert_eq!(parse_literal("e5"), None);
    }

    #[test]
    fn floats_render_as_floats() {
        assert_eq!(Literal::Float(1.0).render(), "1.0");
        assert_eq!(Literal::Float(-0.2044).render(), "-0.2044");
        assert_eq!(parse_literal(&Literal::Float(1e21).render()), Some(Literal::Float(1e21)));
    }

    #[test]
    fn string_escapes_round_trip() {
        let s = Literal::Str("a'b\\c\n".into());
        assert_eq!(parse_literal(&s.render()), Some(s));
    }

    #[test]
    fn splitting_respects_nesting_and_strings() {
        assert_eq!(
            split_top_level("32, (3, 3), name='a,b', k=[1, 2],"),
            vec!["32", " (3, 3)", " name='a,b'", " k=[1, 2]"]
        );
        assert!(split_top_level("").is_empty());
    }

    #[test]
    fn bracket_matching() {
        let s = "f(a, g(b), ')')(x)";
        assert_eq!(matching_close(s, 1), Some(14));
        assert_eq!(matching_close("f(a", 1), None);
        assert_eq!(comment_start("x = 1  # note"), Some(7));
        assert_eq!(comment_start("x = '#'"), None);
    }
}
