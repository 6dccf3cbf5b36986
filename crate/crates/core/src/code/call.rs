//! Call expressions: the unit the mutation operators rewrite.

use std::fmt;

use crate::kb::ApiSpec;
use crate::literal::{is_identifier, matching_close, split_top_level, ArgValue};

#[derive(Debug, Clone, PartialEq)]
pub struct CallExpression {
    pub callee: String,
    pub positional: Vec<ArgValue>,
    pub keyword: Vec<(String, ArgValue)>,
}

impl CallExpression {
    pub fn new(callee: impl Into<String>) -> Self {
        CallExpression { callee: callee.into(), positional: Vec::new(), keyword: Vec::new() }
    }

    /// Parses text that is exactly one call, `callee(args)`.
    pub fn parse(text: &str) -> Option<CallExpression> {
        let t = text.trim();
        let open = t.find('(')?;
        let callee = t[..open].trim();
        if !is_dotted_name(callee) || matching_close(t, open)? != t.len() - 1 {
            return None;
        }
        Self::from_parts(callee, &t[open + 1..t.len() - 1])
    }

    fn from_parts(callee: &str, args: &str) -> Option<CallExpression> {
        let mut call = CallExpression::new(callee);
        for part in split_top_level(args) {
            match split_keyword(part) {
                Some((name, value)) => call.keyword.push((name.to_string(), ArgValue::parse(value))),
                None if call.keyword.is_empty() => call.positional.push(ArgValue::parse(part)),
                // Positional after keyword is not valid source.
                None => return None,
            }
        }
        Some(call)
    }

    pub fn render(&self) -> String {
        let args: Vec<String> = self
            .positional
            .iter()
            .map(ArgValue::render)
            .chain(self.keyword.iter().map(|(k, v)| format!("{k}={}", v.render())))
            .collect();
        format!("{}({})", self.callee, args.join(", "))
    }

    pub fn keyword_arg(&self, name: &str) -> Option<&ArgValue> {
        self.keyword.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    /// The argument bound to `param` of `api`, by position or by keyword.
    pub fn argument(&self, api: &ApiSpec, param: &str) -> Option<&ArgValue> {
        if let Some(v) = self.keyword_arg(param) {
            return Some(v);
        }
        api.parameter_index(param).and_then(|i| self.positional.get(i))
    }

    /// Binds `param` to `value`, replacing a positional or keyword argument
    /// in place or appending a keyword argument.
    pub fn set_argument(&mut self, api: &ApiSpec, param: &str, value: ArgValue) {
        if let Some(slot) = self.keyword.iter_mut().find(|(k, _)| k == param) {
            slot.1 = value;
            return;
        }
        if let Some(i) = api.parameter_index(param).filter(|i| *i < self.positional.len()) {
            self.positional[i] = value;
            return;
        }
        self.keyword.push((param.to_string(), value));
    }

    /// All arguments as (parameter name, value) under `api`'s signature.
    /// Positional arguments beyond the documented parameters are unnamed.
    pub fn bound_arguments<'a>(&'a self, api: &'a ApiSpec) -> Vec<(Option<&'a str>, &'a ArgValue)> {
        let pos = self
            .positional
            .iter()
            .enumerate()
            .map(|(i, v)| (api.parameters.get(i).map(|p| p.name.as_str()), v));
        pos.chain(self.keyword.iter().map(|(k, v)| (Some(k.as_str()), v))).collect()
    }
}

impl fmt::Display for CallExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn split_keyword(part: &str) -> Option<(&str, &str)> {
    let eq = part.find('=')?;
    let (name, rest) = (part[..eq].trim(), &part[eq + 1..]);
    if rest.starts_with('=') || !is_identifier(name) {
        return None;
    }
    Some((name, rest.trim()))
}

pub fn is_dotted_name(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(is_identifier)
}

/// A call found inside a line of source, with byte offsets of the callee
/// start and one past the closing parenthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct CallSite {
    pub start: usize,
    pub end: usize,
    pub call: CallExpression,
}

/// Every well-formed call in `text`, outer calls before the calls nested in
/// their arguments, ordered by start offset.
pub fn find_calls(text: &str) -> Vec<CallSite> {
    let bytes = text.as_bytes();
    let limit = crate::literal::comment_start(text).unwrap_or(text.len());
    let mut out = Vec::new();
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    let mut i = 0;
    while i < limit {
        let b = bytes[i];
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            i += 1;
            continue;
        }
        if b == b'\'' || b == b'"' {
            quote = Some(b);
            i += 1;
            continue;
        }
        let starts_name = (b.is_ascii_alphabetic() || b == b'_')
            && (i == 0 || !(bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_' || bytes[i - 1] == b'.'));
        if !starts_name {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < limit && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'.') {
            j += 1;
        }
        let name = text[i..j].trim_end_matches('.');
        if j < limit && bytes[j] == b'(' && is_dotted_name(name) && !is_keyword(name) {
            if let Some(close) = matching_close(text, j) {
                if let Some(call) = CallExpression::from_parts(name, &text[j + 1..close]) {
                    out.push(CallSite { start: i, end: close + 1, call });
                }
            }
        }
        i = j.max(i + 1);
    }
    out
}

fn is_keyword(name: &str) -> bool {
    matches!(
        name,
        "if" | "elif" | "while" | "for" | "return" | "and" | "or" | "not" | "in" | "is" | "lambda" | "print" | "assert" | "with" | "yield" | "def" | "class"
    )
}
