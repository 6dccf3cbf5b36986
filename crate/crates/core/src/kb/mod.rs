//! API knowledge base: per-API metadata files that drive every mutation
//! operator.
//!
//! One YAML document per API. The layout follows the crawled-documentation
//! format: top-level `name`, `definition`, `init`, then `Similarity`
//! (API name to score), `Parameters` (name to `{default, dtype, enum, range,
//! structure, shape}`) and `Constrains` (list of `{Parameter 1, Parameter 2,
//! Constrain}`). `Similarity` and `Parameters` may be written as a mapping or
//! as a list of single-entry mappings.

pub mod constraint;
mod sample;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::Value;
use thiserror::Error;

use crate::literal::{parse_literal, ArgValue, Literal};

pub use constraint::{EvalError, Predicate};
pub use sample::{sample_illegal_boundary_value, sample_legal_value, NotSampleable, BOUNDARY_PROBE};

const NO_MENTION: &str = "No mention";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{}{}: {rule}", file.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Schema { file: PathBuf, line: Option<usize>, rule: String },
    #[error("duplicate API `{name}` defined in {} and {}", first.display(), second.display())]
    Conflict { name: String, first: PathBuf, second: PathBuf },
    #[error("reading {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dtype {
    Int,
    Float,
    Boolean,
    String,
    Enum,
    TensorShape,
}

impl Dtype {
    /// Accepts library-prefixed spellings such as `tf.string` or `torch.int64`.
    pub fn parse(raw: &str) -> Option<Dtype> {
        let lower = raw.trim().to_ascii_lowercase();
        let base = lower.rsplit('.').next().unwrap_or(&lower);
        Some(match base {
            "int" | "int8" | "int16" | "int32" | "int64" | "integer" | "long" | "uint8" => Dtype::Int,
            "float" | "float16" | "float32" | "float64" | "double" | "half" | "number" => Dtype::Float,
            "bool" | "boolean" => Dtype::Boolean,
            "str" | "string" => Dtype::String,
            "enum" => Dtype::Enum,
            "tensor-shape" | "tensorshape" | "shape" | "tensor_shape" => Dtype::TensorShape,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Int => "int",
            Dtype::Float => "float",
            Dtype::Boolean => "boolean",
            Dtype::String => "string",
            Dtype::Enum => "enum",
            Dtype::TensorShape => "tensor-shape",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Scalar,
    List,
    Tuple,
    Ndarray,
    Unspecified,
}

impl Structure {
    fn parse(raw: &str) -> Option<Structure> {
        let lower = raw.trim().to_ascii_lowercase();
        Some(match lower.as_str() {
            "scalar" | "integer" | "int" | "float" | "boolean" | "bool" | "string" | "str" => Structure::Scalar,
            "list" => Structure::List,
            "tuple" => Structure::Tuple,
            "ndarray" | "tensor" | "array" | "n-dimensional array" => Structure::Ndarray,
            "" | "unspecified" | "no mention" => Structure::Unspecified,
            _ => return None,
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            Structure::Scalar => "scalar",
            Structure::List => "list",
            Structure::Tuple => "tuple",
            Structure::Ndarray => "ndarray",
            Structure::Unspecified => "unspecified",
        }
    }
}

/// Legal interval of a numeric parameter. Missing bounds are unbounded on
/// that side; at least one bound is always present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub low: Option<f64>,
    pub high: Option<f64>,
    pub low_inclusive: bool,
    pub high_inclusive: bool,
}

impl ValueRange {
    pub fn contains(&self, v: f64) -> bool {
        if v.is_nan() {
            return false;
        }
        let above = match self.low {
            Some(lo) if self.low_inclusive => v >= lo,
            Some(lo) => v > lo,
            None => true,
        };
        let below = match self.high {
            Some(hi) if self.high_inclusive => v <= hi,
            Some(hi) => v < hi,
            None => true,
        };
        above && below
    }

    pub fn is_boundary(&self, v: f64) -> bool {
        self.low == Some(v) || self.high == Some(v)
    }

    /// Parses interval notation (`[0, 1]`, `(0, inf)`), comparison chains in
    /// Python style (`x >= 0`, `0 <= rate <= 1`, `> 0`), or `No mention`.
    pub fn parse(text: &str) -> Result<Option<ValueRange>, String> {
        let t = text.trim();
        if t.is_empty() || t.eq_ignore_ascii_case(NO_MENTION) || t.eq_ignore_ascii_case("none") {
            return Ok(None);
        }
        let range = if t.starts_with('[') || t.starts_with('(') {
            parse_interval(t)?
        } else {
            parse_comparison_chain(t)?
        };
        range.validate()?;
        Ok(Some(range.normalized()))
    }

    /// Inclusivity flags of absent bounds are meaningless; pin them to
    /// `false` so equal ranges compare equal.
    pub fn normalized(mut self) -> Self {
        if self.low.is_none() {
            self.low_inclusive = false;
        }
        if self.high.is_none() {
            self.high_inclusive = false;
        }
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.low.is_none() && self.high.is_none() {
            return Err("range must state at least one finite bound or be \"No mention\"".into());
        }
        if let (Some(lo), Some(hi)) = (self.low, self.high) {
            if lo > hi {
                return Err(format!("range low bound {lo} exceeds high bound {hi}"));
            }
        }
        Ok(())
    }

    pub fn to_interval_string(&self) -> String {
        let lo = self.low.map(fmt_bound).unwrap_or_else(|| "-inf".into());
        let hi = self.high.map(fmt_bound).unwrap_or_else(|| "inf".into());
        let open = if self.low.is_some() && self.low_inclusive { '[' } else { '(' };
        let close = if self.high.is_some() && self.high_inclusive { ']' } else { ')' };
        format!("{open}{lo}, {hi}{close}")
    }
}

fn fmt_bound(v: f64) -> String {
    format!("{v}")
}

fn parse_bound(s: &str) -> Result<Option<f64>, String> {
    let s = s.trim();
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "-inf" | "infinity" | "-infinity" | "float('inf')" | "float('-inf')" | "none" | "" => {
            Ok(None)
        }
        _ => s.parse::<f64>().map(Some).map_err(|_| format!("invalid range bound `{s}`")),
    }
}

fn parse_interval(t: &str) -> Result<ValueRange, String> {
    let low_inclusive = t.starts_with('[');
    let high_inclusive = t.ends_with(']');
    if !(t.ends_with(']') || t.ends_with(')')) {
        return Err(format!("unterminated interval `{t}`"));
    }
    let inner = &t[1..t.len() - 1];
    let (lo, hi) = inner.split_once(',').ok_or_else(|| format!("interval `{t}` needs two bounds"))?;
    Ok(ValueRange { low: parse_bound(lo)?, high: parse_bound(hi)?, low_inclusive, high_inclusive })
}

fn parse_comparison_chain(t: &str) -> Result<ValueRange, String> {
    // Tokens alternate operand / operator; a leading operator implies the
    // parameter on its left (`>= 0`).
    let mut tokens: Vec<String> = Vec::new();
    let chars: Vec<char> = t.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if matches!(c, '<' | '>' | '=') {
            let mut op = c.to_string();
            if chars.get(i + 1) == Some(&'=') {
                op.push('=');
                i += 1;
            }
            tokens.push(op);
            i += 1;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '<' | '>' | '=') {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        }
    }
    let is_op = |s: &str| matches!(s, "<" | "<=" | ">" | ">=");
    if tokens.first().map(|s| is_op(s)).unwrap_or(false) {
        tokens.insert(0, "x".into());
    }
    if tokens.len() != 3 && tokens.len() != 5 {
        return Err(format!("unrecognised range expression `{t}`"));
    }
    let mut range = ValueRange { low: None, high: None, low_inclusive: true, high_inclusive: true };
    let mut var_seen = false;
    for k in (1..tokens.len()).step_by(2) {
        let op = tokens[k].as_str();
        if !is_op(op) {
            return Err(format!("unrecognised comparison `{op}` in range `{t}`"));
        }
        let (left, right) = (&tokens[k - 1], &tokens[k + 1]);
        let left_num = parse_bound(left).ok().flatten();
        let right_num = parse_bound(right).ok().flatten();
        let inclusive = op.ends_with('=');
        let is_less = op.starts_with('<');
        match (left_num, right_num) {
            (None, Some(v)) => {
                var_seen = true;
                // x < v  is an upper bound; x > v a lower bound.
                if is_less {
                    range.high = Some(v);
                    range.high_inclusive = inclusive;
                } else {
                    range.low = Some(v);
                    range.low_inclusive = inclusive;
                }
            }
            (Some(v), None) => {
                var_seen = true;
                if is_less {
                    range.low = Some(v);
                    range.low_inclusive = inclusive;
                } else {
                    range.high = Some(v);
                    range.high_inclusive = inclusive;
                }
            }
            _ => return Err(format!("range `{t}` must compare the parameter against numbers")),
        }
    }
    if !var_seen {
        return Err(format!("unrecognised range expression `{t}`"));
    }
    Ok(range)
}

/// Metadata for one parameter of an API.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub dtype: Dtype,
    pub default: Option<ArgValue>,
    pub range: Option<ValueRange>,
    pub enum_values: Option<Vec<Literal>>,
    pub structure: Structure,
    pub shape: Option<u32>,
}

impl ParameterSpec {
    /// A minimal spec, mostly useful for tests and programmatic construction.
    pub fn new(name: impl Into<String>, dtype: Dtype) -> ParameterSpec {
        ParameterSpec {
            name: name.into(),
            dtype,
            default: None,
            range: None,
            enum_values: None,
            structure: Structure::Unspecified,
            shape: None,
        }
    }

    pub fn with_range(mut self, range: ValueRange) -> Self {
        self.range = Some(range);
        self
    }

    pub fn with_enum(mut self, values: Vec<Literal>) -> Self {
        self.enum_values = Some(values);
        self
    }

    pub fn with_default(mut self, default: ArgValue) -> Self {
        self.default = Some(default);
        self
    }

    fn enum_members(&self) -> Option<&[Literal]> {
        self.enum_values.as_deref().filter(|v| !v.is_empty())
    }

    /// In-range check: does `value` satisfy this parameter's documented dtype,
    /// range and enum membership?
    pub fn admits(&self, value: &Literal) -> bool {
        if let Some(members) = self.enum_members() {
            return members.contains(value);
        }
        match self.dtype {
            Dtype::Boolean => matches!(value, Literal::Bool(_)),
            Dtype::Int | Dtype::Float => {
                let numeric = match (self.dtype, value) {
                    (Dtype::Int, Literal::Int(i)) => Some(*i as f64),
                    (Dtype::Float, Literal::Int(i)) => Some(*i as f64),
                    (Dtype::Float, Literal::Float(f)) => Some(*f),
                    _ => None,
                };
                match (numeric, &self.range) {
                    (Some(v), Some(r)) => r.contains(v),
                    (Some(_), None) => true,
                    (None, _) => false,
                }
            }
            Dtype::String => matches!(value, Literal::Str(_) | Literal::None),
            Dtype::Enum => false,
            Dtype::TensorShape => !matches!(value, Literal::Bool(_)),
        }
    }

    /// Whether random generation can pick a fresh legal value.
    pub fn is_randomizable(&self) -> bool {
        if self.enum_members().is_some() {
            return true;
        }
        match self.dtype {
            Dtype::Boolean => true,
            Dtype::Int | Dtype::Float => self.range.is_some(),
            _ => false,
        }
    }

    /// Whether boundary checking can construct an illegal probe.
    pub fn is_boundable(&self) -> bool {
        if self.enum_members().is_some() {
            return true;
        }
        matches!(self.dtype, Dtype::Int | Dtype::Float) && self.range.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub param_a: String,
    pub param_b: String,
    pub source: String,
    pub predicate: Predicate,
}

impl ConstraintSpec {
    pub fn new(param_a: &str, param_b: &str, source: &str) -> Result<ConstraintSpec, String> {
        let predicate = Predicate::parse(source).map_err(|e| format!("constraint does not parse: {e}"))?;
        let allowed: HashSet<&str> = [param_a, param_b].into_iter().collect();
        if let Some(stray) = predicate.referenced_params().iter().find(|p| !allowed.contains(p.as_str())) {
            return Err(format!(
                "constraint references `{stray}`, which is neither Parameter 1 (`{param_a}`) nor Parameter 2 (`{param_b}`)"
            ));
        }
        Ok(ConstraintSpec { param_a: param_a.into(), param_b: param_b.into(), source: source.into(), predicate })
    }
}

/// True iff `bindings` satisfy the constraint.
pub fn evaluate_constraint(
    spec: &ConstraintSpec,
    bindings: &std::collections::HashMap<String, Literal>,
) -> Result<bool, EvalError> {
    for p in [&spec.param_a, &spec.param_b] {
        if !bindings.contains_key(p) {
            return Err(EvalError::Unbound(p.clone()));
        }
    }
    spec.predicate.evaluate(bindings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiSpec {
    pub name: String,
    pub definition: String,
    pub init_snippet: String,
    pub parameters: Vec<ParameterSpec>,
    pub constraints: Vec<ConstraintSpec>,
    /// Precomputed functional-similarity entries. `None` when the file has no
    /// `Similarity` section, in which case scores are computed on demand.
    pub similarity: Option<Vec<(String, f64)>>,
}

impl ApiSpec {
    /// A spec with no parameters, constraints or similarity entries.
    pub fn new(name: impl Into<String>, definition: impl Into<String>) -> ApiSpec {
        let name = name.into();
        ApiSpec {
            init_snippet: format!("{name}()"),
            name,
            definition: definition.into(),
            parameters: Vec::new(),
            constraints: Vec::new(),
            similarity: None,
        }
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// Last dotted segment, e.g. `LSTM` for `tf.keras.layers.LSTM`.
    pub fn short_name(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }

    /// Module path, e.g. `tf.keras.layers` for `tf.keras.layers.LSTM`.
    pub fn module_path(&self) -> &str {
        self.name.rsplit_once('.').map(|(m, _)| m).unwrap_or("")
    }

    pub fn from_yaml(text: &str, file: &Path) -> Result<ApiSpec, KbError> {
        let schema = |line: Option<usize>, rule: String| KbError::Schema { file: file.to_path_buf(), line, rule };
        let raw: RawApi = serde_yaml::from_str(text)
            .map_err(|e| schema(e.location().map(|l| l.line()), e.to_string()))?;

        let mut similarity = None;
        if let Some(sim) = raw.similarity {
            let mut entries = Vec::new();
            for (api, score) in entries_of(&sim).map_err(|r| schema(locate(text, Some("Similarity"), None), r))? {
                let line = locate(text, Some("Similarity"), Some(&api));
                let score = score
                    .as_f64()
                    .ok_or_else(|| schema(line, format!("similarity score for `{api}` is not a number")))?;
                if !(0.0..=1.0).contains(&score) {
                    return Err(schema(line, format!("similarity score {score} for `{api}` violates score ∈ [0,1]")));
                }
                if api == raw.name {
                    return Err(schema(line, "similarity table must not contain a self-pair".into()));
                }
                entries.push((api, score));
            }
            similarity = Some(entries);
        }

        let mut parameters: Vec<ParameterSpec> = Vec::new();
        if let Some(params) = raw.parameters {
            for (name, body) in entries_of(&params).map_err(|r| schema(locate(text, Some("Parameters"), None), r))? {
                let line = locate(text, Some("Parameters"), Some(&name));
                if parameters.iter().any(|p| p.name == name) {
                    return Err(schema(line, format!("parameter name `{name}` is not unique")));
                }
                let raw_param: RawParam = serde_yaml::from_value(body)
                    .map_err(|e| schema(line, format!("parameter `{name}`: {e}")))?;
                let param = raw_param.into_spec(&name).map_err(|r| schema(line, format!("parameter `{name}`: {r}")))?;
                parameters.push(param);
            }
        }

        let mut constraints = Vec::new();
        for (idx, c) in raw.constrains.into_iter().enumerate() {
            let a = c.param_a.trim().trim_end_matches(',').trim().to_string();
            let b = c.param_b.trim().trim_end_matches(',').trim().to_string();
            let line = locate(text, Some("Constrains"), Some("Parameter 1"));
            for p in [&a, &b] {
                if !parameters.iter().any(|q| &q.name == p) {
                    return Err(schema(line, format!("constraint {} references unknown parameter `{p}`", idx + 1)));
                }
            }
            let spec = ConstraintSpec::new(&a, &b, c.predicate.trim())
                .map_err(|r| schema(line, format!("constraint {}: {r}", idx + 1)))?;
            constraints.push(spec);
        }

        Ok(ApiSpec {
            name: raw.name,
            definition: raw.definition.unwrap_or_default(),
            init_snippet: raw.init.unwrap_or_default(),
            parameters,
            constraints,
            similarity,
        })
    }

    pub fn to_yaml(&self) -> String {
        let mut doc = serde_yaml::Mapping::new();
        doc.insert("name".into(), self.name.clone().into());
        doc.insert("definition".into(), self.definition.clone().into());
        doc.insert("init".into(), self.init_snippet.clone().into());
        if let Some(sim) = &self.similarity {
            let mut m = serde_yaml::Mapping::new();
            for (api, score) in sim {
                m.insert(api.clone().into(), (*score).into());
            }
            doc.insert("Similarity".into(), Value::Mapping(m));
        }
        let mut params = serde_yaml::Mapping::new();
        for p in &self.parameters {
            let mut body = serde_yaml::Mapping::new();
            if let Some(d) = &p.default {
                body.insert("default".into(), arg_to_yaml(d));
            }
            body.insert("dtype".into(), p.dtype.as_str().into());
            if let Some(values) = &p.enum_values {
                body.insert("enum".into(), Value::Sequence(values.iter().map(literal_to_yaml).collect()));
            }
            let range = p.range.map(|r| r.to_interval_string()).unwrap_or_else(|| NO_MENTION.into());
            body.insert("range".into(), range.into());
            body.insert("structure".into(), p.structure.as_str().into());
            let shape = p.shape.map(|s| Value::from(s as u64)).unwrap_or_else(|| NO_MENTION.into());
            body.insert("shape".into(), shape);
            params.insert(p.name.clone().into(), Value::Mapping(body));
        }
        doc.insert("Parameters".into(), Value::Mapping(params));
        let constraints: Vec<Value> = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut m = serde_yaml::Mapping::new();
                m.insert("Constrain NO".into(), ((i + 1) as u64).into());
                m.insert("Parameter 1".into(), c.param_a.clone().into());
                m.insert("Parameter 2".into(), c.param_b.clone().into());
                m.insert("Constrain".into(), c.source.clone().into());
                Value::Mapping(m)
            })
            .collect();
        doc.insert("Constrains".into(), Value::Sequence(constraints));
        serde_yaml::to_string(&Value::Mapping(doc)).expect("YAML serialisation of plain values")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApi {
    name: String,
    #[serde(default)]
    definition: Option<String>,
    #[serde(default)]
    init: Option<String>,
    #[serde(default, rename = "Similarity")]
    similarity: Option<Value>,
    #[serde(default, rename = "Parameters")]
    parameters: Option<Value>,
    #[serde(default, rename = "Constrains")]
    constrains: Vec<RawConstraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParam {
    #[serde(default)]
    default: Option<Value>,
    dtype: String,
    #[serde(default, rename = "enum")]
    enum_values: Option<Vec<Value>>,
    #[serde(default)]
    range: Option<Value>,
    #[serde(default)]
    structure: Option<String>,
    #[serde(default)]
    shape: Option<Value>,
}

impl RawParam {
    fn into_spec(self, name: &str) -> Result<ParameterSpec, String> {
        let dtype = Dtype::parse(&self.dtype).ok_or_else(|| format!("unknown dtype `{}`", self.dtype))?;
        let enum_values = match self.enum_values {
            Some(values) => Some(values.iter().map(yaml_to_literal).collect::<Result<Vec<_>, _>>()?),
            None => None,
        };
        if dtype == Dtype::Enum && enum_values.as_ref().map(|v| v.is_empty()).unwrap_or(true) {
            return Err("dtype enum requires a non-empty enum list".into());
        }
        let range = match self.range {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => ValueRange::parse(&s)?,
            Some(Value::Mapping(m)) => Some(range_from_mapping(&m)?),
            Some(Value::Sequence(seq)) if seq.len() == 2 => {
                let b = |v: &Value| v.as_f64().or_else(|| v.as_str().and_then(|s| parse_bound(s).ok().flatten()));
                let r = ValueRange { low: b(&seq[0]), high: b(&seq[1]), low_inclusive: true, high_inclusive: true };
                r.validate()?;
                Some(r.normalized())
            }
            Some(other) => return Err(format!("unsupported range {other:?}")),
        };
        if range.is_some() && !matches!(dtype, Dtype::Int | Dtype::Float) {
            return Err(format!("a numeric range is only meaningful for int or float, not {dtype}"));
        }
        let default = match self.default {
            None => None,
            Some(v) => Some(yaml_to_arg(&v, dtype)?),
        };
        let structure = match self.structure {
            None => Structure::Unspecified,
            Some(s) => Structure::parse(&s).ok_or_else(|| format!("unknown structure `{s}`"))?,
        };
        let shape = match self.shape {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => Some(n.as_u64().ok_or("shape must be a dimension count")? as u32),
            Some(Value::String(s)) if s.trim().eq_ignore_ascii_case(NO_MENTION) => None,
            Some(Value::String(s)) => Some(s.trim().parse().map_err(|_| format!("invalid shape `{s}`"))?),
            Some(other) => return Err(format!("invalid shape {other:?}")),
        };
        Ok(ParameterSpec { name: name.to_string(), dtype, default, range, enum_values, structure, shape })
    }
}

fn range_from_mapping(m: &serde_yaml::Mapping) -> Result<ValueRange, String> {
    let num = |k: &str| m.get(k).and_then(|v| v.as_f64());
    let flag = |k: &str| m.get(k).and_then(|v| v.as_bool()).unwrap_or(true);
    let r = ValueRange {
        low: num("low"),
        high: num("high"),
        low_inclusive: flag("low_inclusive"),
        high_inclusive: flag("high_inclusive"),
    };
    r.validate()?;
    Ok(r.normalized())
}

#[derive(Deserialize)]
struct RawConstraint {
    #[serde(default, rename = "Constrain NO")]
    #[allow(dead_code)]
    number: Option<Value>,
    #[serde(rename = "Parameter 1")]
    param_a: String,
    #[serde(rename = "Parameter 2")]
    param_b: String,
    #[serde(rename = "Constrain")]
    predicate: String,
}

/// Flattens a mapping or a list of single-entry mappings into ordered pairs.
fn entries_of(v: &Value) -> Result<Vec<(String, Value)>, String> {
    let key_of = |k: &Value| -> Result<String, String> {
        k.as_str().map(str::to_string).ok_or_else(|| format!("expected a string key, found {k:?}"))
    };
    match v {
        Value::Null => Ok(Vec::new()),
        Value::Mapping(m) => m.iter().map(|(k, v)| Ok((key_of(k)?, v.clone()))).collect(),
        Value::Sequence(items) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::Mapping(m) if m.len() == 1 => {
                        let (k, v) = m.iter().next().expect("len checked");
                        out.push((key_of(k)?, v.clone()));
                    }
                    other => return Err(format!("expected `name: value` list entries, found {other:?}")),
                }
            }
            Ok(out)
        }
        other => Err(format!("expected a mapping or list, found {other:?}")),
    }
}

fn yaml_to_literal(v: &Value) -> Result<Literal, String> {
    Ok(match v {
        Value::Null => Literal::None,
        Value::Bool(b) => Literal::Bool(*b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => Literal::Int(i),
            None => Literal::Float(n.as_f64().ok_or("unrepresentable number")?),
        },
        Value::String(s) => match parse_literal(s) {
            Some(Literal::Str(q)) if s.trim_start().starts_with(['\'', '"']) => Literal::Str(q),
            Some(l @ (Literal::None | Literal::Bool(_))) => l,
            _ => Literal::Str(s.clone()),
        },
        other => return Err(format!("expected a scalar literal, found {other:?}")),
    })
}

fn yaml_to_arg(v: &Value, dtype: Dtype) -> Result<ArgValue, String> {
    if let Value::String(s) = v {
        let t = s.trim();
        if t.starts_with(['(', '[', '{']) {
            return Ok(ArgValue::Expr(t.to_string()));
        }
    }
    let lit = yaml_to_literal(v)?;
    Ok(ArgValue::Lit(match (dtype, lit) {
        (Dtype::Float, Literal::Int(i)) => Literal::Float(i as f64),
        (_, l) => l,
    }))
}

fn literal_to_yaml(l: &Literal) -> Value {
    match l {
        Literal::None => "None".into(),
        Literal::Bool(b) => (*b).into(),
        Literal::Int(i) => (*i).into(),
        Literal::Float(f) => (*f).into(),
        Literal::Str(s) => {
            // Strings that would read back as something else are written in
            // quoted source form.
            let plain = Value::String(s.clone());
            match yaml_to_literal(&plain) {
                Ok(Literal::Str(ref back)) if back == s && !s.trim().starts_with(['(', '[', '{']) && s.trim() == s => plain,
                _ => Literal::Str(s.clone()).render().into(),
            }
        }
    }
}

fn arg_to_yaml(a: &ArgValue) -> Value {
    match a {
        ArgValue::Lit(l) => literal_to_yaml(l),
        ArgValue::Expr(e) => e.clone().into(),
    }
}

/// 1-based line of `key:` inside the top-level `section:` block, or of the
/// section header itself when `key` is `None`.
fn locate(text: &str, section: Option<&str>, key: Option<&str>) -> Option<usize> {
    let lines: Vec<&str> = text.lines().collect();
    let start = match section {
        Some(sec) => lines.iter().position(|l| l.trim_end().starts_with(&format!("{sec}:")))?,
        None => 0,
    };
    let Some(key) = key else { return Some(start + 1) };
    lines
        .iter()
        .enumerate()
        .skip(start + 1)
        .find(|(_, l)| {
            let t = l.trim_start().trim_start_matches("- ").trim_start();
            t.starts_with(&format!("{key}:"))
                || t.starts_with(&format!("'{key}':"))
                || t.starts_with(&format!("\"{key}\":"))
        })
        .map(|(i, _)| i + 1)
}

/// Immutable after load; share by reference across workers.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    apis: BTreeMap<String, ApiSpec>,
    sources: BTreeMap<String, PathBuf>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, spec: ApiSpec, source: PathBuf) -> Result<(), KbError> {
        if let Some(first) = self.sources.get(&spec.name) {
            return Err(KbError::Conflict { name: spec.name.clone(), first: first.clone(), second: source });
        }
        self.sources.insert(spec.name.clone(), source);
        self.apis.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ApiSpec> {
        self.apis.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.apis.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.apis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.apis.is_empty()
    }

    /// APIs in name order.
    pub fn iter(&self) -> impl Iterator<Item = &ApiSpec> {
        self.apis.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.apis.keys().map(String::as_str)
    }
}

fn kb_files(dir: &Path) -> Result<Vec<PathBuf>, KbError> {
    let io = |source| KbError::Io { path: dir.to_path_buf(), source };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("yaml" | "yml")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.yaml` / `*.yml` file in `dir`. Fails on the first file (in
/// name order) that does not load.
pub fn load_knowledge_base(dir: &Path) -> Result<KnowledgeBase, KbError> {
    let (kb, mut errors) = scan_knowledge_base(dir)?;
    if errors.is_empty() {
        Ok(kb)
    } else {
        Err(errors.remove(0))
    }
}

/// Loads what it can and reports every file that does not load.
pub fn scan_knowledge_base(dir: &Path) -> Result<(KnowledgeBase, Vec<KbError>), KbError> {
    let mut kb = KnowledgeBase::new();
    let mut errors = Vec::new();
    for path in kb_files(dir)? {
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(source) => {
                errors.push(KbError::Io { path, source });
                continue;
            }
        };
        match ApiSpec::from_yaml(&text, &path).and_then(|spec| kb.insert(spec, path.clone())) {
            Ok(()) => {}
            Err(e) => errors.push(e),
        }
    }
    Ok((kb, errors))
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    const LSTM: &str = r#"name: tf.keras.layers.LSTM
definition: Long Short-Term Memory layer.
init: tf.keras.layers.LSTM(units)
Similarity:
  - tf.keras.layers.LSTMCell: 0.7150709480047226
  - tf.keras.layers.SimpleRNN: 0.644281268119812
  - tf.keras.layers.GRU: 0.6300555363945339
Parameters:
  - units:
      dtype: int
      range: "[1, inf)"
  - activation:
      default: tanh
      dtype: tf.string
      enum:
        - tanh
        - None
  - unit_forget_bias:
      default: true
      dtype: bool
  - bias_initializer:
      default: zeros
      dtype: tf.string
Constrains:
  - Parameter 1: unit_forget_bias,
    Parameter 2: bias_initializer,
    Constrain: |
      if unit_forget_bias is True:
          bias_initializer = 'zeros'
"#;

    fn lstm() -> ApiSpec {
        ApiSpec::from_yaml(LSTM, Path::new("lstm.yaml")).unwrap()
    }

    #[test]
    fn list_form_sections_load() {
        let spec = lstm();
        let sim = spec.similarity.as_ref().unwrap();
        assert_eq!(sim[0], ("tf.keras.layers.LSTMCell".to_string(), 0.7150709480047226));
        assert_eq!(spec.parameters.len(), 4);
        let act = spec.parameter("activation").unwrap();
        assert_eq!(act.dtype, Dtype::String);
        assert_eq!(act.enum_values, Some(vec![Literal::Str("tanh".into()), Literal::None]));
        assert_eq!(act.default, Some(ArgValue::Lit(Literal::Str("tanh".into()))));
        assert_eq!(spec.constraints[0].param_a, "unit_forget_bias");
    }

    #[test]
    fn constraint_from_file_evaluates() {
        let spec = lstm();
        let c = &spec.constraints[0];
        let env = |f: bool, init: &str| {
            HashMap::from([
                ("unit_forget_bias".to_string(), Literal::Bool(f)),
                ("bias_initializer".to_string(), Literal::Str(init.into())),
            ])
        };
        assert!(evaluate_constraint(c, &env(true, "zeros")).unwrap());
        assert!(evaluate_constraint(c, &env(false, "ones")).unwrap());
        assert!(!evaluate_constraint(c, &env(true, "ones")).unwrap());
        let missing = HashMap::from([("unit_forget_bias".to_string(), Literal::Bool(true))]);
        assert!(matches!(evaluate_constraint(c, &missing), Err(EvalError::Unbound(_))));
    }

    #[test]
    fn out_of_range_score_names_line_and_rule() {
        let text = "name: a.B\nSimilarity:\n  a.C: 0.5\n  a.D: 1.3\n";
        let err = ApiSpec::from_yaml(text, Path::new("b.yaml")).unwrap_err();
        match err {
            KbError::Schema { line, rule, .. } => {
                assert_eq!(line, Some(4));
                assert!(rule.contains("score ∈ [0,1]"), "{rule}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violations() {
        let cases = [
            ("name: a.B\nParameters:\n  x:\n    dtype: enum\n", "non-empty enum"),
            ("name: a.B\nParameters:\n  x:\n    dtype: int\n    range: \"[3, 1]\"\n", "exceeds"),
            ("name: a.B\nParameters:\n  x:\n    dtype: widget\n", "unknown dtype"),
            ("name: a.B\nParameters:\n  x:\n    dtype: int\n  x:\n    dtype: int\n", "duplicate"),
            (
                "name: a.B\nParameters:\n  x:\n    dtype: int\nConstrains:\n  - Parameter 1: x\n    Parameter 2: y\n    Constrain: x > y\n",
                "unknown parameter",
            ),
            (
                "name: a.B\nParameters:\n  x:\n    dtype: int\n  y:\n    dtype: int\n  z:\n    dtype: int\nConstrains:\n  - Parameter 1: x\n    Parameter 2: y\n    Constrain: x > z\n",
                "neither",
            ),
            ("name: a.B\nSimilarity:\n  a.B: 0.5\n", "self-pair"),
            ("name: a.B\nbogus: 1\n", "unknown field"),
        ];
        for (text, needle) in cases {
            let err = ApiSpec::from_yaml(text, Path::new("x.yaml")).unwrap_err().to_string();
            assert!(err.contains(needle), "expected `{needle}` in `{err}`");
        }
    }

    #[test]
    fn range_notations() {
        let r = |s: &str| ValueRange::parse(s).unwrap().unwrap();
        assert_eq!(r("[0, 1]"), ValueRange { low: Some(0.0), high: Some(1.0), low_inclusive: true, high_inclusive: true });
        assert_eq!(r("(0, inf)"), ValueRange { low: Some(0.0), high: None, low_inclusive: false, high_inclusive: false });
        assert_eq!(r(">= 1"), ValueRange { low: Some(1.0), high: None, low_inclusive: true, high_inclusive: false });
        assert_eq!(r("alpha >= 0"), r("[0, inf)"));
        assert_eq!(r("0 <= rate < 1"), ValueRange { low: Some(0.0), high: Some(1.0), low_inclusive: true, high_inclusive: false });
        assert_eq!(r("x < 5"), ValueRange { low: None, high: Some(5.0), low_inclusive: false, high_inclusive: false });
        assert_eq!(ValueRange::parse("No mention").unwrap(), None);
        assert!(ValueRange::parse("(-inf, inf)").is_err());
        assert!(ValueRange::parse("banana").is_err());
    }

    #[test]
    fn admits_checks_type_range_enum() {
        let rate = ParameterSpec::new("rate", Dtype::Float).with_range(ValueRange::parse("[0, 1]").unwrap().unwrap());
        assert!(rate.admits(&Literal::Float(0.5)));
        assert!(rate.admits(&Literal::Int(1)));
        assert!(!rate.admits(&Literal::Float(-0.1)));
        assert!(!rate.admits(&Literal::Str("x".into())));
        let k = ParameterSpec::new("kernel_size", Dtype::Int).with_range(ValueRange::parse(">= 1").unwrap().unwrap());
        assert!(!k.admits(&Literal::Int(0)));
        assert!(!k.admits(&Literal::Float(2.0)));
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_knowledge_base(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("lstm.yaml"), LSTM).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let kb = load_knowledge_base(dir.path()).unwrap();
        assert_eq!(kb.names().collect::<Vec<_>>(), vec!["tf.keras.layers.LSTM"]);

        std::fs::write(dir.path().join("lstm_copy.yml"), LSTM).unwrap();
        assert!(matches!(load_knowledge_base(dir.path()), Err(KbError::Conflict { .. })));

        std::fs::write(dir.path().join("broken.yaml"), "name: [unclosed").unwrap();
        let (kb, errors) = scan_knowledge_base(dir.path()).unwrap();
        assert_eq!(kb.len(), 1);
        assert_eq!(errors.len(), 2);
    }

    #[test]
    fn yaml_round_trip_of_fixture() {
        let spec = lstm();
        let again = ApiSpec::from_yaml(&spec.to_yaml(), Path::new("again.yaml")).unwrap();
        assert_eq!(spec, again);
    }

    mod round_trip {
        use proptest::prelude::*;

        use super::*;

        fn arb_literal() -> impl Strategy<Value = Literal> {
            prop_oneof![
                Just(Literal::None),
                any::<bool>().prop_map(Literal::Bool),
                (-1000i64..1000).prop_map(Literal::Int),
                (-100.0f64..100.0).prop_map(|f| Literal::Float((f * 100.0).round() / 100.0)),
                prop_oneof!["[a-z_]{1,8}", Just("None".to_string()), Just("True".to_string()), Just("it's".to_string())]
                    .prop_map(Literal::Str),
            ]
        }

        fn arb_param(name: String) -> impl Strategy<Value = ParameterSpec> {
            let range = (proptest::option::of(-50i32..0), proptest::option::of(1i32..50), any::<bool>(), any::<bool>())
                .prop_filter_map("bounded", |(lo, hi, li, hi_inc)| {
                    if lo.is_none() && hi.is_none() {
                        return None;
                    }
                    Some(
                        ValueRange {
                            low: lo.map(f64::from),
                            high: hi.map(f64::from),
                            low_inclusive: li,
                            high_inclusive: hi_inc,
                        }
                        .normalized(),
                    )
                });
            let numeric = (prop_oneof![Just(Dtype::Int), Just(Dtype::Float)], proptest::option::of(range));
            let enum_like = proptest::collection::vec(arb_literal(), 1..4);
            let default = proptest::option::of(prop_oneof![
                arb_literal().prop_map(ArgValue::Lit),
                Just(ArgValue::Expr("(2, 2)".into())),
            ]);
            let shape = proptest::option::of(1u32..5);
            let structure = prop_oneof![Just(Structure::Scalar), Just(Structure::Tuple), Just(Structure::Unspecified)];
            (prop_oneof![numeric.prop_map(|(d, r)| (d, r, None)), enum_like.prop_map(|e| (Dtype::Enum, None, Some(e)))], default, shape, structure)
                .prop_map(move |((dtype, range, enum_values), default, shape, structure)| {
                    // Float-typed defaults read back as floats.
                    let default = match (dtype, default) {
                        (Dtype::Float, Some(ArgValue::Lit(Literal::Int(i)))) => Some(ArgValue::Lit(Literal::Float(i as f64))),
                        (_, d) => d,
                    };
                    ParameterSpec { name: name.clone(), dtype, default, range, enum_values, structure, shape }
                })
        }

        fn arb_api() -> impl Strategy<Value = ApiSpec> {
            let params = proptest::collection::btree_set("p[a-z]{1,5}", 1..5).prop_flat_map(|names| {
                names.into_iter().map(arb_param).collect::<Vec<_>>()
            });
            let sim = proptest::option::of(proptest::collection::vec(("m\\.[A-Z][a-z]{1,5}", 0.0f64..=1.0), 0..4));
            (params, sim, "[A-Za-z ]{0,30}").prop_map(|(parameters, similarity, definition)| {
                let mut similarity = similarity;
                if let Some(s) = similarity.as_mut() {
                    s.retain(|(n, _)| n != "m.Self");
                    s.dedup_by(|a, b| a.0 == b.0);
                    let mut seen = std::collections::HashSet::new();
                    s.retain(|(n, _)| seen.insert(n.clone()));
                }
                let constraints = if parameters.len() >= 2 {
                    let (a, b) = (&parameters[0].name, &parameters[1].name);
                    vec![ConstraintSpec::new(a, b, &format!("if {a} == 1 then {b} != 'x'")).unwrap()]
                } else {
                    Vec::new()
                };
                ApiSpec {
                    name: "m.Self".into(),
                    definition: definition.trim().to_string(),
                    init_snippet: "m.Self()".into(),
                    parameters,
                    constraints,
                    similarity,
                }
            })
        }

        proptest! {
            #[test]
            fn serialise_then_load_is_identity(spec in arb_api()) {
                let text = spec.to_yaml();
                let back = ApiSpec::from_yaml(&text, Path::new("rt.yaml")).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
                prop_assert_eq!(back, spec);
            }
        }
    }
}
