//! Code-block mutation: API replacement (AR), random generation (RG) and
//! boundary checking (BC).

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{CallExpression, CodeBlock};
use crate::kb::{
    evaluate_constraint, sample_illegal_boundary_value, sample_legal_value, ApiSpec, EvalError, KnowledgeBase,
};
use crate::literal::{ArgValue, Literal};
use crate::similarity::{roulette_select, SimilarityTable};

/// Attempts at drawing a constraint-satisfying RG value.
pub const CONSTRAINT_RETRIES: usize = 16;

/// Default number of parameters probed by BC per positive variant.
pub const DEFAULT_BC_CAP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    #[serde(rename = "AR")]
    ApiReplacement,
    #[serde(rename = "RG")]
    RandomGeneration,
    #[serde(rename = "BC")]
    BoundaryChecking,
    #[serde(rename = "IDENTITY")]
    Identity,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Operator::ApiReplacement => "AR",
            Operator::RandomGeneration => "RG",
            Operator::BoundaryChecking => "BC",
            Operator::Identity => "IDENTITY",
        })
    }
}

/// Whether the inserted block should run normally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutValue {
    Api(String),
    Value(ArgValue),
    /// The argument was not written in the call.
    Unset,
}

impl fmt::Display for MutValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutValue::Api(a) => f.write_str(a),
            MutValue::Value(v) => f.write_str(&v.render()),
            MutValue::Unset => f.write_str("<unset>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub id: String,
    pub operator: Operator,
    /// API of the block the operator was applied to.
    pub api: String,
    /// API of the resulting block.
    pub target_api: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    pub old: MutValue,
    pub new: MutValue,
    pub expected: Expected,
    /// For BC, the positive mutation the probe was applied on top of.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<Box<MutationRecord>>,
}

impl MutationRecord {
    pub fn identity(id: impl Into<String>, api: &str) -> Self {
        MutationRecord {
            id: id.into(),
            operator: Operator::Identity,
            api: api.to_string(),
            target_api: api.to_string(),
            parameter: None,
            old: MutValue::Unset,
            new: MutValue::Unset,
            expected: Expected::Positive,
            derived_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MutationError {
    #[error("{operator} does not apply to `{api}`: {reason}")]
    NotApplicable { operator: Operator, api: String, reason: String },
    #[error("cannot map arguments of `{from}` onto `{to}`: required parameter `{parameter}` has no counterpart")]
    Remap { from: String, to: String, parameter: String },
    #[error("api `{0}` is not in the knowledge base")]
    UnknownApi(String),
}

fn not_applicable(operator: Operator, api: &str, reason: impl Into<String>) -> MutationError {
    MutationError::NotApplicable { operator, api: api.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub block: CodeBlock,
    pub record: MutationRecord,
}

fn spec<'a>(kb: &'a KnowledgeBase, api: &str) -> Result<&'a ApiSpec, MutationError> {
    kb.get(api).ok_or_else(|| MutationError::UnknownApi(api.to_string()))
}

fn current_value(call: &CallExpression, api: &ApiSpec, param: &str) -> MutValue {
    call.argument(api, param).cloned().map(MutValue::Value).unwrap_or(MutValue::Unset)
}

/// Replaces the callee by a roulette-selected similar API and remaps the
/// arguments by parameter name.
pub fn mutate_api_replacement<R: Rng + ?Sized>(
    block: &CodeBlock,
    kb: &KnowledgeBase,
    table: &SimilarityTable,
    rng: &mut R,
) -> Result<Variant, MutationError> {
    let op = Operator::ApiReplacement;
    let old_spec = spec(kb, &block.api)?;
    let candidates = table.candidates(&block.api);
    if candidates.is_empty() {
        return Err(not_applicable(op, &block.api, "no similar API is known"));
    }
    let target = roulette_select(candidates, rng).map_err(|e| not_applicable(op, &block.api, e.to_string()))?;
    let new_spec = spec(kb, target)?;
    let call = remap_call(block.call(), old_spec, new_spec)?;
    let mut out = block.clone();
    *out.call_line_mut().call_mut() = call;
    let record = MutationRecord {
        id: String::new(),
        operator: op,
        api: block.api.clone(),
        target_api: new_spec.name.clone(),
        parameter: None,
        old: MutValue::Api(block.api.clone()),
        new: MutValue::Api(new_spec.name.clone()),
        expected: Expected::Positive,
        derived_from: None,
    };
    out.api = new_spec.name.clone();
    Ok(Variant { block: out, record })
}

/// The callee text for `new` written in the style of `old_callee`.
fn replacement_callee(old_callee: &str, old: &ApiSpec, new: &ApiSpec) -> String {
    if old.module_path() == new.module_path() {
        match old_callee.rsplit_once('.') {
            Some((qualifier, _)) => format!("{qualifier}.{}", new.short_name()),
            None => new.short_name().to_string(),
        }
    } else {
        new.name.clone()
    }
}

/// Keeps arguments whose parameter name exists on `new`. Positional
/// arguments stay positional while names line up by position; the rest
/// become keywords. Parameters of `new` without a counterpart are left to
/// their defaults.
pub fn remap_call(call: &CallExpression, old: &ApiSpec, new: &ApiSpec) -> Result<CallExpression, MutationError> {
    let mut out = CallExpression::new(replacement_callee(&call.callee, old, new));
    let mut positional_ok = true;
    let mut bound: Vec<(String, ArgValue)> = Vec::new();
    for (i, value) in call.positional.iter().enumerate() {
        let Some(name) = old.parameters.get(i).map(|p| p.name.as_str()) else { continue };
        if positional_ok && new.parameters.get(i).map(|p| p.name == name).unwrap_or(false) {
            out.positional.push(value.clone());
        } else {
            positional_ok = false;
            if new.parameter(name).is_some() {
                bound.push((name.to_string(), value.clone()));
            }
        }
    }
    for (name, value) in &call.keyword {
        if new.parameter(name).is_some() {
            bound.push((name.clone(), value.clone()));
        }
    }
    for p in &new.parameters {
        let have = new.parameter_index(&p.name).map(|i| i < out.positional.len()).unwrap_or(false)
            || bound.iter().any(|(n, _)| n == &p.name);
        if !have && p.default.is_none() {
            return Err(MutationError::Remap { from: old.name.clone(), to: new.name.clone(), parameter: p.name.clone() });
        }
    }
    // Keywords follow the new API's declaration order.
    bound.sort_by_key(|(n, _)| new.parameter_index(n).unwrap_or(usize::MAX));
    out.keyword = bound;
    Ok(out)
}

/// Literal bindings of every parameter: written literal arguments take
/// precedence over literal defaults. Expressions stay unbound.
pub fn literal_bindings(call: &CallExpression, api: &ApiSpec) -> HashMap<String, Literal> {
    let mut out = HashMap::new();
    for p in &api.parameters {
        let value = match call.argument(api, &p.name) {
            Some(v) => v.as_literal().cloned(),
            None => p.default.as_ref().and_then(ArgValue::as_literal).cloned(),
        };
        if let Some(v) = value {
            out.insert(p.name.clone(), v);
        }
    }
    out
}

/// False when some constraint is violated. Constraints over an unbound
/// parameter are skipped; ill-typed comparisons count as violations.
pub fn satisfies_constraints(api: &ApiSpec, bindings: &HashMap<String, Literal>) -> bool {
    api.constraints.iter().all(|c| match evaluate_constraint(c, bindings) {
        Ok(holds) => holds,
        Err(EvalError::Unbound(_)) => true,
        Err(_) => false,
    })
}

/// Reassigns one uniformly chosen randomizable parameter to a different
/// legal value that keeps every constraint satisfied.
pub fn mutate_random_generation<R: Rng + ?Sized>(
    block: &CodeBlock,
    kb: &KnowledgeBase,
    rng: &mut R,
) -> Result<Variant, MutationError> {
    let op = Operator::RandomGeneration;
    let api = spec(kb, &block.api)?;
    let candidates: Vec<_> = api.parameters.iter().filter(|p| p.is_randomizable()).collect();
    let param = *candidates.choose(rng).ok_or_else(|| not_applicable(op, &api.name, "no sampleable parameter"))?;
    let old = current_value(block.call(), api, &param.name);
    for _ in 0..CONSTRAINT_RETRIES {
        let Ok(value) = sample_legal_value(param, rng) else { break };
        let value = ArgValue::Lit(value);
        if old == MutValue::Value(value.clone()) {
            continue;
        }
        let mut call = block.call().clone();
        call.set_argument(api, &param.name, value.clone());
        if !satisfies_constraints(api, &literal_bindings(&call, api)) {
            continue;
        }
        let mut out = block.clone();
        *out.call_line_mut().call_mut() = call;
        let record = MutationRecord {
            id: String::new(),
            operator: op,
            api: api.name.clone(),
            target_api: api.name.clone(),
            parameter: Some(param.name.clone()),
            old,
            new: MutValue::Value(value),
            expected: Expected::Positive,
            derived_from: None,
        };
        return Ok(Variant { block: out, record });
    }
    Err(not_applicable(op, &api.name, format!("no new legal value for `{}` within {CONSTRAINT_RETRIES} draws", param.name)))
}

/// One negative variant per boundable parameter, at most `cap`, in
/// declaration order.
pub fn mutate_boundary_checking<R: Rng + ?Sized>(
    block: &CodeBlock,
    kb: &KnowledgeBase,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<Variant>, MutationError> {
    let api = spec(kb, &block.api)?;
    let mut out = Vec::new();
    for param in api.parameters.iter().filter(|p| p.is_boundable()).take(cap) {
        let Ok(value) = sample_illegal_boundary_value(param, rng) else { continue };
        let value = ArgValue::Lit(value);
        let old = current_value(block.call(), api, &param.name);
        let mut b = block.clone();
        b.call_line_mut().call_mut().set_argument(api, &param.name, value.clone());
        let record = MutationRecord {
            id: String::new(),
            operator: Operator::BoundaryChecking,
            api: api.name.clone(),
            target_api: api.name.clone(),
            parameter: Some(param.name.clone()),
            old,
            new: MutValue::Value(value),
            expected: Expected::Negative,
            derived_from: None,
        };
        out.push(Variant { block: b, record });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantConfig {
    pub times_mt: usize,
    /// Probability of trying AR before RG for each positive variant.
    pub ar_weight: f64,
    pub bc_cap: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig { times_mt: 4, ar_weight: 0.5, bc_cap: DEFAULT_BC_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariantSet {
    /// Identity first, then each positive variant followed by its negatives.
    pub variants: Vec<Variant>,
    /// AR variants dropped because their arguments could not be remapped.
    pub discarded: usize,
    pub warnings: Vec<String>,
}

fn with_id(mut v: Variant, id: String) -> Variant {
    v.block.id = id.clone();
    v.record.id = id;
    v
}

/// Identity, `times_mt` positive AR/RG variants and the BC negatives of each
/// positive variant.
pub fn generate_block_variants<R: Rng + ?Sized>(
    block: &CodeBlock,
    cfg: &VariantConfig,
    kb: &KnowledgeBase,
    table: &SimilarityTable,
    rng: &mut R,
) -> Result<VariantSet, MutationError> {
    spec(kb, &block.api)?;
    let mut set = VariantSet::default();
    set.variants.push(Variant { block: block.clone(), record: MutationRecord::identity(block.id.clone(), &block.api) });
    let mut produced = 0;
    for k in 1..=cfg.times_mt {
        let ar_first = rng.gen_bool(cfg.ar_weight.clamp(0.0, 1.0));
        let order = if ar_first {
            [Operator::ApiReplacement, Operator::RandomGeneration]
        } else {
            [Operator::RandomGeneration, Operator::ApiReplacement]
        };
        let mut positive = None;
        for op in order {
            let attempt = match op {
                Operator::ApiReplacement => mutate_api_replacement(block, kb, table, rng),
                _ => mutate_random_generation(block, kb, rng),
            };
            match attempt {
                Ok(v) => {
                    positive = Some(v);
                    break;
                }
                Err(MutationError::NotApplicable { .. }) => continue,
                Err(MutationError::Remap { .. }) => {
                    set.discarded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
        }
        let Some(positive) = positive else { continue };
        produced += 1;
        let pid = format!("{}.{k}", block.id);
        let positive = with_id(positive, pid.clone());
        let negatives = mutate_boundary_checking(&positive.block, kb, cfg.bc_cap, rng)?;
        let parent_record = positive.record.clone();
        set.variants.push(positive);
        for (j, mut neg) in negatives.into_iter().enumerate() {
            neg.record.derived_from = Some(Box::new(parent_record.clone()));
            set.variants.push(with_id(neg, format!("{pid}.bc{}", j + 1)));
        }
    }
    if produced == 0 && cfg.times_mt > 0 {
        set.warnings.push(format!("block {} ({}): neither AR nor RG applies; only the identity variant is used", block.id, block.api));
    }
    Ok(set)
}
