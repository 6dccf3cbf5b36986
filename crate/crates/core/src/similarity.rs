//! Functional similarity between APIs (definition embeddings plus
//! parameter-list word correctness rate) and roulette-wheel selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::kb::{ApiSpec, Dtype, KnowledgeBase, ParameterSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("reference parameter list is empty")]
    EmptyReference,
    #[error("api `{0}` is not in the knowledge base")]
    UnknownApi(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("no candidates to select from")]
    Empty,
    #[error("candidate `{0}` has a negative or non-finite score")]
    BadScore(String),
    #[error("all candidate scores are zero")]
    ZeroTotal,
}

/// Lowercased alphanumeric tokens of a text.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Ordered token set shared by all embeddings of one campaign.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        Vocabulary { tokens: set.into_iter().enumerate().map(|(i, t)| (t, i)).collect() }
    }

    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> Self {
        Self::from_tokens(texts.into_iter().flat_map(|t| tokenize(t).collect::<Vec<_>>()))
    }

    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        Self::from_corpus(kb.iter().map(|a| a.definition.as_str()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.tokens.get(token).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Turns a definition sentence into a vector; swap in a sentence-embedding
/// service by implementing this.
pub trait DefinitionEmbedder {
    fn embed(&self, text: &str) -> EmbeddingVector;
}

/// Token-count embedding over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct BagOfWords {
    pub vocabulary: Vocabulary,
}

impl DefinitionEmbedder for BagOfWords {
    fn embed(&self, text: &str) -> EmbeddingVector {
        embed_definition(text, &self.vocabulary)
    }
}

pub fn embed_definition(text: &str, vocabulary: &Vocabulary) -> EmbeddingVector {
    let mut v = vec![0.0; vocabulary.len()];
    for tok in tokenize(text) {
        if let Some(i) = vocabulary.index(&tok) {
            v[i] += 1.0;
        }
    }
    EmbeddingVector(v)
}

/// Cosine of the angle between two vectors; 0 when either is the zero vector.
pub fn cosine_similarity(v1: &EmbeddingVector, v2: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if v1.dim() != v2.dim() {
        return Err(SimilarityError::DimensionMismatch(v1.dim(), v2.dim()));
    }
    let (n1, n2) = (v1.norm(), v2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = v1.0.iter().zip(&v2.0).map(|(a, b)| a * b).sum();
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Edit counts of the chosen alignment of two sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Alignment {
    pub correct: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl Alignment {
    pub fn cost(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Minimal edit alignment; among minimal-cost alignments the one with the
/// most matches.
#[allow(clippy::needless_range_loop)]
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hypothesis.len());
    // Each cell holds the best alignment of the prefixes, ordered by
    // (cost ascending, matches descending).
    let mut dp = vec![vec![Alignment::default(); m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = Alignment { deletions: i, ..Default::default() };
    }
    for j in 1..=m {
        dp[0][j] = Alignment { insertions: j, ..Default::default() };
    }
    let key = |a: &Alignment| (a.cost(), std::cmp::Reverse(a.correct));
    for i in 1..=n {
        for j in 1..=m {
            let diag = {
                let mut a = dp[i - 1][j - 1];
                if reference[i - 1] == hypothesis[j - 1] {
                    a.correct += 1;
                } else {
                    a.substitutions += 1;
                }
                a
            };
            let del = Alignment { deletions: dp[i - 1][j].deletions + 1, ..dp[i - 1][j] };
            let ins = Alignment { insertions: dp[i][j - 1].insertions + 1, ..dp[i][j - 1] };
            // min_by_key keeps the first minimum, giving the
            // match/substitution > deletion > insertion preference.
            dp[i][j] = [diag, del, ins].into_iter().min_by_key(key).expect("three options");
        }
    }
    dp[n][m]
}

/// Word correctness rate C / N1 of the hypothesis parameter list against the
/// reference, matching parameters by dtype.
pub fn parameter_list_wcr(reference: &[ParameterSpec], hypothesis: &[ParameterSpec]) -> Result<f64, SimilarityError> {
    if reference.is_empty() {
        return Err(SimilarityError::EmptyReference);
    }
    let r: Vec<Dtype> = reference.iter().map(|p| p.dtype).collect();
    let h: Vec<Dtype> = hypothesis.iter().map(|p| p.dtype).collect();
    Ok(align(&r, &h).correct as f64 / r.len() as f64)
}

/// Mean of definition cosine similarity and parameter-list WCR, in [0, 1].
pub fn functional_similarity(
    a1: &ApiSpec,
    a2: &ApiSpec,
    embedder: &dyn DefinitionEmbedder,
) -> Result<f64, SimilarityError> {
    let def = cosine_similarity(&embedder.embed(&a1.definition), &embedder.embed(&a2.definition))?.max(0.0);
    let para = parameter_list_wcr(&a1.parameters, &a2.parameters)?;
    Ok((def + para) / 2.0)
}

/// Ranked replacement candidates per API.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityTable {
    entries: BTreeMap<String, Vec<(String, f64)>>,
}

impl SimilarityTable {
    /// Uses each API's precomputed `Similarity` entries when present and
    /// computes scores against every other KB API otherwise. Only candidates
    /// that exist in the KB and score above zero are kept.
    pub fn from_kb(kb: &KnowledgeBase, embedder: &dyn DefinitionEmbedder) -> Result<Self, SimilarityError> {
        let mut entries = BTreeMap::new();
        for api in kb.iter() {
            entries.insert(api.name.clone(), candidates_for(kb, api, embedder)?);
        }
        Ok(SimilarityTable { entries })
    }

    pub fn candidates(&self, api: &str) -> &[(String, f64)] {
        self.entries.get(api).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn score(&self, a: &str, b: &str) -> Option<f64> {
        self.candidates(a).iter().find(|(n, _)| n == b).map(|(_, s)| *s)
    }
}

fn candidates_for(
    kb: &KnowledgeBase,
    api: &ApiSpec,
    embedder: &dyn DefinitionEmbedder,
) -> Result<Vec<(String, f64)>, SimilarityError> {
    let mut list: Vec<(String, f64)> = match &api.similarity {
        Some(pre) => pre.iter().filter(|(n, _)| n != &api.name && kb.contains(n)).cloned().collect(),
        None => {
            let mut out = Vec::new();
            for other in kb.iter().filter(|o| o.name != api.name) {
                if api.parameters.is_empty() {
                    break;
                }
                out.push((other.name.clone(), functional_similarity(api, other, embedder)?));
            }
            out
        }
    };
    list.retain(|(_, s)| *s > 0.0);
    list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(list)
}

/// Ranked similarity list of `api` against the rest of the KB.
pub fn ranked_similarity(kb: &KnowledgeBase, api: &str) -> Result<Vec<(String, f64)>, SimilarityError> {
    let spec = kb.get(api).ok_or_else(|| SimilarityError::UnknownApi(api.to_string()))?;
    let embedder = BagOfWords { vocabulary: Vocabulary::from_kb(kb) };
    candidates_for(kb, spec, &embedder)
}

fn check_candidates(candidates: &[(String, f64)]) -> Result<f64, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::Empty);
    }
    for (name, s) in candidates {
        if !s.is_finite() || *s < 0.0 {
            return Err(SelectionError::BadScore(name.clone()));
        }
    }
    let total: f64 = candidates.iter().map(|(_, s)| s).sum();
    if total <= 0.0 {
        return Err(SelectionError::ZeroTotal);
    }
    Ok(total)
}

/// Walks the wheel in the given order and returns the owner of the interval
/// containing `u`.
pub fn select_at<'a>(ordered: &[&'a (String, f64)], u: f64) -> &'a str {
    let mut acc = 0.0;
    for c in ordered {
        acc += c.1;
        if u < acc {
            return &c.0;
        }
    }
    // Floating-point slack at the top end falls to the last positive interval.
    &ordered.iter().rev().find(|c| c.1 > 0.0).expect("positive total").0
}

/// Fitness-proportionate choice: intervals are laid out in a shuffled order
/// and a uniform point on the wheel picks the owner.
pub fn roulette_select<'a, R: Rng + ?Sized>(
    candidates: &'a [(String, f64)],
    rng: &mut R,
) -> Result<&'a str, SelectionError> {
    let total = check_candidates(candidates)?;
    let mut order: Vec<&(String, f64)> = candidates.iter().collect();
    order.shuffle(rng);
    let u = rng.gen_range(0.0..total);
    Ok(select_at(&order, u))
}
