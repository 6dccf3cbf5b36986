//! The derivation tree: level-by-level assembly of mutated blocks, node
//! execution and equivalence-class pruning.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::code::{AssembledTest, CodeBlock, Disassembly, Template};
use crate::executor::{ExecutionState, Executor, ExecutorError};
use crate::kb::{Dtype, KnowledgeBase};
use crate::literal::Literal;
use crate::mutation::{
    generate_block_variants, Expected, MutValue, MutationError, MutationRecord, Operator, VariantConfig,
};
use crate::rng::substream;
use crate::similarity::SimilarityTable;

pub const ROOT_ID: &str = "root";

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationNode {
    pub id: String,
    pub level: usize,
    pub parent: Option<String>,
    /// Template after this node's block was inserted.
    pub template: Template,
    pub inserted_block: Option<CodeBlock>,
    pub mutation: Option<MutationRecord>,
    pub assembled: AssembledTest,
    pub expected: Expected,
    pub observed: Option<ExecutionState>,
    /// Selected to receive children at the next level.
    pub survived: bool,
}

impl DerivationNode {
    pub fn is_identity(&self) -> bool {
        self.mutation.as_ref().map(|m| m.operator == Operator::Identity).unwrap_or(false)
    }

    pub fn succeeded(&self) -> bool {
        self.observed.as_ref().map(ExecutionState::succeeded).unwrap_or(false)
    }

    /// File name of this node's program.
    pub fn file_name(&self) -> String {
        format!("{}.py", self.id.replace('/', "_"))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DerivationTree {
    /// Nodes in creation order: level by level, parents in id order.
    pub nodes: Vec<DerivationNode>,
    index: BTreeMap<String, usize>,
}

impl DerivationTree {
    pub fn get(&self, id: &str) -> Option<&DerivationNode> {
        self.index.get(id).map(|i| &self.nodes[*i])
    }

    fn push(&mut self, node: DerivationNode) {
        self.index.insert(node.id.clone(), self.nodes.len());
        self.nodes.push(node);
    }

    pub fn root(&self) -> Option<&DerivationNode> {
        self.get(ROOT_ID)
    }

    pub fn level(&self, level: usize) -> impl Iterator<Item = &DerivationNode> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    pub fn levels(&self) -> usize {
        self.nodes.iter().map(|n| n.level + 1).max().unwrap_or(0)
    }

    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a DerivationNode> + 'a {
        self.nodes.iter().filter(move |n| n.parent.as_deref() == Some(id))
    }

    /// Nodes actually run (all nodes with an observed state).
    pub fn executed(&self) -> usize {
        self.nodes.iter().filter(|n| n.observed.is_some()).count()
    }

    /// Positive nodes whose path from the root has no identity edge; the
    /// root counts. This is the quantity the geometric node-count formula
    /// describes.
    pub fn formula_node_count(&self) -> usize {
        let mut count = 0;
        for n in &self.nodes {
            if n.expected != Expected::Positive {
                continue;
            }
            let mut cur = Some(n);
            let mut clean = true;
            while let Some(c) = cur {
                if c.is_identity() {
                    clean = false;
                    break;
                }
                cur = c.parent.as_deref().and_then(|p| self.get(p));
            }
            if clean {
                count += 1;
            }
        }
        count
    }

    /// One JSON object per node, in creation order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for n in &self.nodes {
            let line = NodeLine {
                id: &n.id,
                parent: n.parent.as_deref(),
                level: n.level,
                expected: n.expected,
                mutation: n.mutation.as_ref(),
                observed: n.observed.as_ref(),
                survived: n.survived,
                source_hash: n.assembled.source_hash(),
                template: &n.assembled.provenance.template_id,
                block: n.inserted_block.as_ref().map(|b| b.id.as_str()),
                inserted_line: n.assembled.inserted_line,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct NodeLine<'a> {
    id: &'a str,
    parent: Option<&'a str>,
    level: usize,
    expected: Expected,
    mutation: Option<&'a MutationRecord>,
    observed: Option<&'a ExecutionState>,
    survived: bool,
    source_hash: String,
    template: &'a str,
    block: Option<&'a str>,
    inserted_line: Option<usize>,
}

/// Σ_{i=0..m} n^i: nodes of the unpruned, all-successful, positive-only tree
/// with identity branches left out.
pub fn expected_node_count(n: u64, m: u32) -> u64 {
    (0..=m).map(|i| n.pow(i)).sum()
}

/// Equivalence class of a positive node that ran normally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum EquivalenceClassKey {
    Identity,
    Replacement { api: String },
    Numeric { api: String, parameter: String, range: RangeClass },
    Boolean { api: String, parameter: String, value: bool },
    Choice { api: String, parameter: String, option: String },
    /// Values the other rules do not describe, keyed by their source text.
    Other { api: String, parameter: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeClass {
    InLegalRange,
    IllegalRange,
    EqualsBoundary,
}

pub fn equivalence_key(record: &MutationRecord, kb: &KnowledgeBase) -> EquivalenceClassKey {
    match record.operator {
        Operator::Identity => return EquivalenceClassKey::Identity,
        Operator::ApiReplacement => return EquivalenceClassKey::Replacement { api: record.target_api.clone() },
        _ => {}
    }
    let api = record.target_api.clone();
    let parameter = record.parameter.clone().unwrap_or_default();
    let spec = kb.get(&api).and_then(|a| a.parameter(&parameter));
    let value = match &record.new {
        MutValue::Value(v) => v.as_literal().cloned(),
        _ => None,
    };
    let text = record.new.to_string();
    if let (Some(p), Some(v)) = (spec, value.as_ref()) {
        if p.enum_values.is_some() {
            return EquivalenceClassKey::Choice { api, parameter, option: v.render() };
        }
        if let Literal::Bool(b) = v {
            return EquivalenceClassKey::Boolean { api, parameter, value: *b };
        }
        if let (Some(x), Some(r), true) = (v.as_f64(), p.range.as_ref(), matches!(p.dtype, Dtype::Int | Dtype::Float)) {
            let range = if r.is_boundary(x) {
                RangeClass::EqualsBoundary
            } else if r.contains(x) {
                RangeClass::InLegalRange
            } else {
                RangeClass::IllegalRange
            };
            return EquivalenceClassKey::Numeric { api, parameter, range };
        }
    }
    EquivalenceClassKey::Other { api, parameter, value: text }
}

/// Partitions nodes by equivalence key; member lists keep input order.
pub fn classify_equivalence<'a, I>(nodes: I, kb: &KnowledgeBase) -> BTreeMap<EquivalenceClassKey, Vec<String>>
where
    I: IntoIterator<Item = &'a DerivationNode>,
{
    let mut out: BTreeMap<EquivalenceClassKey, Vec<String>> = BTreeMap::new();
    for n in nodes {
        let key = n.mutation.as_ref().map(|m| equivalence_key(m, kb)).unwrap_or(EquivalenceClassKey::Identity);
        out.entry(key).or_default().push(n.id.clone());
    }
    out
}

/// Keeps ceil(ratio * size) uniformly chosen members of every class
/// (at least one) and the whole identity class.
pub fn prune_level<R: Rng + ?Sized>(
    classes: &BTreeMap<EquivalenceClassKey, Vec<String>>,
    ratio: f64,
    rng: &mut R,
) -> Vec<String> {
    let mut survivors = Vec::new();
    for (key, members) in classes {
        if *key == EquivalenceClassKey::Identity {
            survivors.extend(members.iter().cloned());
            continue;
        }
        let keep = ((ratio * members.len() as f64).ceil() as usize).clamp(1, members.len());
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        survivors.extend(shuffled.into_iter().take(keep));
    }
    survivors.sort();
    survivors
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivationConfig {
    pub variants: VariantConfig,
    pub prune_ratio: f64,
    pub workers: usize,
    pub rng_seed: u64,
}

impl Default for DerivationConfig {
    fn default() -> Self {
        DerivationConfig { variants: VariantConfig::default(), prune_ratio: 0.5, workers: 1, rng_seed: 0 }
    }
}

#[derive(Debug, Error)]
pub enum DerivationError {
    #[error("executor failed at level {level}: {source}")]
    Executor {
        level: usize,
        #[source]
        source: ExecutorError,
        partial: Box<DerivationTree>,
    },
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("cannot assemble: {0}")]
    Assembly(#[from] crate::code::CodeError),
    #[error("cannot write tests: {0}")]
    Io(#[from] std::io::Error),
    #[error("prune ratio must be in (0, 1], got {0}")]
    Ratio(f64),
}

/// Inputs shared by every level of one seed's derivation.
pub struct Deriver<'a> {
    pub seed_name: &'a str,
    pub kb: &'a KnowledgeBase,
    pub table: &'a SimilarityTable,
    pub executor: &'a dyn Executor,
    pub config: &'a DerivationConfig,
    /// Directory the node programs are written to before execution.
    pub tests_dir: &'a Path,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DerivationOutcome {
    pub tree: DerivationTree,
    pub discarded: usize,
    pub warnings: Vec<String>,
}

impl<'a> Deriver<'a> {
    fn rng(&self, tags: &[&str]) -> rand_chacha::ChaCha8Rng {
        let mut all = vec![self.seed_name];
        all.extend_from_slice(tags);
        substream(self.config.rng_seed, &all)
    }

    pub fn test_path(&self, node: &DerivationNode) -> PathBuf {
        self.tests_dir.join(node.file_name())
    }

    /// Runs the root and then every level in seed order.
    pub fn derive(&self, disassembly: &Disassembly) -> Result<DerivationOutcome, DerivationError> {
        if !(self.config.prune_ratio > 0.0 && self.config.prune_ratio <= 1.0) {
            return Err(DerivationError::Ratio(self.config.prune_ratio));
        }
        std::fs::create_dir_all(self.tests_dir)?;
        let mut out = DerivationOutcome::default();
        let root = DerivationNode {
            id: ROOT_ID.to_string(),
            level: 0,
            parent: None,
            template: disassembly.template.clone(),
            inserted_block: None,
            mutation: None,
            assembled: AssembledTest::skeleton(&disassembly.template),
            expected: Expected::Positive,
            observed: None,
            survived: false,
        };
        out.tree.push(root);
        self.execute_pending(&mut out.tree, 0)?;
        let root = &mut out.tree.nodes[0];
        root.survived = root.succeeded() && !disassembly.blocks.is_empty();
        for (i, block) in disassembly.blocks.iter().enumerate() {
            let (discarded, warnings) = self.derive_level(&mut out.tree, i + 1, block)?;
            out.discarded += discarded;
            out.warnings.extend(warnings);
            if i + 1 == disassembly.blocks.len() {
                break;
            }
            self.select_survivors(&mut out.tree, i + 1);
        }
        Ok(out)
    }

    /// Creates the children of every surviving node at `level - 1` and runs
    /// them. Returns discarded variant count and warnings.
    pub fn derive_level(
        &self,
        tree: &mut DerivationTree,
        level: usize,
        block: &CodeBlock,
    ) -> Result<(usize, Vec<String>), DerivationError> {
        let parents: Vec<usize> =
            (0..tree.nodes.len()).filter(|&i| tree.nodes[i].level == level - 1 && tree.nodes[i].survived).collect();
        let mut discarded = 0;
        let mut warnings = Vec::new();
        let mut warned = false;
        let mut new_nodes = Vec::new();
        for p in parents {
            let parent = &tree.nodes[p];
            let mut rng = self.rng(&["variants", &parent.id]);
            let set = generate_block_variants(block, &self.config.variants, self.kb, self.table, &mut rng)?;
            discarded += set.discarded;
            if !warned && !set.warnings.is_empty() {
                warnings.extend(set.warnings.clone());
                warned = true;
            }
            for v in set.variants {
                let (assembled, template) = parent.template.assemble(&v.block)?;
                let mut assembled = assembled;
                assembled.provenance.mutation_id = Some(v.record.id.clone());
                let id = if parent.id == ROOT_ID { v.record.id.clone() } else { format!("{}/{}", parent.id, v.record.id) };
                new_nodes.push(DerivationNode {
                    id,
                    level,
                    parent: Some(parent.id.clone()),
                    template,
                    expected: v.record.expected,
                    inserted_block: Some(v.block),
                    mutation: Some(v.record),
                    assembled,
                    observed: None,
                    survived: false,
                });
            }
        }
        for n in new_nodes {
            tree.push(n);
        }
        self.execute_pending(tree, level)?;
        Ok((discarded, warnings))
    }

    /// Marks the pruned survivors of one level.
    pub fn select_survivors(&self, tree: &mut DerivationTree, level: usize) {
        let eligible: Vec<&DerivationNode> =
            tree.level(level).filter(|n| n.expected == Expected::Positive && n.succeeded()).collect();
        let classes = classify_equivalence(eligible, self.kb);
        let mut rng = self.rng(&["prune", &level.to_string()]);
        let keep = prune_level(&classes, self.config.prune_ratio, &mut rng);
        for id in keep {
            let i = tree.index[&id];
            tree.nodes[i].survived = true;
        }
    }

    /// Writes and executes every node at `level` without an observed state,
    /// fanning out over the worker pool.
    fn execute_pending(&self, tree: &mut DerivationTree, level: usize) -> Result<(), DerivationError> {
        let pending: Vec<usize> =
            (0..tree.nodes.len()).filter(|&i| tree.nodes[i].level == level && tree.nodes[i].observed.is_none()).collect();
        for &i in &pending {
            std::fs::write(self.test_path(&tree.nodes[i]), &tree.nodes[i].assembled.source)?;
        }
        let workers = self.config.workers.max(1).min(self.executor.parallelism()).min(pending.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(usize, Result<ExecutionState, ExecutorError>)>> = Mutex::new(Vec::new());
        let nodes = &tree.nodes;
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    let node = &nodes[i];
                    let r = self.executor.execute(&node.assembled, &self.test_path(node));
                    let failed = r.is_err();
                    results.lock().expect("results").push((i, r));
                    if failed {
                        // Stop handing out work; the campaign aborts.
                        next.store(pending.len(), Ordering::SeqCst);
                        break;
                    }
                });
            }
        });
        let mut results = results.into_inner().expect("results");
        results.sort_by_key(|(i, _)| *i);
        let mut first_error = None;
        for (i, r) in results {
            match r {
                Ok(state) => tree.nodes[i].observed = Some(state),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        match first_error {
            Some(source) => Err(DerivationError::Executor { level, source, partial: Box::new(tree.clone()) }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kb::{ApiSpec, ParameterSpec, ValueRange};
    use crate::literal::ArgValue;

    #[test]
    fn node_count_formula() {
        assert_eq!(expected_node_count(2, 2), 7);
        assert_eq!(expected_node_count(1, 3), 4);
        assert_eq!(expected_node_count(4, 3), 85);
        assert_eq!(expected_node_count(3, 0), 1);
    }

    fn record(op: Operator, api: &str, param: Option<&str>, new: MutValue) -> MutationRecord {
        MutationRecord {
            id: String::new(),
            operator: op,
            api: api.into(),
            target_api: api.into(),
            parameter: param.map(str::to_string),
            old: MutValue::Unset,
            new,
            expected: Expected::Positive,
            derived_from: None,
        }
    }

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        let mut a = ApiSpec::new("m.Drop", "");
        a.parameters = vec![
            ParameterSpec::new("rate", Dtype::Float).with_range(ValueRange::parse("[0, 1]").unwrap().unwrap()),
            ParameterSpec::new("flag", Dtype::Boolean),
            ParameterSpec::new("mode", Dtype::String)
                .with_enum(vec![Literal::Str("a".into()), Literal::Str("b".into())]),
        ];
        kb.insert(a, "m.Drop".into()).unwrap();
        kb
    }

    #[test]
    fn keys_follow_the_rules() {
        let kb = kb();
        let v = |l| MutValue::Value(ArgValue::Lit(l));
        let key = |p: &str, l| equivalence_key(&record(Operator::RandomGeneration, "m.Drop", Some(p), v(l)), &kb);
        assert_eq!(key("rate", Literal::Float(0.3)), key("rate", Literal::Float(0.9)));
        assert!(matches!(key("rate", Literal::Float(0.0)), EquivalenceClassKey::Numeric { range: RangeClass::EqualsBoundary, .. }));
        assert!(matches!(key("rate", Literal::Float(1.5)), EquivalenceClassKey::Numeric { range: RangeClass::IllegalRange, .. }));
        assert_ne!(key("flag", Literal::Bool(true)), key("flag", Literal::Bool(false)));
        assert_ne!(key("mode", Literal::Str("a".into())), key("mode", Literal::Str("b".into())));
        let mut ar = record(Operator::ApiReplacement, "m.Drop", None, MutValue::Api("m.GRU".into()));
        ar.target_api = "m.GRU".into();
        assert_eq!(equivalence_key(&ar, &kb), EquivalenceClassKey::Replacement { api: "m.GRU".into() });
    }

    #[test]
    fn pruning_rounds_up() {
        let mut classes = BTreeMap::new();
        let ids = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        classes.insert(EquivalenceClassKey::Replacement { api: "a".into() }, ids("a", 4));
        classes.insert(EquivalenceClassKey::Replacement { api: "b".into() }, ids("b", 3));
        classes.insert(EquivalenceClassKey::Replacement { api: "c".into() }, ids("c", 1));
        classes.insert(EquivalenceClassKey::Identity, ids("i", 3));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kept = prune_level(&classes, 0.5, &mut rng);
        let count = |p: &str| kept.iter().filter(|k| k.starts_with(p)).count();
        assert_eq!((count("a"), count("b"), count("c"), count("i")), (2, 2, 1, 3));
        assert_eq!(prune_level(&classes, 1.0, &mut rng).len(), 11);
    }
}
