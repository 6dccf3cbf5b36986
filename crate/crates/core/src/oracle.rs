//! Execution-state-consistency oracle, candidate bug typing, report
//! deduplication and campaign statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivation::{DerivationNode, DerivationTree};
use crate::executor::{ExecutionState, StateKind};
use crate::kb::KnowledgeBase;
use crate::literal::ArgValue;
use crate::mutation::{literal_bindings, satisfies_constraints, Expected, MutValue, MutationRecord, Operator};

/// Characters of normalized message compared by the dedup key.
pub const DEDUP_PREFIX: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CandidateType {
    ICBug,
    PerBug,
    BouBug,
    ImpBug,
    Unclassified,
}

impl CandidateType {
    pub const ALL: [CandidateType; 5] =
        [CandidateType::BouBug, CandidateType::ImpBug, CandidateType::ICBug, CandidateType::PerBug, CandidateType::Unclassified];

    pub fn as_str(self) -> &'static str {
        match self {
            CandidateType::ICBug => "ICBug",
            CandidateType::PerBug => "PerBug",
            CandidateType::BouBug => "BouBug",
            CandidateType::ImpBug => "ImpBug",
            CandidateType::Unclassified => "Unclassified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriageLabel {
    TrainingConfiguration,
    SyntaxError,
    SemanticError,
    LackOfResources,
    ConfirmedBug,
}

/// Where the violation lives in the generated program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    /// 1-based line of the inserted call.
    pub line: usize,
    pub code: String,
    pub parameter: Option<String>,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DedupKey {
    pub api: String,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub node_id: String,
    pub seed: String,
    pub api: String,
    pub mutation: MutationRecord,
    pub expected_state: Expected,
    pub observed: ExecutionState,
    pub trigger: Trigger,
    /// Every argument of the inserted call is allowed by the documentation.
    pub documented_legal: bool,
    pub candidate_type: CandidateType,
    #[serde(default)]
    pub triage: Option<TriageLabel>,
    pub dedup_key: DedupKey,
    /// Node ids merged into this report, itself included.
    pub members: Vec<String>,
}

impl BugReport {
    pub fn occurrences(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("node {0} has not been executed")]
    NotExecuted(String),
    #[error("parent of node {0} has no observed state")]
    ParentMissing(String),
}

/// Lowercased, digits and file paths removed, whitespace collapsed, cut to
/// [`DEDUP_PREFIX`] characters.
pub fn normalize_message(message: &str) -> String {
    static PATH: OnceLock<Regex> = OnceLock::new();
    let path = PATH.get_or_init(|| Regex::new(r#"(?:[A-Za-z]:)?(?:[\w.\-~]*[/\\])+[\w.\-]*"#).expect("path pattern"));
    let lower = message.to_lowercase();
    let no_paths = path.replace_all(&lower, "");
    let no_digits: String = no_paths.chars().filter(|c| !c.is_ascii_digit()).collect();
    let collapsed = no_digits.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.chars().take(DEDUP_PREFIX).collect()
}

pub fn dedup_key(api: &str, observed: &ExecutionState) -> DedupKey {
    DedupKey {
        api: api.to_string(),
        error: observed.exception_type.clone().unwrap_or_else(|| observed.kind.to_string()),
        message: normalize_message(observed.message.as_deref().unwrap_or("")),
    }
}

fn documented_legal(node: &DerivationNode, record: &MutationRecord, kb: &KnowledgeBase) -> bool {
    let (Some(block), Some(api)) = (&node.inserted_block, kb.get(&record.target_api)) else {
        return false;
    };
    let call = block.call();
    let bindings = literal_bindings(call, api);
    let args_ok = call.bound_arguments(api).into_iter().all(|(name, value)| {
        let Some(name) = name else { return false };
        match (api.parameter(name), value) {
            (Some(p), ArgValue::Lit(l)) => p.admits(l),
            (Some(_), ArgValue::Expr(_)) => true,
            (None, _) => false,
        }
    });
    args_ok && satisfies_constraints(api, &bindings)
}

/// Applies S(b) ⇒ S(A(t, b)) to one executed node whose parent succeeded.
/// The root has no inserted block and is never reported.
pub fn check_state_consistency(
    tree: &DerivationTree,
    node: &DerivationNode,
    seed: &str,
    kb: &KnowledgeBase,
) -> Result<Option<BugReport>, OracleError> {
    let Some(parent_id) = &node.parent else { return Ok(None) };
    let observed = node.observed.as_ref().ok_or_else(|| OracleError::NotExecuted(node.id.clone()))?;
    let parent = tree.get(parent_id).and_then(|p| p.observed.as_ref());
    if parent.is_none() {
        return Err(OracleError::ParentMissing(node.id.clone()));
    }
    let consistent = match node.expected {
        Expected::Positive => observed.succeeded(),
        Expected::Negative => !observed.succeeded(),
    };
    let Some(record) = node.mutation.clone().filter(|_| !consistent) else { return Ok(None) };
    let line = node.assembled.inserted_line.unwrap_or(0);
    let code = node.assembled.source.lines().nth(line.saturating_sub(1)).unwrap_or("").trim().to_string();
    let value = match (&record.new, record.operator) {
        (MutValue::Unset, Operator::Identity) => record.target_api.clone(),
        (v, _) => v.to_string(),
    };
    let documented_legal = documented_legal(node, &record, kb);
    let mut report = BugReport {
        node_id: node.id.clone(),
        seed: seed.to_string(),
        api: record.target_api.clone(),
        expected_state: node.expected,
        observed: observed.clone(),
        trigger: Trigger { line, code, parameter: record.parameter.clone(), value },
        documented_legal,
        candidate_type: CandidateType::Unclassified,
        triage: None,
        dedup_key: dedup_key(&record.target_api, observed),
        members: vec![node.id.clone()],
        mutation: record,
    };
    report.candidate_type = classify_candidate(&report);
    Ok(Some(report))
}

/// Rule-based suggestion; the final type is a human decision.
pub fn classify_candidate(report: &BugReport) -> CandidateType {
    let kind = report.observed.kind;
    match report.expected_state {
        Expected::Negative if kind == StateKind::Success => CandidateType::BouBug,
        _ if kind == StateKind::ResourceExhausted => CandidateType::PerBug,
        Expected::Positive if kind == StateKind::Crash => CandidateType::ImpBug,
        Expected::Positive if kind == StateKind::Exception && report.documented_legal => CandidateType::ICBug,
        _ => CandidateType::Unclassified,
    }
}

/// Runs the oracle over every executed non-root node of a tree.
pub fn collect_reports(tree: &DerivationTree, seed: &str, kb: &KnowledgeBase) -> Result<Vec<BugReport>, OracleError> {
    let mut out = Vec::new();
    for node in tree.nodes.iter().filter(|n| n.parent.is_some() && n.observed.is_some()) {
        if let Some(r) = check_state_consistency(tree, node, seed, kb)? {
            out.push(r);
        }
    }
    Ok(out)
}

/// One representative per dedup key, first occurrence wins; member lists
/// are merged so applying this twice changes nothing.
pub fn deduplicate_reports(reports: Vec<BugReport>) -> Vec<BugReport> {
    let mut order: Vec<DedupKey> = Vec::new();
    let mut groups: BTreeMap<DedupKey, BugReport> = BTreeMap::new();
    for r in reports {
        match groups.get_mut(&r.dedup_key) {
            Some(rep) => {
                for m in r.members {
                    if !rep.members.contains(&m) {
                        rep.members.push(m);
                    }
                }
                if rep.triage.is_none() {
                    rep.triage = r.triage;
                }
            }
            None => {
                order.push(r.dedup_key.clone());
                groups.insert(r.dedup_key.clone(), r);
            }
        }
    }
    order.into_iter().map(|k| groups.remove(&k).expect("grouped")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageEntry {
    pub node_id: String,
    pub triage_label: TriageLabel,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("cannot read triage file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
}

/// Reads a triage sidecar; a missing file means no labels yet.
pub fn load_triage(path: &Path) -> Result<Vec<TriageEntry>, TriageError> {
    let io = |source| TriageError::Io { path: path.display().to_string(), source };
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(e)),
    };
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|source| TriageError::Parse { path: path.display().to_string(), line: i + 1, source })?;
        out.push(entry);
    }
    Ok(out)
}

/// Attaches labels to reports whose node, or any merged member, is labelled.
pub fn apply_triage(reports: &mut [BugReport], entries: &[TriageEntry]) {
    let labels: BTreeMap<&str, TriageLabel> = entries.iter().map(|e| (e.node_id.as_str(), e.triage_label)).collect();
    for r in reports {
        r.triage = std::iter::once(&r.node_id)
            .chain(r.members.iter())
            .find_map(|m| labels.get(m.as_str()).copied())
            .or(r.triage);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    /// Executed programs.
    pub tests: usize,
    /// Mean wall time per executed program, seconds.
    pub avg_wall_time: f64,
    /// All oracle violations before deduplication.
    pub violations: usize,
    pub reports: usize,
    pub by_type: BTreeMap<String, usize>,
    pub triaged: usize,
    /// Confirmed reports over all reports; absent until something is triaged.
    pub precision: Option<f64>,
}

pub fn campaign_stats<'a, I>(trees: I, violations: usize, reports: &[BugReport]) -> CampaignStats
where
    I: IntoIterator<Item = &'a DerivationTree>,
{
    let mut tests = 0;
    let mut wall = 0.0;
    for tree in trees {
        for state in tree.nodes.iter().filter_map(|n| n.observed.as_ref()) {
            tests += 1;
            wall += state.wall_time;
        }
    }
    let mut by_type: BTreeMap<String, usize> = CandidateType::ALL.iter().map(|t| (t.as_str().to_string(), 0)).collect();
    for r in reports {
        *by_type.entry(r.candidate_type.as_str().to_string()).or_default() += 1;
    }
    let triaged = reports.iter().filter(|r| r.triage.is_some()).count();
    let confirmed = reports.iter().filter(|r| r.triage == Some(TriageLabel::ConfirmedBug)).count();
    CampaignStats {
        tests,
        avg_wall_time: if tests == 0 { 0.0 } else { wall / tests as f64 },
        violations,
        reports: reports.len(),
        by_type,
        triaged,
        precision: (triaged > 0 && !reports.is_empty()).then(|| confirmed as f64 / reports.len() as f64),
    }
}

pub fn write_reports<W: Write>(reports: &[BugReport], mut w: W) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_reports(text: &str) -> Result<Vec<BugReport>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Human-readable digest grouped by candidate type.
pub fn render_digest(reports: &[BugReport], stats: Option<&CampaignStats>) -> String {
    let mut out = String::new();
    if let Some(s) = stats {
        out.push_str(&format!(
            "tests: {}  avg wall: {:.3}s  violations: {}  reports: {}\n",
            s.tests, s.avg_wall_time, s.violations, s.reports
        ));
        match s.precision {
            Some(p) => out.push_str(&format!("precision: {p:.3} ({} triaged)\n", s.triaged)),
            None => out.push_str("precision: unavailable (no triage labels)\n"),
        }
    }
    let types: BTreeSet<CandidateType> = reports.iter().map(|r| r.candidate_type).collect();
    for t in CandidateType::ALL.iter().filter(|t| types.contains(t)) {
        out.push_str(&format!("\n== {} ==\n", t.as_str()));
        for r in reports.iter().filter(|r| r.candidate_type == *t) {
            let triage = r.triage.map(|l| format!(" [{}]", serde_json::to_value(l).unwrap().as_str().unwrap_or(""))).unwrap_or_default();
            out.push_str(&format!(
                "{} ({}x) {} {} at {}:{}{}\n    {}\n    expected {:?}, observed {}",
                r.api,
                r.occurrences(),
                r.mutation.operator,
                r.trigger.parameter.as_deref().map(|p| format!("{p}={}", r.trigger.value)).unwrap_or_else(|| r.trigger.value.clone()),
                r.seed,
                r.trigger.line,
                triage,
                r.trigger.code,
                r.expected_state,
                r.observed.kind,
            ));
            if let Some(ty) = &r.observed.exception_type {
                out.push_str(&format!(" {ty}"));
            }
            if let Some(m) = r.observed.message.as_deref().filter(|m| !m.is_empty()) {
                out.push_str(&format!(": {m}"));
            }
            out.push('\n');
        }
    }
    out
}
