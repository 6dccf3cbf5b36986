//! Campaign configuration and the subcommand pipelines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::{disassemble_seed, verify_incremental_assembly, CodeError, Disassembly, SeedFile, SeedStyle, SlotPart, TemplateItem};
use crate::derivation::{DerivationConfig, DerivationError, DerivationTree, Deriver};
use crate::executor::{ExecutionState, Executor, ExecutorError, ProcessExecutor, RunnerConfig, ScriptedRunner};
use crate::kb::{load_knowledge_base, KbError, KnowledgeBase};
use crate::mutation::VariantConfig;
use crate::oracle::{
    apply_triage, campaign_stats, collect_reports, deduplicate_reports, load_triage, read_reports, render_digest,
    write_reports, BugReport, CampaignStats, OracleError, TriageError,
};
use crate::similarity::{BagOfWords, SimilarityError, SimilarityTable, Vocabulary};

pub const TREE_FILE: &str = "tree.jsonl";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const STATS_FILE: &str = "stats.json";
pub const TRIAGE_FILE: &str = "triage.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<SeedStyle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorWeights {
    /// Probability of trying AR before RG for a positive variant.
    #[serde(default = "default_ar_weight")]
    pub ar_weight: f64,
}

impl Default for OperatorWeights {
    fn default() -> Self {
        OperatorWeights { ar_weight: default_ar_weight() }
    }
}

fn default_ar_weight() -> f64 {
    0.5
}
fn default_times_mt() -> usize {
    4
}
fn default_prune_ratio() -> f64 {
    0.5
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("blockforge-out")
}
fn default_bc_cap() -> usize {
    crate::mutation::DEFAULT_BC_CAP
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub kb_dir: PathBuf,
    #[serde(default = "default_times_mt")]
    pub times_mt: usize,
    #[serde(default = "default_prune_ratio")]
    pub prune_ratio: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_bc_cap")]
    pub bc_cap: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub shared_session: bool,
    /// Table-driven fake runner used instead of `runner`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted_runner: Option<PathBuf>,
    #[serde(default)]
    pub operators: OperatorWeights,
    #[serde(default)]
    pub seeds: Vec<SeedEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runner: Option<RunnerConfig>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            kb_dir: PathBuf::new(),
            times_mt: default_times_mt(),
            prune_ratio: default_prune_ratio(),
            rng_seed: 0,
            out_dir: default_out_dir(),
            bc_cap: default_bc_cap(),
            workers: default_workers(),
            shared_session: false,
            scripted_runner: None,
            operators: OperatorWeights::default(),
            seeds: Vec::new(),
            runner: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("{seed}: {source}")]
    Code { seed: PathBuf, source: CodeError },
    #[error("{seed}: verification failed at step {step} (block {block}): {state}")]
    Verification { seed: PathBuf, step: usize, block: String, state: String },
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error("{seed}: {source}")]
    Derivation { seed: String, source: DerivationError },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Triage(#[from] TriageError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

fn read(path: &Path) -> Result<String, CampaignError> {
    std::fs::read_to_string(path).map_err(|source| CampaignError::Read { path: path.to_path_buf(), source })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Parses a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let mut cfg = Self::from_toml(&read(path)?)
            .map_err(|message| CampaignError::Parse { path: path.to_path_buf(), message })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.kb_dir = resolve(base, &cfg.kb_dir);
        cfg.out_dir = resolve(base, &cfg.out_dir);
        cfg.scripted_runner = cfg.scripted_runner.map(|p| resolve(base, &p));
        for s in &mut cfg.seeds {
            s.path = resolve(base, &s.path);
            s.manifest = s.manifest.as_ref().map(|m| resolve(base, m));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        if self.times_mt < 1 {
            return bad(format!("times_mt must be at least 1, got {}", self.times_mt));
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio <= 1.0) {
            return bad(format!("prune_ratio must be in (0, 1], got {}", self.prune_ratio));
        }
        if !(0.0..=1.0).contains(&self.operators.ar_weight) {
            return bad(format!("ar_weight must be in [0, 1], got {}", self.operators.ar_weight));
        }
        if self.workers < 1 {
            return bad("workers must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds given".into());
        }
        if self.kb_dir.as_os_str().is_empty() {
            return bad("kb_dir is required".into());
        }
        match (&self.runner, &self.scripted_runner) {
            (None, None) => bad("a runner command or a scripted runner is required".into()),
            (Some(r), _) => r.validate().map_err(CampaignError::from),
            _ => Ok(()),
        }
    }

    pub fn derivation(&self) -> DerivationConfig {
        DerivationConfig {
            variants: VariantConfig { times_mt: self.times_mt, ar_weight: self.operators.ar_weight, bc_cap: self.bc_cap },
            prune_ratio: self.prune_ratio,
            workers: self.workers,
            rng_seed: self.rng_seed,
        }
    }
}

fn default_train_samples() -> usize {
    100
}
fn default_epochs() -> usize {
    1
}

/// Runtime inputs for one seed, read by the runner shim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedManifest {
    pub dataset: PathBuf,
    #[serde(default)]
    pub input_shape: Vec<usize>,
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<SeedStyle>,
}

impl SeedManifest {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        toml::from_str(&read(path)?).map_err(|e| CampaignError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: String,
    pub path: PathBuf,
    pub blocks: usize,
    pub nodes: usize,
    pub tests: usize,
    pub avg_wall_time: f64,
    /// Positive nodes off identity branches.
    pub positive_nodes: usize,
    pub discarded_variants: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzStats {
    pub total: CampaignStats,
    pub seeds: Vec<SeedStats>,
}

#[derive(Debug)]
pub struct FuzzOutcome {
    pub trees: Vec<(String, DerivationTree)>,
    pub reports: Vec<BugReport>,
    pub stats: FuzzStats,
}

/// Distinct, filesystem-safe names derived from seed file stems.
fn seed_names(seeds: &[SeedEntry]) -> Vec<String> {
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    seeds
        .iter()
        .map(|s| {
            let stem = s.path.file_stem().map(|x| x.to_string_lossy().to_string()).unwrap_or_else(|| "seed".into());
            let n = used.entry(stem.clone()).or_default();
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}-{n}")
            }
        })
        .collect()
}

fn build_executor(cfg: &CampaignConfig, manifest: Option<&Path>, shared: bool) -> Result<Box<dyn Executor>, CampaignError> {
    if let Some(script) = &cfg.scripted_runner {
        return Ok(Box::new(ScriptedRunner::load(script)?.shared_session(shared)));
    }
    let runner = cfg.runner.clone().ok_or_else(|| CampaignError::Config("no runner configured".into()))?;
    let exec = ProcessExecutor::new(runner, manifest.map(Path::to_path_buf))?;
    Ok(Box::new(if shared { exec.shared_session() } else { exec }))
}

pub fn load_seed(entry: &SeedEntry, kb: &KnowledgeBase) -> Result<(SeedFile, Disassembly), CampaignError> {
    let manifest_style = match &entry.manifest {
        Some(m) => SeedManifest::load(m)?.style,
        None => None,
    };
    let code = |source| CampaignError::Code { seed: entry.path.clone(), source };
    let seed = SeedFile::read(&entry.path, entry.style.or(manifest_style)).map_err(code)?;
    let d = disassemble_seed(&seed, kb).map_err(code)?;
    Ok((seed, d))
}

pub fn similarity_table(kb: &KnowledgeBase) -> Result<SimilarityTable, CampaignError> {
    let embedder = BagOfWords { vocabulary: Vocabulary::from_kb(kb) };
    Ok(SimilarityTable::from_kb(kb, &embedder)?)
}

/// The full pipeline: load, verify, derive, judge, persist.
pub fn cmd_fuzz(cfg: &CampaignConfig) -> Result<FuzzOutcome, CampaignError> {
    cfg.validate()?;
    let kb = load_knowledge_base(&cfg.kb_dir)?;
    let table = similarity_table(&kb)?;
    let dcfg = cfg.derivation();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let names = seed_names(&cfg.seeds);
    let mut trees = Vec::new();
    let mut all_reports = Vec::new();
    let mut seed_stats = Vec::new();
    let mut violations = 0;
    for (entry, name) in cfg.seeds.iter().zip(&names) {
        let (_, d) = load_seed(entry, &kb)?;
        let seed_dir = cfg.out_dir.join(name);
        let verifier = build_executor(cfg, entry.manifest.as_deref(), false)?;
        let report = verify_incremental_assembly(&d.template, &d.blocks, verifier.as_ref(), &seed_dir.join("verify"))?;
        if let Some(step) = report.failed_step() {
            return Err(CampaignError::Verification {
                seed: entry.path.clone(),
                step: step.step,
                block: step.block_id.clone(),
                state: describe(&step.state),
            });
        }
        drop(verifier);
        let executor = build_executor(cfg, entry.manifest.as_deref(), cfg.shared_session)?;
        let deriver = Deriver {
            seed_name: name,
            kb: &kb,
            table: &table,
            executor: executor.as_ref(),
            config: &dcfg,
            tests_dir: &seed_dir.join("tests"),
        };
        let outcome = match deriver.derive(&d) {
            Ok(o) => o,
            Err(DerivationError::Executor { level, source, partial }) => {
                partial.write_jsonl(BufWriter::new(File::create(seed_dir.join(TREE_FILE))?))?;
                return Err(CampaignError::Derivation {
                    seed: name.clone(),
                    source: DerivationError::Executor { level, source, partial },
                });
            }
            Err(source) => return Err(CampaignError::Derivation { seed: name.clone(), source }),
        };
        outcome.tree.write_jsonl(BufWriter::new(File::create(seed_dir.join(TREE_FILE))?))?;
        let reports = collect_reports(&outcome.tree, name, &kb)?;
        violations += reports.len();
        all_reports.extend(reports);
        let per = campaign_stats(std::iter::once(&outcome.tree), 0, &[]);
        seed_stats.push(SeedStats {
            seed: name.clone(),
            path: entry.path.clone(),
            blocks: d.blocks.len(),
            nodes: outcome.tree.nodes.len(),
            tests: per.tests,
            avg_wall_time: per.avg_wall_time,
            positive_nodes: outcome.tree.formula_node_count(),
            discarded_variants: outcome.discarded,
            warnings: outcome.warnings.clone(),
        });
        trees.push((name.clone(), outcome.tree));
    }
    let mut reports = deduplicate_reports(all_reports);
    apply_triage(&mut reports, &load_triage(&cfg.out_dir.join(TRIAGE_FILE))?);
    write_reports(&reports, BufWriter::new(File::create(cfg.out_dir.join(REPORTS_FILE))?))?;
    let total = campaign_stats(trees.iter().map(|(_, t)| t), violations, &reports);
    let stats = FuzzStats { total, seeds: seed_stats };
    std::fs::write(cfg.out_dir.join(STATS_FILE), serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n")?;
    Ok(FuzzOutcome { trees, reports, stats })
}

fn describe(state: &ExecutionState) -> String {
    let mut s = state.kind.to_string();
    if let Some(t) = &state.exception_type {
        s.push_str(&format!(" {t}"));
    }
    if let Some(m) = &state.message {
        s.push_str(&format!(": {m}"));
    }
    s
}

/// The template with slot markers followed by every block.
pub fn cmd_disassemble(seed: &SeedEntry, kb_dir: &Path) -> Result<String, CampaignError> {
    let kb = load_knowledge_base(kb_dir)?;
    let (_, d) = load_seed(seed, &kb)?;
    let mut out = String::from("# template\n");
    for item in &d.template.items {
        match item {
            TemplateItem::Text(t) => out.push_str(&format!("{t}\n")),
            TemplateItem::Slot { slot, part } => {
                let part = match part {
                    SlotPart::Def => "def",
                    SlotPart::Use => "use",
                };
                out.push_str(&format!("<<slot {} {part}>>\n", slot + 1));
            }
        }
    }
    out.push_str(&format!("\n# blocks: {}\n", d.blocks.len()));
    for b in &d.blocks {
        out.push_str(&format!("\n[{}] slot {} {}", b.id, b.slot + 1, b.api));
        if let Some(v) = &b.bound_variable {
            out.push_str(&format!(" as {v}"));
        }
        out.push('\n');
        for part in [SlotPart::Def, SlotPart::Use] {
            let lines = b.render_part(part);
            if lines.is_empty() {
                continue;
            }
            let label = if part == SlotPart::Def { "def" } else { "use" };
            for l in lines {
                out.push_str(&format!("  {label}: {l}\n"));
            }
        }
        out.push_str(&format!("  call: {}\n", b.call().render()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SimilarityEntry {
    #[serde(rename = "Similarity")]
    similarity: IndexMap<String, f64>,
}

/// Ranked candidates as YAML `Similarity:` maps, for one API or all.
pub fn cmd_similarity(kb_dir: &Path, api: Option<&str>, top: Option<usize>) -> Result<String, CampaignError> {
    let kb = load_knowledge_base(kb_dir)?;
    let table = similarity_table(&kb)?;
    let names: Vec<String> = match api {
        Some(a) if kb.contains(a) => vec![a.to_string()],
        Some(a) => return Err(SimilarityError::UnknownApi(a.to_string()).into()),
        None => kb.names().map(str::to_string).collect(),
    };
    let mut doc: IndexMap<String, SimilarityEntry> = IndexMap::new();
    for n in names {
        let similarity = table
            .candidates(&n)
            .iter()
            .take(top.unwrap_or(usize::MAX))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        doc.insert(n, SimilarityEntry { similarity });
    }
    Ok(serde_yaml::to_string(&doc).expect("similarity serialize"))
}

/// Digest of a finished campaign with current triage labels applied.
pub fn cmd_report(out_dir: &Path, triage: Option<&Path>) -> Result<(String, CampaignStats), CampaignError> {
    let path = out_dir.join(REPORTS_FILE);
    let mut reports =
        read_reports(&read(&path)?).map_err(|e| CampaignError::Parse { path: path.clone(), message: e.to_string() })?;
    let triage_path = triage.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join(TRIAGE_FILE));
    apply_triage(&mut reports, &load_triage(&triage_path)?);
    let stats_path = out_dir.join(STATS_FILE);
    let previous: Option<FuzzStats> = match std::fs::read_to_string(&stats_path) {
        Ok(t) => Some(
            serde_json::from_str(&t).map_err(|e| CampaignError::Parse { path: stats_path, message: e.to_string() })?,
        ),
        Err(_) => None,
    };
    let mut stats = campaign_stats(std::iter::empty(), reports.len(), &reports);
    if let Some(p) = previous {
        stats.tests = p.total.tests;
        stats.avg_wall_time = p.total.avg_wall_time;
        stats.violations = p.total.violations;
    }
    Ok((render_digest(&reports, Some(&stats)), stats))
}
