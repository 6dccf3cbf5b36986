//! Seed programs, their construction style and import aliases.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CodeError;
use crate::kb::KnowledgeBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedStyle {
    /// Layers are constructed by calls in program order.
    Sequential,
    /// Layers are defined in a constructor and wired up in another method.
    ClassBased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFile {
    pub path: PathBuf,
    pub lines: Vec<String>,
    pub style: SeedStyle,
    /// Whether the source ended with a newline.
    pub trailing_newline: bool,
}

impl SeedFile {
    /// Parses seed text; the style is detected unless given.
    pub fn parse(path: impl Into<PathBuf>, text: &str, style: Option<SeedStyle>) -> Result<SeedFile, CodeError> {
        let path = path.into();
        if text.trim().is_empty() {
            return Err(CodeError::EmptySeed(path));
        }
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        let style = style.unwrap_or_else(|| detect_style(&lines));
        Ok(SeedFile { path, lines, style, trailing_newline: text.ends_with('\n') })
    }

    pub fn read(path: &Path, style: Option<SeedStyle>) -> Result<SeedFile, CodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| CodeError::Io(path.to_path_buf(), e.to_string()))?;
        Self::parse(path, &text, style)
    }

    pub fn imports(&self) -> ImportMap {
        ImportMap::from_lines(&self.lines)
    }
}

/// Class-based when some class defines `__init__` that assigns a call to a
/// `self.` attribute.
fn detect_style(lines: &[String]) -> SeedStyle {
    let class_re = Regex::new(r"^\s*class\s+\w+").expect("valid regex");
    let init_re = Regex::new(r"^\s*def\s+__init__\s*\(").expect("valid regex");
    let assign_re = Regex::new(r"^\s*self\.\w+\s*=\s*[\w.]+\s*\(").expect("valid regex");
    let has_class = lines.iter().any(|l| class_re.is_match(l));
    let has_init = lines.iter().any(|l| init_re.is_match(l));
    let has_assign = lines.iter().any(|l| assign_re.is_match(l));
    if has_class && has_init && has_assign {
        SeedStyle::ClassBased
    } else {
        SeedStyle::Sequential
    }
}

/// Local name to fully qualified module path, from the seed's imports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportMap {
    aliases: BTreeMap<String, String>,
}

impl ImportMap {
    pub fn from_lines(lines: &[String]) -> ImportMap {
        let import_re = Regex::new(r"^\s*import\s+(.+)$").expect("valid regex");
        let from_re = Regex::new(r"^\s*from\s+([\w.]+)\s+import\s+\(?([^)#]+)\)?").expect("valid regex");
        let mut aliases = BTreeMap::new();
        for line in lines {
            let line = match crate::literal::comment_start(line) {
                Some(i) => &line[..i],
                None => line.as_str(),
            };
            if let Some(c) = from_re.captures(line) {
                let module = &c[1];
                for item in c[2].split(',') {
                    let (name, alias) = split_alias(item);
                    if !name.is_empty() && name != "*" {
                        aliases.insert(alias.to_string(), format!("{module}.{name}"));
                    }
                }
            } else if let Some(c) = import_re.captures(line) {
                for item in c[1].split(',') {
                    let (name, alias) = split_alias(item);
                    if name.is_empty() {
                        continue;
                    }
                    if alias != name {
                        aliases.insert(alias.to_string(), name.to_string());
                    } else {
                        // `import a.b` binds `a`.
                        let head = name.split('.').next().unwrap_or(name);
                        aliases.entry(head.to_string()).or_insert_with(|| head.to_string());
                    }
                }
            }
        }
        ImportMap { aliases }
    }

    /// Replaces the first segment of a dotted name by what it was imported as.
    pub fn expand(&self, name: &str) -> String {
        let (head, rest) = match name.split_once('.') {
            Some((h, r)) => (h, Some(r)),
            None => (name, None),
        };
        match (self.aliases.get(head), rest) {
            (Some(full), Some(r)) => format!("{full}.{r}"),
            (Some(full), None) => full.clone(),
            (None, _) => name.to_string(),
        }
    }
}

fn split_alias(item: &str) -> (&str, &str) {
    let item = item.trim();
    match item.split_once(" as ") {
        Some((n, a)) => (n.trim(), a.trim()),
        None => (item, item),
    }
}

fn is_segment_suffix(suffix: &str, name: &str) -> bool {
    name == suffix || name.ends_with(&format!(".{suffix}"))
}

/// Maps callees in one seed to knowledge-base API names.
pub struct ApiResolver<'a> {
    kb: &'a KnowledgeBase,
    imports: ImportMap,
}

impl<'a> ApiResolver<'a> {
    pub fn new(kb: &'a KnowledgeBase, imports: ImportMap) -> Self {
        ApiResolver { kb, imports }
    }

    pub fn expand(&self, callee: &str) -> String {
        self.imports.expand(callee)
    }

    /// Best-matching KB API for a callee. Exact matches after alias
    /// expansion rank highest, then exact raw matches, then matches on a
    /// trailing run of dotted segments.
    pub fn resolve(&self, callee: &str) -> Result<Option<&'a str>, Vec<String>> {
        let expanded = self.imports.expand(callee);
        let raw_segments = callee.split('.').count();
        let mut best: Vec<&'a str> = Vec::new();
        let mut best_score = 0;
        for name in self.kb.names() {
            let kb_expanded = self.imports.expand(name);
            let score = if kb_expanded == expanded {
                3
            } else if name == callee {
                2
            } else {
                let tail = name.split_once('.').map(|(_, t)| t);
                let tail_hit = tail.map(|t| t.contains('.') && is_segment_suffix(t, &expanded)).unwrap_or(false);
                let raw_hit = raw_segments >= 2 && is_segment_suffix(callee, name);
                let expanded_hit = expanded.split('.').count() >= 2 && is_segment_suffix(&expanded, name);
                if tail_hit || raw_hit || expanded_hit {
                    1
                } else {
                    0
                }
            };
            if score == 0 || score < best_score {
                continue;
            }
            if score > best_score {
                best.clear();
                best_score = score;
            }
            best.push(name);
        }
        match best.len() {
            0 => Ok(None),
            1 => Ok(Some(best[0])),
            _ => Err(best.into_iter().map(str::to_string).collect()),
        }
    }

    /// The module part of a callee after alias expansion.
    pub fn module_of(&self, callee: &str) -> String {
        let e = self.imports.expand(callee);
        e.rsplit_once('.').map(|(m, _)| m.to_string()).unwrap_or_default()
    }
}
