//! Splitting a seed into an initial template and hidden-layer code blocks.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;

use super::call::{find_calls, CallSite};
use super::seed::{ApiResolver, SeedFile, SeedStyle};
use super::template::{BlockLine, CallLine, CodeBlock, LineContent, SlotPart, Template, TemplateItem};
use super::CodeError;
use crate::kb::KnowledgeBase;
use crate::literal::comment_start;

#[derive(Debug, Clone, PartialEq)]
pub struct Disassembly {
    pub template: Template,
    pub blocks: Vec<CodeBlock>,
}

/// First line of the training part of a sequential seed.
const TRAINING_START: &str = r"\.(compile|fit|fit_generator|train_on_batch)\s*\(|\boptimizer\b|\bloss(_fn)?\s*=|\bfor\s+\w+\s+in\s+.*epoch|\.backward\s*\(|^\s*def\s+train\b";

const MARKER: &str = r"#\s*blockforge:\s*(block-begin|block-end|slot)\b";

/// Physical lines `start..end` forming one statement, with the text used to
/// look for calls.
#[derive(Debug, Clone)]
struct Logical {
    start: usize,
    end: usize,
    scan: String,
}

impl Logical {
    fn raw(&self, lines: &[String]) -> String {
        lines[self.start..self.end].join("\n")
    }
}

/// Net bracket depth change of a line, ignoring strings and comments.
fn depth_delta(line: &str) -> i32 {
    let code = &line[..comment_start(line).unwrap_or(line.len())];
    let mut depth = 0;
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for b in code.bytes() {
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
            _ => {}
        }
    }
    depth
}

/// Groups the lines from `start` into the statement beginning there.
fn logical_at(lines: &[String], start: usize) -> Logical {
    let mut depth = depth_delta(&lines[start]);
    let mut end = start + 1;
    while depth > 0 && end < lines.len() {
        depth += depth_delta(&lines[end]);
        end += 1;
    }
    let mut scan = String::new();
    for (i, line) in lines[start..end].iter().enumerate() {
        if i > 0 {
            scan.push('\n');
        }
        if start + i + 1 < end {
            scan.push_str(&line[..comment_start(line).unwrap_or(line.len())]);
        } else {
            scan.push_str(line);
        }
    }
    Logical { start, end, scan }
}

fn is_code(line: &str) -> bool {
    let t = line.trim_start();
    !(t.is_empty() || t.starts_with('#') || t.starts_with("import ") || t.starts_with("from "))
}

/// A statement holding a knowledge-base call.
#[derive(Debug, Clone)]
struct LayerLine {
    logical: Logical,
    site: CallSite,
    api: String,
}

impl LayerLine {
    fn call_line(&self, lines: &[String]) -> CallLine {
        CallLine {
            raw: self.logical.raw(lines),
            prefix: self.logical.scan[..self.site.start].to_string(),
            call: self.site.call.clone(),
            suffix: self.logical.scan[self.site.end..].to_string(),
            pristine: true,
        }
    }

    fn bound_variable(&self) -> Option<String> {
        let re = Regex::new(r"^\s*([A-Za-z_][\w.]*)\s*=\s*").expect("valid regex");
        let prefix = &self.logical.scan[..self.site.start];
        re.captures(prefix).filter(|c| c[0].len() == prefix.len()).map(|c| c[1].to_string())
    }
}

struct Scanner<'a> {
    lines: &'a [String],
    resolver: ApiResolver<'a>,
}

impl<'a> Scanner<'a> {
    /// The leftmost knowledge-base call of the statement at `start`.
    fn layer_at(&self, start: usize) -> Result<(Logical, Option<LayerLine>), CodeError> {
        let logical = logical_at(self.lines, start);
        for site in find_calls(&logical.scan) {
            match self.resolver.resolve(&site.call.callee) {
                Ok(Some(api)) => {
                    let api = api.to_string();
                    return Ok((logical.clone(), Some(LayerLine { logical, site, api })));
                }
                Ok(None) => {}
                Err(candidates) => {
                    return Err(CodeError::AmbiguousApi { line: start + 1, callee: site.call.callee, candidates })
                }
            }
        }
        Ok((logical, None))
    }

    /// Scans statements in `range`, returning layer lines and statements
    /// without a knowledge-base call.
    fn scan(&self, range: std::ops::Range<usize>) -> Result<(Vec<LayerLine>, Vec<Logical>), CodeError> {
        let mut layers = Vec::new();
        let mut others = Vec::new();
        let mut i = range.start;
        while i < range.end {
            if !is_code(&self.lines[i]) {
                i += 1;
                continue;
            }
            let (logical, layer) = self.layer_at(i)?;
            i = logical.end;
            match layer {
                Some(l) => layers.push(l),
                None => others.push(logical),
            }
        }
        Ok((layers, others))
    }

    /// Fails on constructor-looking calls into a module that provides known
    /// layers but that are missing from the knowledge base.
    fn check_unknown(&self, layers: &[LayerLine], others: &[Logical]) -> Result<(), CodeError> {
        let modules: BTreeSet<String> = layers.iter().map(|l| self.resolver.module_of(&l.site.call.callee)).collect();
        for stmt in others {
            for site in find_calls(&stmt.scan) {
                let callee = &site.call.callee;
                let last = callee.rsplit('.').next().unwrap_or(callee);
                let constructor = last.starts_with(|c: char| c.is_ascii_uppercase());
                if constructor && callee.contains('.') && modules.contains(&self.resolver.module_of(callee)) {
                    let line = stmt.start + 1 + stmt.scan[..site.start].matches('\n').count();
                    return Err(CodeError::UnknownApi { line, callee: callee.clone() });
                }
            }
        }
        Ok(())
    }
}

pub fn disassemble_seed(seed: &SeedFile, kb: &KnowledgeBase) -> Result<Disassembly, CodeError> {
    let scanner = Scanner { lines: &seed.lines, resolver: ApiResolver::new(kb, seed.imports()) };
    let marker = Regex::new(MARKER).expect("valid regex");
    if seed.lines.iter().any(|l| marker.is_match(l)) {
        return disassemble_marked(seed, &scanner, &marker);
    }
    match seed.style {
        SeedStyle::Sequential => disassemble_sequential(seed, &scanner),
        SeedStyle::ClassBased => disassemble_class_based(seed, &scanner),
    }
}

fn single_part_block(id: usize, layer: &LayerLine, extra: Vec<(usize, BlockLine)>, lines: &[String]) -> CodeBlock {
    let mut body: Vec<(usize, BlockLine)> = extra;
    body.push((
        layer.logical.start,
        BlockLine { part: SlotPart::Def, content: LineContent::Call(layer.call_line(lines)) },
    ));
    body.sort_by_key(|(i, _)| *i);
    CodeBlock {
        id: format!("b{}", id + 1),
        slot: id,
        api: layer.api.clone(),
        lines: body.into_iter().map(|(_, l)| l).collect(),
        bound_variable: layer.bound_variable(),
    }
}

/// Builds the template: `owner[i]` names the (slot, part) for physical line
/// `i`; only the first line of each run emits the slot.
fn build_template(seed: &SeedFile, owner: &BTreeMap<usize, (usize, SlotPart)>, slots: usize) -> Template {
    let mut items = Vec::new();
    let mut last: Option<(usize, SlotPart)> = None;
    for (i, line) in seed.lines.iter().enumerate() {
        match owner.get(&i) {
            Some(&o) => {
                if last != Some(o) {
                    items.push(TemplateItem::Slot { slot: o.0, part: o.1 });
                }
                last = Some(o);
            }
            None => {
                items.push(TemplateItem::Text(line.clone()));
                last = None;
            }
        }
    }
    Template::new(items, slots, seed.trailing_newline)
}

fn disassemble_sequential(seed: &SeedFile, scanner: &Scanner<'_>) -> Result<Disassembly, CodeError> {
    let training = Regex::new(TRAINING_START).expect("valid regex");
    let region_end = seed.lines.iter().position(|l| training.is_match(l)).unwrap_or(seed.lines.len());
    let (layers, others) = scanner.scan(0..region_end)?;
    scanner.check_unknown(&layers, &others)?;
    if layers.len() < 3 {
        return Err(CodeError::NoBlocks { layers: layers.len() });
    }
    let hidden = &layers[1..layers.len() - 1];
    let mut owner = BTreeMap::new();
    let mut blocks = Vec::new();
    for (k, layer) in hidden.iter().enumerate() {
        for i in layer.logical.start..layer.logical.end {
            owner.insert(i, (k, SlotPart::Def));
        }
        blocks.push(single_part_block(k, layer, Vec::new(), &seed.lines));
    }
    Ok(Disassembly { template: build_template(seed, &owner, blocks.len()), blocks })
}

/// Line ranges of every `__init__` body.
fn init_bodies(lines: &[String]) -> Vec<std::ops::Range<usize>> {
    let init = Regex::new(r"^(\s*)def\s+__init__\s*\(").expect("valid regex");
    let indent = |l: &str| l.len() - l.trim_start().len();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if let Some(c) = init.captures(line) {
            let base = c[1].len();
            let mut end = i + 1;
            while end < lines.len() && (lines[end].trim().is_empty() || indent(&lines[end]) > base) {
                end += 1;
            }
            out.push(i + 1..end);
        }
    }
    out
}

/// Layer definition site and its single use site (0-based lines).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerMapping {
    pub definition: usize,
    pub use_site: usize,
}

fn attribute_target(prefix: &str) -> Option<String> {
    let re = Regex::new(r"^\s*self\.(\w+)\s*=\s*$").expect("valid regex");
    re.captures(prefix).map(|c| c[1].to_string())
}

/// Use sites of `self.<ident>` outside constructor bodies, as 0-based lines
/// (one entry per occurrence).
fn use_sites(lines: &[String], ident: &str, excluded: &[std::ops::Range<usize>]) -> Vec<usize> {
    let re = Regex::new(&format!(r"\bself\.{}\b", regex::escape(ident))).expect("valid regex");
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if excluded.iter().any(|r| r.contains(&i)) {
            continue;
        }
        let code = &line[..comment_start(line).unwrap_or(line.len())];
        for m in re.find_iter(code) {
            let after = code[m.end()..].trim_start();
            let assignment = after.starts_with('=') && !after.starts_with("==");
            if !assignment {
                out.push(i);
            }
        }
    }
    out
}

fn pair_definitions(
    lines: &[String],
    defs: Vec<(String, usize)>,
    bodies: &[std::ops::Range<usize>],
) -> Result<BTreeMap<String, LayerMapping>, CodeError> {
    let mut out = BTreeMap::new();
    for (ident, def_line) in defs {
        let uses = use_sites(lines, &ident, bodies);
        match uses.as_slice() {
            [] => return Err(CodeError::NeverUsed { identifier: ident, line: def_line + 1 }),
            [u] => {
                out.insert(ident, LayerMapping { definition: def_line, use_site: *u });
            }
            many => {
                return Err(CodeError::MultipleUses { identifier: ident, lines: many.iter().map(|u| u + 1).collect() })
            }
        }
    }
    Ok(out)
}

/// Pairs every layer attribute assigned by a call in a constructor with its
/// single use site in the other methods.
pub fn map_class_style_layers(seed: &SeedFile) -> Result<BTreeMap<String, LayerMapping>, CodeError> {
    let bodies = init_bodies(&seed.lines);
    let mut defs = Vec::new();
    for body in &bodies {
        for i in body.clone() {
            let logical = logical_at(&seed.lines, i);
            if let Some(site) = find_calls(&logical.scan).into_iter().next() {
                if let Some(ident) = attribute_target(&logical.scan[..site.start]) {
                    defs.push((ident, i));
                }
            }
        }
    }
    pair_definitions(&seed.lines, defs, &bodies)
}

fn disassemble_class_based(seed: &SeedFile, scanner: &Scanner<'_>) -> Result<Disassembly, CodeError> {
    let bodies = init_bodies(&seed.lines);
    let mut layers: BTreeMap<String, LayerLine> = BTreeMap::new();
    let mut defs = Vec::new();
    for body in &bodies {
        let (found, others) = scanner.scan(body.clone())?;
        let others: Vec<Logical> = others
            .into_iter()
            .filter(|o| find_calls(&o.scan).first().map(|s| attribute_target(&o.scan[..s.start]).is_some()).unwrap_or(false))
            .collect();
        scanner.check_unknown(&found, &others)?;
        for layer in found {
            if let Some(ident) = attribute_target(&layer.logical.scan[..layer.site.start]) {
                defs.push((ident.clone(), layer.logical.start));
                layers.insert(ident, layer);
            }
        }
    }
    let mapping = pair_definitions(&seed.lines, defs, &bodies)?;
    let mut by_use: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (ident, m) in &mapping {
        by_use.entry(m.use_site).or_default().push(ident);
    }
    if let Some((line, idents)) = by_use.iter().find(|(_, v)| v.len() > 1) {
        return Err(CodeError::SharedUseSite {
            line: line + 1,
            identifiers: idents.iter().map(|s| s.to_string()).collect(),
        });
    }
    let ordered: Vec<&str> = by_use.values().map(|v| v[0]).collect();
    if ordered.len() < 3 {
        return Err(CodeError::NoBlocks { layers: ordered.len() });
    }
    let mut owner = BTreeMap::new();
    let mut blocks = Vec::new();
    for (k, ident) in ordered[1..ordered.len() - 1].iter().enumerate() {
        let layer = &layers[*ident];
        let use_line = mapping[*ident].use_site;
        for i in layer.logical.start..layer.logical.end {
            owner.insert(i, (k, SlotPart::Def));
        }
        owner.insert(use_line, (k, SlotPart::Use));
        let use_text = BlockLine { part: SlotPart::Use, content: LineContent::Text(seed.lines[use_line].clone()) };
        let mut block = single_part_block(k, layer, vec![(use_line, use_text)], &seed.lines);
        block.bound_variable = Some(format!("self.{ident}"));
        blocks.push(block);
    }
    Ok(Disassembly { template: build_template(seed, &owner, blocks.len()), blocks })
}

fn disassemble_marked(seed: &SeedFile, scanner: &Scanner<'_>, marker: &Regex) -> Result<Disassembly, CodeError> {
    let marker_err = |line: usize, reason: &str| CodeError::Marker { line: line + 1, reason: reason.to_string() };
    let kind = |i: usize| marker.captures(&seed.lines[i]).map(|c| c[1].to_string());
    // Collect marked regions as line ranges.
    let mut regions: Vec<std::ops::Range<usize>> = Vec::new();
    let mut open: Option<usize> = None;
    let mut i = 0;
    while i < seed.lines.len() {
        match kind(i).as_deref() {
            Some("block-begin") => {
                if open.is_some() {
                    return Err(marker_err(i, "nested block-begin"));
                }
                open = Some(i);
            }
            Some("block-end") => {
                let start = open.take().ok_or_else(|| marker_err(i, "block-end without block-begin"))?;
                regions.push(start + 1..i);
            }
            Some(_) => {
                if open.is_some() {
                    return Err(marker_err(i, "slot marker inside a marked block"));
                }
                let next = (i + 1..seed.lines.len())
                    .find(|j| is_code(&seed.lines[*j]))
                    .ok_or_else(|| marker_err(i, "slot marker is not followed by a statement"))?;
                let logical = logical_at(&seed.lines, next);
                regions.push(next..logical.end);
                i = logical.end;
                continue;
            }
            None => {}
        }
        i += 1;
    }
    if let Some(start) = open {
        return Err(marker_err(start, "block-begin without block-end"));
    }
    let mut owner = BTreeMap::new();
    let mut blocks = Vec::new();
    for (k, region) in regions.iter().enumerate() {
        let (layers, others) = scanner.scan(region.clone())?;
        if layers.len() != 1 {
            return Err(marker_err(region.start.saturating_sub(1), "a marked block must hold exactly one known API call"));
        }
        let layer = &layers[0];
        if layer.logical.end > region.end {
            return Err(marker_err(region.start, "call extends past block-end"));
        }
        let extra: Vec<(usize, BlockLine)> = others
            .iter()
            .flat_map(|o| o.start..o.end)
            .chain(region.clone().filter(|j| !is_code(&seed.lines[*j])))
            .map(|j| (j, BlockLine { part: SlotPart::Def, content: LineContent::Text(seed.lines[j].clone()) }))
            .collect();
        for j in region.clone() {
            owner.insert(j, (k, SlotPart::Def));
        }
        blocks.push(single_part_block(k, layer, extra, &seed.lines));
    }
    if blocks.is_empty() {
        return Err(CodeError::NoBlocks { layers: 0 });
    }
    Ok(Disassembly { template: build_template(seed, &owner, blocks.len()), blocks })
}
