//! Code blocks, templates with ordered slots, and the assembly operator.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::call::CallExpression;
use super::CodeError;

/// The part of a slot a line belongs to. Sequential blocks use only `Def`;
/// class-based blocks put the constructor line in `Def` and the use site in
/// `Use`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotPart {
    Def,
    Use,
}

/// A source line (possibly spanning several physical lines) holding one
/// call expression that mutation may rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct CallLine {
    /// Original text, physical lines joined by `\n`.
    pub raw: String,
    /// Everything before the callee, including indentation.
    pub prefix: String,
    pub call: CallExpression,
    /// Everything after the call's closing parenthesis.
    pub suffix: String,
    /// True until the call is rewritten; pristine lines render verbatim.
    pub pristine: bool,
}

impl CallLine {
    pub fn render(&self) -> String {
        if self.pristine {
            self.raw.lines().map(str::trim_end).collect::<Vec<_>>().join("\n")
        } else {
            format!("{}{}{}", self.prefix, self.call.render(), self.suffix).trim_end().to_string()
        }
    }

    pub fn call_mut(&mut self) -> &mut CallExpression {
        self.pristine = false;
        &mut self.call
    }

    pub fn line_count(&self) -> usize {
        self.render().lines().count().max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineContent {
    Call(CallLine),
    Text(String),
}

impl LineContent {
    fn render(&self) -> String {
        match self {
            LineContent::Call(c) => c.render(),
            LineContent::Text(t) => t.trim_end().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLine {
    pub part: SlotPart,
    pub content: LineContent,
}

/// The construction code of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    pub id: String,
    /// Index of the template slot this block fills.
    pub slot: usize,
    /// Knowledge-base name of the API the block invokes.
    pub api: String,
    pub lines: Vec<BlockLine>,
    /// Identifier the layer is bound to, if any.
    pub bound_variable: Option<String>,
}

impl CodeBlock {
    fn call_position(&self) -> usize {
        self.lines
            .iter()
            .position(|l| matches!(l.content, LineContent::Call(_)))
            .expect("a code block holds exactly one call line")
    }

    pub fn call_line(&self) -> &CallLine {
        match &self.lines[self.call_position()].content {
            LineContent::Call(c) => c,
            LineContent::Text(_) => unreachable!(),
        }
    }

    pub fn call_line_mut(&mut self) -> &mut CallLine {
        let i = self.call_position();
        match &mut self.lines[i].content {
            LineContent::Call(c) => c,
            LineContent::Text(_) => unreachable!(),
        }
    }

    pub fn call(&self) -> &CallExpression {
        &self.call_line().call
    }

    /// Rendered lines of one part.
    pub fn render_part(&self, part: SlotPart) -> Vec<String> {
        self.lines
            .iter()
            .filter(|l| l.part == part)
            .flat_map(|l| l.content.render().lines().map(str::to_string).collect::<Vec<_>>())
            .collect()
    }

    pub fn render(&self) -> String {
        [SlotPart::Def, SlotPart::Use].into_iter().flat_map(|p| self.render_part(p)).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TemplateItem {
    Text(String),
    Slot { slot: usize, part: SlotPart },
}

/// Skeleton code with slots, some of which may already be filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub items: Vec<TemplateItem>,
    pub filled: Vec<Option<CodeBlock>>,
    pub trailing_newline: bool,
}

/// One program produced by assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledTest {
    pub source: String,
    pub provenance: Provenance,
    /// 1-based line of the inserted block's call in `source`.
    pub inserted_line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub template_id: String,
    pub block_id: Option<String>,
    pub mutation_id: Option<String>,
}

pub fn source_hash(source: &str) -> String {
    hex::encode(&Sha256::digest(source.as_bytes())[..8])
}

impl AssembledTest {
    pub fn source_hash(&self) -> String {
        source_hash(&self.source)
    }

    /// The program a bare template renders to.
    pub fn skeleton(template: &Template) -> AssembledTest {
        AssembledTest {
            source: template.render(),
            provenance: Provenance { template_id: template.id(), block_id: None, mutation_id: None },
            inserted_line: None,
        }
    }
}

impl Template {
    pub fn new(items: Vec<TemplateItem>, slots: usize, trailing_newline: bool) -> Template {
        Template { items, filled: vec![None; slots], trailing_newline }
    }

    pub fn slot_count(&self) -> usize {
        self.filled.len()
    }

    pub fn open_slots(&self) -> Vec<usize> {
        (0..self.filled.len()).filter(|i| self.filled[*i].is_none()).collect()
    }

    pub fn next_open_slot(&self) -> Option<usize> {
        self.filled.iter().position(Option::is_none)
    }

    /// Content hash of the rendered skeleton plus which slots are open.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.render().as_bytes());
        for s in self.open_slots() {
            h.update(s.to_le_bytes());
        }
        hex::encode(&h.finalize()[..6])
    }

    fn render_lines(&self) -> (Vec<String>, Vec<(usize, usize)>) {
        let mut out = Vec::new();
        // (slot, first output line index of the slot's call line)
        let mut call_lines = Vec::new();
        for item in &self.items {
            match item {
                TemplateItem::Text(t) => out.push(t.trim_end().to_string()),
                TemplateItem::Slot { slot, part } => {
                    if let Some(block) = &self.filled[*slot] {
                        for line in block.lines.iter().filter(|l| l.part == *part) {
                            if matches!(line.content, LineContent::Call(_)) {
                                call_lines.push((*slot, out.len()));
                            }
                            out.extend(line.content.render().lines().map(str::to_string));
                        }
                    }
                }
            }
        }
        (out, call_lines)
    }

    pub fn render(&self) -> String {
        let (lines, _) = self.render_lines();
        let mut s = lines.join("\n");
        if self.trailing_newline {
            s.push('\n');
        }
        s
    }

    /// Inserts `block` into the next open slot and returns the rendered
    /// program together with the successor template.
    pub fn assemble(&self, block: &CodeBlock) -> Result<(AssembledTest, Template), CodeError> {
        let next = self.next_open_slot().ok_or(CodeError::NoOpenSlot)?;
        if block.slot != next {
            return Err(CodeError::WrongSlot { block: block.id.clone(), expected: next, found: block.slot });
        }
        let mut successor = self.clone();
        successor.filled[next] = Some(block.clone());
        let (lines, calls) = successor.render_lines();
        let inserted_line = calls.iter().find(|(s, _)| *s == next).map(|(_, i)| i + 1);
        let mut source = lines.join("\n");
        if successor.trailing_newline {
            source.push('\n');
        }
        let test = AssembledTest {
            source,
            provenance: Provenance { template_id: self.id(), block_id: Some(block.id.clone()), mutation_id: None },
            inserted_line,
        };
        Ok((test, successor))
    }

    /// Assembles every block in turn; the final program.
    pub fn assemble_all(&self, blocks: &[CodeBlock]) -> Result<(AssembledTest, Template), CodeError> {
        let mut t = self.clone();
        let mut last = AssembledTest::skeleton(self);
        for b in blocks {
            let (test, next) = t.assemble(b)?;
            last = test;
            t = next;
        }
        Ok((last, t))
    }
}
