//! Seed programs as templates plus code blocks: parsing, disassembly and
//! assembly.

use std::path::PathBuf;

use thiserror::Error;

pub mod call;
pub mod disassemble;
pub mod seed;
pub mod template;
pub mod verify;

pub use call::CallExpression;
pub use disassemble::{disassemble_seed, map_class_style_layers, Disassembly, LayerMapping};
pub use seed::{ApiResolver, ImportMap, SeedFile, SeedStyle};
pub use template::{
    source_hash, AssembledTest, BlockLine, CallLine, CodeBlock, LineContent, Provenance, SlotPart, Template,
    TemplateItem,
};
pub use verify::{verify_incremental_assembly, VerificationReport, VerificationStep};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("seed {0} is empty")]
    EmptySeed(PathBuf),
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, String),
    #[error("line {line}: `{callee}` looks like a layer but is not in the knowledge base")]
    UnknownApi { line: usize, callee: String },
    #[error("line {line}: `{callee}` matches several knowledge-base APIs: {}", candidates.join(", "))]
    AmbiguousApi { line: usize, callee: String, candidates: Vec<String> },
    #[error("no hidden-layer code blocks found ({layers} layer constructions; input and output layers stay in the template)")]
    NoBlocks { layers: usize },
    #[error("layer `{identifier}` defined on line {line} is never used")]
    NeverUsed { identifier: String, line: usize },
    #[error("layer `{identifier}` is used more than once, on lines {lines:?}")]
    MultipleUses { identifier: String, lines: Vec<usize> },
    #[error("line {line} uses several layers ({}); mark blocks explicitly", identifiers.join(", "))]
    SharedUseSite { line: usize, identifiers: Vec<String> },
    #[error("line {line}: {reason}")]
    Marker { line: usize, reason: String },
    #[error("template has no open slot")]
    NoOpenSlot,
    #[error("block {block} targets slot {found} but the next open slot is {expected}")]
    WrongSlot { block: String, expected: usize, found: usize },
}
