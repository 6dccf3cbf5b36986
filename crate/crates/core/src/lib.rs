//! Code-assembly fuzzing for deep learning library APIs.
//!
//! A seed program is disassembled into a template with ordered slots and a
//! list of code blocks (one hidden layer each). Blocks are mutated with
//! knowledge-base-driven operators and re-assembled level by level into a
//! derivation tree of new programs; every node is executed and checked
//! against the execution state its inserted block predicts.

pub mod kb;
pub mod literal;
pub mod similarity;
pub mod code;
pub mod executor;
pub mod mutation;
pub mod derivation;
pub mod rng;
pub mod oracle;
pub mod campaign;
