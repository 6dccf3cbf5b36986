//! Checking that a disassembly re-assembles into working programs.

use std::path::Path;

use super::template::{CodeBlock, Template};
use crate::executor::{ExecutionState, Executor, ExecutorError};

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationStep {
    /// 1-based: step k runs the template with blocks 1..=k inserted.
    pub step: usize,
    pub block_id: String,
    pub state: ExecutionState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub steps: Vec<VerificationStep>,
}

impl VerificationReport {
    pub fn accepted(&self) -> bool {
        self.steps.iter().all(|s| s.state.succeeded())
    }

    pub fn failed_step(&self) -> Option<&VerificationStep> {
        self.steps.iter().find(|s| !s.state.succeeded())
    }
}

/// Runs t0+b1, t0+b1+b2, ... in order, stopping at the first step that does
/// not succeed. Step programs are written into `work_dir`.
pub fn verify_incremental_assembly(
    template: &Template,
    blocks: &[CodeBlock],
    executor: &dyn Executor,
    work_dir: &Path,
) -> Result<VerificationReport, ExecutorError> {
    std::fs::create_dir_all(work_dir)?;
    let mut steps = Vec::new();
    let mut current = template.clone();
    for (i, block) in blocks.iter().enumerate() {
        let (test, next) = current
            .assemble(block)
            .map_err(|e| ExecutorError::Config(format!("verification step {}: {e}", i + 1)))?;
        let path = work_dir.join(format!("step{}.py", i + 1));
        std::fs::write(&path, &test.source)?;
        let state = executor.execute(&test, &path)?;
        let ok = state.succeeded();
        steps.push(VerificationStep { step: i + 1, block_id: block.id.clone(), state });
        if !ok {
            break;
        }
        current = next;
    }
    Ok(VerificationReport { steps })
}
