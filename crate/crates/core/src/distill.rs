//! Teacher compressor pairs for distillation.
//!
//! Only successful runs contribute, and only applied compressions with a
//! recorded call: the pair is the exact prompt the compressor saw and the
//! text it returned.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent_loop::TaskRun;
use crate::compression::{EventOutcome, Target};
use crate::io::write_jsonl;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillPair {
    pub kind: Target,
    pub input: String,
    pub output: String,
    pub task_id: String,
    pub step: usize,
    pub guideline_id: String,
    pub guideline_version: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Export {
    pub pairs: Vec<DistillPair>,
    /// Applied events in successful runs that carried no compressor call.
    pub skipped: usize,
}

/// Pairs from successful runs, ordered by (task id, step); within one step
/// the observation pair precedes the history pair, as they happened.
pub fn export_pairs(runs: &[TaskRun]) -> Export {
    let mut export = Export::default();
    for run in runs.iter().filter(|r| r.success) {
        for event in run
            .compression_events
            .iter()
            .filter(|e| e.outcome == EventOutcome::Applied)
        {
            match &event.call {
                Some(call) if !call.prompt.is_empty() && !call.output.trim().is_empty() => {
                    export.pairs.push(DistillPair {
                        kind: event.target,
                        input: call.prompt.clone(),
                        output: call.output.clone(),
                        task_id: run.task_id.clone(),
                        step: event.step,
                        guideline_id: call.guideline_id.clone(),
                        guideline_version: call.guideline_version,
                    })
                }
                _ if event.method == "generative" => export.skipped += 1,
                _ => {}
            }
        }
    }
    if export.skipped > 0 {
        log::warn!(
            "{} compression events had no compressor call record",
            export.skipped
        );
    }
    export
        .pairs
        .sort_by(|a, b| a.task_id.cmp(&b.task_id).then(a.step.cmp(&b.step)));
    export
}

pub fn write_pairs(path: &Path, pairs: &[DistillPair]) -> Result<()> {
    write_jsonl(path, pairs)
}
