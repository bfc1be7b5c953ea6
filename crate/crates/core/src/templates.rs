//! Built-in guideline templates.
//!
//! Placeholders use `{{ name }}` with an optional `| default(value)` filter.

pub const HISTORY_DEFAULT_ID: &str = "history-default";
pub const OBSERVATION_DEFAULT_ID: &str = "observation-default";
pub const FEEDBACK_DEFAULT_ID: &str = "feedback-default";
pub const UPDATE_DEFAULT_ID: &str = "update-default";
pub const COMPRESS_FEEDBACK_DEFAULT_ID: &str = "compress-feedback-default";
pub const COMPRESS_UPDATE_DEFAULT_ID: &str = "compress-update-default";

pub const HISTORY_DEFAULT: &str = "\
You keep a running summary for an agent that works across several sessions. \
You receive the agent's instruction, the previous summary if there is one, and \
the interactions since that summary. Write a new summary that replaces the old one.

## Instruction
{{ task }}

## Previous summary
{{ prev_summary | default(none) }}

## Interactions
{{ history }}

## Write
- PROGRESS: what has been done and why, in order.
- DONE: subtasks already finished, with their results.

Return only the summary text.";

pub const OBSERVATION_DEFAULT: &str = "\
Produce two sections from the inputs below. Under `# Reasoning`, decide which parts \
of the current observation the agent still needs for the remaining steps. Under \
`# Refined Observation`, write the smallest version of the observation that still \
lets the next step succeed.

## Instruction
{{ task }}

## Interactions so far
{{ history }}

# Observation
{{ observation }}

## Output format
# Reasoning
...
# Refined Observation
...";

pub const FEEDBACK_DEFAULT: &str = "\
You audit agent trajectories. The BASELINE run kept its full context and succeeded. \
The COMPRESSED run had earlier interactions replaced by summaries and failed.

task: {{ task_name }}
baseline_success={{ baseline_success }} compressed_success={{ optimized_success }}
baseline_steps={{ baseline_env_steps | default(null) }} compressed_steps={{ optimized_env_steps | default(null) }}

Find the first point where the compressed run departs from the baseline. Name the \
facts, values, or state that the compressed context lost or distorted, quoting lines \
from both runs. End with concrete changes to the summarization instructions that \
would have kept that information.

BASELINE_HISTORY_START
{{ baseline_history }}
BASELINE_HISTORY_END

COMPRESSED_HISTORY_START
{{ optimized_history }}
COMPRESSED_HISTORY_END";

pub const UPDATE_DEFAULT: &str = "\
You revise instructions for a context compressor. The analyses below explain where \
compressed contexts lost information the agent needed. Rewrite the ORIGINAL PROMPT so \
those losses do not recur.

Rules:
- Keep every double-brace placeholder of the original prompt unchanged.
- Add concrete, checkable rules; do not copy literal values from the analyses.
- Output only the revised prompt template.

Analyses:
{{ feedback }}

Original prompt (verbatim between markers):
<<<ORIGINAL_PROMPT>>>
{{ original_prompt }}
<<<ORIGINAL_PROMPT>>>";

pub const COMPRESS_FEEDBACK_DEFAULT: &str = "\
You review a compressed agent context from a run that succeeded. Identify what in the \
context was never used by later steps: repeated logs, stale values, formatting, \
commentary. Group removable spans by category and list the items that were actually \
used and must stay.

task: {{ task_name }}
success={{ optimized_success }} steps={{ optimized_env_steps | default(null) }}

COMPRESSED_HISTORY_START
{{ optimized_history }}
COMPRESSED_HISTORY_END";

pub const COMPRESS_UPDATE_DEFAULT: &str = "\
You revise instructions for a context compressor so that its output gets shorter \
without losing anything the agent uses. The reviews below list removable spans and \
required items. Rewrite the ORIGINAL PROMPT accordingly.

Rules:
- Keep every placeholder of the original prompt unchanged.
- Turn the removal categories into explicit rules.
- Output only the revised prompt template.

Reviews:
{{ feedback }}

Original prompt (verbatim between markers):
<<<ORIGINAL_PROMPT>>>
{{ original_prompt }}
<<<ORIGINAL_PROMPT>>>";

pub const ORIGINAL_PROMPT_MARKER: &str = "<<<ORIGINAL_PROMPT>>>";
