//! Rule-based compressor and optimizer models.
//!
//! Both react to plain-language directives in their prompts, so a guideline
//! edit changes their behavior the way it would change a real model's. The
//! directives recognized by [`RuleCompressor`] are the `DIRECTIVE_*`
//! constants; matching is case-insensitive.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use crate::gateway::{ChatRequest, GatewayError, Responder};
use crate::history::{SUMMARY_CLOSE, SUMMARY_OPEN};
use crate::templates::ORIGINAL_PROMPT_MARKER;

use super::env::FILLER_WORD;

/// Separates sessions in a multi-session transcript.
pub const SESSION_HEADER: &str = "### Session ";

pub const DIRECTIVE_KEEP_FACTS: &str = "keep facts verbatim";
pub const DIRECTIVE_TERSE: &str = "be terse";
pub const DIRECTIVE_RELEVANT_ONLY: &str = "only facts named in the instruction";

static ACTIONS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:search|answer)\([^()\n]*\)").expect("action regex"));
static FACTS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"The [a-z]+ of [A-Z][a-z]+ is [A-Za-z]+\.").expect("fact regex"));
static FACT_ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"The [a-z]+ of ([A-Z][a-z]+) is").expect("fact entity regex"));
static ASKED_ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"What is the \w+ of (\w+)\?").expect("asked entity regex"));
static CANDIDATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"candidate=(\d+)").expect("candidate regex"));

fn unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    items.filter(|s| seen.insert(*s)).collect()
}

fn facts(text: &str) -> Vec<&str> {
    unique(FACTS.find_iter(text).map(|m| m.as_str()))
}

fn asked_entities(text: &str) -> BTreeSet<&str> {
    ASKED_ENTITY
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .map(|m| m.as_str())
        .collect()
}

fn mentions_asked(line: &str, asked: &BTreeSet<&str>) -> bool {
    FACT_ENTITY
        .captures_iter(line)
        .any(|c| asked.contains(&c[1]))
}

/// Compressor stand-in for the QA environment.
///
/// History prompts yield a summary listing every action seen; facts are kept
/// only under [`DIRECTIVE_KEEP_FACTS`]. Observation prompts (recognized by a
/// `Refined Observation` mention) yield the observation with padding removed.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleCompressor;

impl RuleCompressor {
    pub fn compress(&self, prompt: &str) -> String {
        let lower = prompt.to_lowercase();
        let terse = lower.contains(DIRECTIVE_TERSE);
        let keep_facts = lower.contains(DIRECTIVE_KEEP_FACTS);
        let relevant_only = lower.contains(DIRECTIVE_RELEVANT_ONLY);
        let asked = asked_entities(prompt);

        if prompt.contains("Refined Observation") {
            return self.refine(prompt, relevant_only.then_some(&asked));
        }

        let actions = unique(ACTIONS.find_iter(prompt).map(|m| m.as_str()));
        let kept: Vec<&str> = if keep_facts {
            facts(prompt)
                .into_iter()
                .filter(|f| !relevant_only || mentions_asked(f, &asked))
                .collect()
        } else {
            Vec::new()
        };
        let mut body = String::new();
        if terse {
            body.push_str(&format!("actions: {}", actions.join("; ")));
            if !kept.is_empty() {
                body.push_str(&format!("\nfacts: {}", kept.join(" ")));
            }
        } else {
            body.push_str(
                "PROGRESS: The agent has been working through the instruction one step at a time. \
                 Each action below was issued in the order shown, and the observation returned by \
                 the environment was read carefully before the next decision was made. These notes \
                 give the next session enough orientation to continue without repeating work.",
            );
            for a in &actions {
                body.push_str(&format!("\n- Issued {a} and reviewed the result."));
            }
            if !kept.is_empty() {
                body.push_str("\nFACTS gathered so far:");
                for f in &kept {
                    body.push_str(&format!("\n- Recorded from the search results: {f}"));
                }
            }
        }
        format!("{SUMMARY_OPEN}\n{body}\n{SUMMARY_CLOSE}")
    }

    fn refine(&self, prompt: &str, asked: Option<&BTreeSet<&str>>) -> String {
        let start = prompt
            .match_indices("# Observation")
            .filter(|(i, _)| *i == 0 || prompt[..*i].ends_with('\n'))
            .last()
            .map_or(0, |(i, s)| i + s.len());
        let region = &prompt[start..];
        let mut lines = Vec::new();
        for line in region.lines() {
            if line.starts_with('#') {
                break;
            }
            let cleaned: Vec<&str> = line
                .split_whitespace()
                .filter(|w| *w != FILLER_WORD)
                .collect();
            if cleaned.is_empty() {
                continue;
            }
            let cleaned = cleaned.join(" ");
            let is_result = cleaned.starts_with('[');
            if is_result && asked.is_some_and(|a| !mentions_asked(&cleaned, a)) {
                continue;
            }
            lines.push(cleaned);
        }
        format!(
            "# Reasoning\nPadding carries no information; result lines are kept.\n# Refined Observation\n{}",
            lines.join("\n")
        )
    }
}

impl Responder for RuleCompressor {
    fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        Ok(self.compress(&request.prompt_text()))
    }
}

const UTILITY_EDITS: [&str; 5] = [
    "- Mention which questions are still open.",
    "- List every action taken, in order.",
    "- Copy every retrieved fact sentence unchanged; keep facts verbatim.",
    "- Write at most three sentences of narrative.",
    "- Prefer bullet points over prose.",
];

const COMPRESSION_EDITS: [&str; 5] = [
    "- Skip narration that restates the instruction.",
    "- Be terse: one line of actions, one line of facts.",
    "- Be terse and include only facts named in the instruction.",
    "- Use a heading for each group of actions.",
    "- Number each action.",
];

/// Optimizer stand-in.
///
/// Feedback prompts get a diff of fact sentences between the baseline and
/// the last session of the compressed section (`LOST: ...`) or a fixed list of removable material.
/// Update prompts get the original template plus one edit picked by the
/// `candidate=<k>` tag, from a utility menu when the feedback reports lost
/// facts and from a compression menu otherwise. Exactly one utility edit
/// adds the keep-facts directive; exactly one compression edit is both terse
/// and relevance-filtered.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOptimizer;

fn between<'a>(text: &'a str, open: &str, close: &str) -> &'a str {
    let Some(s) = text.find(open) else { return "" };
    let rest = &text[s + open.len()..];
    rest.find(close).map_or(rest, |e| &rest[..e])
}

impl RuleOptimizer {
    pub fn reply(&self, prompt: &str) -> Result<String, GatewayError> {
        if prompt.matches(ORIGINAL_PROMPT_MARKER).count() >= 2 {
            let original = between(prompt, ORIGINAL_PROMPT_MARKER, ORIGINAL_PROMPT_MARKER).trim();
            let k: usize = CANDIDATE
                .captures(prompt)
                .and_then(|c| c[1].parse().ok())
                .unwrap_or(0);
            let menu = if prompt.contains("LOST: The") {
                &UTILITY_EDITS
            } else if prompt.contains("REMOVABLE:") {
                &COMPRESSION_EDITS
            } else {
                return Ok(original.to_string());
            };
            let edit = menu[k % menu.len()];
            if original.contains(edit) {
                return Ok(original.to_string());
            }
            return Ok(format!("{original}\n{edit}"));
        }
        if prompt.contains("BASELINE_HISTORY_START") {
            let baseline = between(prompt, "BASELINE_HISTORY_START", "BASELINE_HISTORY_END");
            let compressed = between(prompt, "COMPRESSED_HISTORY_START", "COMPRESSED_HISTORY_END");
            // the agent acted on the last session only
            let compressed = compressed
                .rsplit(SESSION_HEADER)
                .next()
                .unwrap_or(compressed);
            let asked = asked_entities(baseline);
            let kept: BTreeSet<&str> = facts(compressed).into_iter().collect();
            let lost: Vec<String> = facts(baseline)
                .into_iter()
                .filter(|f| !kept.contains(f) && mentions_asked(f, &asked))
                .map(|f| format!("LOST: {f}"))
                .collect();
            return Ok(if lost.is_empty() {
                "LOST: nothing".into()
            } else {
                lost.join("\n")
            });
        }
        if prompt.contains("COMPRESSED_HISTORY_START") {
            return Ok("REMOVABLE: narrative preamble and per-action commentary\n\
                       REMOVABLE: facts about entities the instruction never asks about\n\
                       REQUIRED: facts that answer the instruction's questions"
                .into());
        }
        Err(GatewayError::Fatal(
            "rule optimizer does not recognize this prompt".into(),
        ))
    }
}

impl Responder for RuleOptimizer {
    fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.reply(&request.prompt_text())
    }
}
