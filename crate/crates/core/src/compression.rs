//! Threshold-gated history and observation compression.
//!
//! Both gates are identities at or below their threshold and make no
//! compressor call. Above it, the configured [`CompressorKind`] decides what
//! happens: a guideline-driven LLM summary, a FIFO window, or retrieval of
//! the most relevant past turns.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{CompressionError, GuidelineError};
use crate::gateway::{ChatRequest, Gateway, Message};
use crate::guideline::{Guideline, GuidelineKind};
use crate::history::{
    apply_summary, render_body, render_context, render_turns, InteractionHistory, Turn,
    SUMMARY_CLOSE, SUMMARY_OPEN,
};
use crate::metrics::{Channel, TokenLedger};
use crate::tokens::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatePolicy {
    pub t_hist: usize,
    pub t_obs: usize,
    pub keep_last_pairs: usize,
}

impl Default for GatePolicy {
    fn default() -> Self {
        GatePolicy {
            t_hist: 4096,
            t_obs: 1024,
            keep_last_pairs: 1,
        }
    }
}

impl GatePolicy {
    pub fn validate(&self) -> Result<(), CompressionError> {
        if self.t_hist == 0 || self.t_obs == 0 {
            return Err(CompressionError::InvalidGate(
                "thresholds must be positive".into(),
            ));
        }
        if self.keep_last_pairs == 0 {
            return Err(CompressionError::InvalidGate(
                "keep_last_pairs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// How an over-threshold context is reduced.
///
/// Parsed from and written as `none`, `generative:<guideline-id>`,
/// `fifo:<k>`, or `retrieval:<top_k>[:<embedder>]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CompressorKind {
    None,
    Generative { guideline: String },
    Fifo { window: usize },
    Retrieval { top_k: usize, embedder: String },
}

impl CompressorKind {
    pub fn is_none(&self) -> bool {
        matches!(self, CompressorKind::None)
    }

    pub fn guideline_id(&self) -> Option<&str> {
        match self {
            CompressorKind::Generative { guideline } => Some(guideline),
            _ => None,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            CompressorKind::None => "none",
            CompressorKind::Generative { .. } => "generative",
            CompressorKind::Fifo { .. } => "fifo",
            CompressorKind::Retrieval { .. } => "retrieval",
        }
    }
}

impl fmt::Display for CompressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressorKind::None => f.write_str("none"),
            CompressorKind::Generative { guideline } => write!(f, "generative:{guideline}"),
            CompressorKind::Fifo { window } => write!(f, "fifo:{window}"),
            CompressorKind::Retrieval { top_k, embedder } if embedder == DEFAULT_EMBEDDER => {
                write!(f, "retrieval:{top_k}")
            }
            CompressorKind::Retrieval { top_k, embedder } => {
                write!(f, "retrieval:{top_k}:{embedder}")
            }
        }
    }
}

impl FromStr for CompressorKind {
    type Err = CompressionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CompressionError::InvalidKind(s.to_string());
        let count = |v: &str| v.parse::<usize>().ok().filter(|n| *n >= 1).ok_or_else(bad);
        let mut parts = s.splitn(3, ':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("none"), None, None) => Ok(CompressorKind::None),
            (Some("generative"), Some(id), None) if !id.is_empty() => {
                Ok(CompressorKind::Generative {
                    guideline: id.to_string(),
                })
            }
            (Some("fifo"), Some(k), None) => Ok(CompressorKind::Fifo { window: count(k)? }),
            (Some("retrieval"), Some(k), embedder) => Ok(CompressorKind::Retrieval {
                top_k: count(k)?,
                embedder: embedder.unwrap_or(DEFAULT_EMBEDDER).to_string(),
            }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for CompressorKind {
    type Error = CompressionError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CompressorKind> for String {
    fn from(k: CompressorKind) -> String {
        k.to_string()
    }
}

pub const DEFAULT_EMBEDDER: &str = "hashing";

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Bag-of-words vectors with FNV-1a feature hashing; no model, no network.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dims: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dims: 512 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dims.max(1)];
        let lower = text.to_lowercase();
        for word in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            let slot = (fnv1a(word.as_bytes()) % v.len() as u64) as usize;
            v[slot] += 1.0;
        }
        v
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    History,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EventOutcome {
    Applied,
    /// Over threshold but nothing could be folded (too few turns).
    Degenerate,
    /// Compressor output unusable; the input was kept.
    PolicyViolation {
        reason: String,
    },
    /// Compressor call failed after retries; the input was kept.
    CompressorFailed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressorCall {
    pub guideline_id: String,
    pub guideline_version: u32,
    pub prompt: String,
    pub output: String,
}

/// Which part of the history was in context when a compression fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextState {
    pub summary: Option<String>,
    pub turn_indices: Vec<usize>,
}

impl ContextState {
    pub fn of(history: &InteractionHistory) -> Self {
        ContextState {
            summary: history.summary.clone(),
            turn_indices: history.turns.iter().map(|t| t.index).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionEvent {
    pub step: usize,
    pub target: Target,
    pub method: String,
    pub tokens_before: usize,
    pub tokens_after: usize,
    pub outcome: EventOutcome,
    pub context_before: ContextState,
    pub context_after: ContextState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<CompressorCall>,
}

/// What a compressor needs besides the context itself.
pub struct CompressorEnv<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a str,
    pub seed: u64,
    pub tokenizer: &'a dyn Tokenizer,
    pub embedder: &'a dyn Embedder,
    pub guidelines: &'a BTreeMap<String, Guideline>,
}

impl CompressorEnv<'_> {
    fn guideline(&self, id: &str, kind: GuidelineKind) -> Result<&Guideline, CompressionError> {
        let g = self
            .guidelines
            .get(id)
            .ok_or_else(|| GuidelineError::UnknownGuideline(id.to_string()))?;
        g.expect_kind(kind)?;
        Ok(g)
    }

    fn call(
        &self,
        prompt: String,
        ledger: &mut TokenLedger,
        step: usize,
    ) -> Result<String, CompressionError> {
        let mut request = ChatRequest::new(self.model, vec![Message::user(prompt)]);
        request.seed = self.seed;
        Ok(self
            .gateway
            .complete_recorded(&request, ledger, Channel::Compressor, step, 0)?
            .content)
    }
}

pub struct HistoryOutcome {
    pub history: InteractionHistory,
    pub event: Option<CompressionEvent>,
}

pub struct ObservationOutcome {
    pub observation: String,
    pub event: Option<CompressionEvent>,
}

/// The compressor prompt for folding `history` under `guideline`.
pub fn history_prompt(
    guideline: &Guideline,
    history: &InteractionHistory,
    keep_last_pairs: usize,
) -> String {
    let mut values = BTreeMap::new();
    values.insert("task", history.task_text.clone());
    if let Some(s) = &history.summary {
        values.insert("prev_summary", s.clone());
    }
    values.insert(
        "history",
        render_turns(history.folded_turns(keep_last_pairs)),
    );
    guideline.render(&values)
}

pub fn observation_prompt(
    guideline: &Guideline,
    history: &InteractionHistory,
    observation: &str,
) -> String {
    let mut values = BTreeMap::new();
    values.insert("task", history.task_text.clone());
    values.insert("history", render_body(history));
    values.insert("observation", observation.to_string());
    guideline.render(&values)
}

/// Takes the inside of a `<HISTORY_SUMMARY>` block when present, otherwise
/// the whole trimmed output.
pub fn extract_summary(output: &str) -> String {
    if let Some(start) = output.find(SUMMARY_OPEN) {
        let rest = &output[start + SUMMARY_OPEN.len()..];
        let inner = rest.find(SUMMARY_CLOSE).map_or(rest, |end| &rest[..end]);
        return inner.trim().to_string();
    }
    output.trim().to_string()
}

static REFINED_HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)^[ \t]*#+[ \t]*Refined Observation[ \t:]*$").expect("heading regex")
});

/// Content after the last `# Refined Observation` heading, trimmed.
pub fn extract_refined_observation(output: &str) -> Result<String, CompressionError> {
    let last = REFINED_HEADING
        .find_iter(output)
        .last()
        .ok_or(CompressionError::MissingRefinedObservation)?;
    Ok(output[last.end()..].trim().to_string())
}

pub fn fifo_window(history: &InteractionHistory, window: usize) -> InteractionHistory {
    let n = history.turns.len();
    if n <= window && history.summary.is_none() {
        return history.clone();
    }
    let kept = history.turns[n.saturating_sub(window)..].to_vec();
    InteractionHistory {
        task_text: history.task_text.clone(),
        summary: None,
        retained_from: kept.first().map_or(0, |t| t.index),
        turns: kept,
    }
}

/// Keeps the `top_k` past turns most similar to the query plus the last turn.
///
/// The query is the task text and the latest observation. Ties prefer the
/// more recent turn.
pub fn retrieve_turns(
    history: &InteractionHistory,
    top_k: usize,
    embedder: &dyn Embedder,
) -> InteractionHistory {
    let n = history.turns.len();
    if n <= top_k + 1 && history.summary.is_none() {
        return history.clone();
    }
    let Some(last) = history.turns.last() else {
        return history.clone();
    };
    let query = embedder.embed(&format!("{}\n{}", history.task_text, last.observation));
    let mut scored: Vec<(f32, usize)> = history.turns[..n - 1]
        .iter()
        .enumerate()
        .map(|(pos, t)| (cosine(&query, &embedder.embed(&t.render())), pos))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let mut keep: Vec<usize> = scored.iter().take(top_k).map(|(_, pos)| *pos).collect();
    keep.push(n - 1);
    keep.sort_unstable();
    let kept: Vec<Turn> = keep
        .into_iter()
        .map(|pos| history.turns[pos].clone())
        .collect();
    InteractionHistory {
        task_text: history.task_text.clone(),
        summary: None,
        retained_from: kept[0].index,
        turns: kept,
    }
}

pub fn maybe_compress_history(
    history: &InteractionHistory,
    gate: &GatePolicy,
    kind: &CompressorKind,
    env: &CompressorEnv<'_>,
    ledger: &mut TokenLedger,
    step: usize,
) -> Result<HistoryOutcome, CompressionError> {
    let before = env.tokenizer.count(&render_context(history));
    if before <= gate.t_hist || kind.is_none() {
        return Ok(HistoryOutcome {
            history: history.clone(),
            event: None,
        });
    }
    let event = |outcome, result: &InteractionHistory, call| CompressionEvent {
        step,
        target: Target::History,
        method: kind.method().to_string(),
        tokens_before: before,
        tokens_after: env.tokenizer.count(&render_context(result)),
        outcome,
        context_before: ContextState::of(history),
        context_after: ContextState::of(result),
        call,
    };

    let compressed = match kind {
        CompressorKind::None => unreachable!("handled above"),
        CompressorKind::Fifo { window } => fifo_window(history, *window),
        CompressorKind::Retrieval { top_k, .. } => retrieve_turns(history, *top_k, env.embedder),
        CompressorKind::Generative { guideline } => {
            let guideline = env.guideline(guideline, GuidelineKind::History)?;
            let keep = gate.keep_last_pairs;
            let n = history.turns.len();
            if n < keep || history.turns[n - keep].index == 0 {
                log::warn!("history gate fired at step {step} with {n} turns; nothing to fold");
                return Ok(HistoryOutcome {
                    history: history.clone(),
                    event: Some(event(EventOutcome::Degenerate, history, None)),
                });
            }
            let prompt = history_prompt(guideline, history, keep);
            let output = env.call(prompt.clone(), ledger, step)?;
            let call = Some(CompressorCall {
                guideline_id: guideline.id.clone(),
                guideline_version: guideline.version,
                prompt,
                output: output.clone(),
            });
            let summary = extract_summary(&output);
            if summary.is_empty() {
                let outcome = EventOutcome::PolicyViolation {
                    reason: "empty summary".into(),
                };
                return Ok(HistoryOutcome {
                    history: history.clone(),
                    event: Some(event(outcome, history, call)),
                });
            }
            let compressed = apply_summary(history, summary, keep)
                .map_err(|e| CompressionError::InvalidGate(e.to_string()))?;
            let event = event(EventOutcome::Applied, &compressed, call);
            return Ok(HistoryOutcome {
                history: compressed,
                event: Some(event),
            });
        }
    };
    let outcome = if compressed == *history {
        EventOutcome::Degenerate
    } else {
        EventOutcome::Applied
    };
    let event = event(outcome, &compressed, None);
    Ok(HistoryOutcome {
        history: compressed,
        event: Some(event),
    })
}

pub fn maybe_compress_observation(
    observation: &str,
    history: &InteractionHistory,
    gate: &GatePolicy,
    kind: &CompressorKind,
    env: &CompressorEnv<'_>,
    ledger: &mut TokenLedger,
    step: usize,
) -> Result<ObservationOutcome, CompressionError> {
    let before = env.tokenizer.count(observation);
    let guideline_id = match kind {
        CompressorKind::Generative { guideline } if before > gate.t_obs => guideline,
        _ => {
            return Ok(ObservationOutcome {
                observation: observation.to_string(),
                event: None,
            })
        }
    };
    let guideline = env.guideline(guideline_id, GuidelineKind::Observation)?;
    let prompt = observation_prompt(guideline, history, observation);
    let output = env.call(prompt.clone(), ledger, step)?;
    let call = Some(CompressorCall {
        guideline_id: guideline.id.clone(),
        guideline_version: guideline.version,
        prompt,
        output: output.clone(),
    });
    let event = |outcome, after, call| CompressionEvent {
        step,
        target: Target::Observation,
        method: kind.method().to_string(),
        tokens_before: before,
        tokens_after: after,
        outcome,
        context_before: ContextState::of(history),
        context_after: ContextState::of(history),
        call,
    };
    let (refined, outcome) = match extract_refined_observation(&output) {
        Err(e) => (
            None,
            EventOutcome::PolicyViolation {
                reason: e.to_string(),
            },
        ),
        Ok(r) if r.is_empty() => (
            None,
            EventOutcome::PolicyViolation {
                reason: "empty refined observation".into(),
            },
        ),
        Ok(r) if env.tokenizer.count(&r) > before => (
            None,
            EventOutcome::PolicyViolation {
                reason: "refined observation longer than input".into(),
            },
        ),
        Ok(r) => (Some(r), EventOutcome::Applied),
    };
    match refined {
        Some(r) => {
            let after = env.tokenizer.count(&r);
            Ok(ObservationOutcome {
                observation: r,
                event: Some(event(outcome, after, call)),
            })
        }
        None => {
            log::warn!("observation compression at step {step} rejected: {outcome:?}");
            Ok(ObservationOutcome {
                observation: observation.to_string(),
                event: Some(event(outcome, before, call)),
            })
        }
    }
}
