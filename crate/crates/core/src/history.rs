//! Interaction-history data model and its canonical text rendering.
//!
//! A history is the task instruction, an optional summary block produced by
//! history compression, and the turns still held verbatim. The rendered form
//! is used both as the agent's context and as compressor input.

use serde::{Deserialize, Serialize};

use crate::error::HistoryError;
use crate::tokens::Tokenizer;

pub const SUMMARY_OPEN: &str = "<HISTORY_SUMMARY>";
pub const SUMMARY_CLOSE: &str = "</HISTORY_SUMMARY>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub action: String,
    pub observation: String,
    pub action_tokens: usize,
    pub observation_tokens: usize,
}

impl Turn {
    pub fn new(
        index: usize,
        action: impl Into<String>,
        observation: impl Into<String>,
        tokenizer: &dyn Tokenizer,
    ) -> Self {
        let action = action.into();
        let observation = observation.into();
        Turn {
            index,
            action_tokens: tokenizer.count(&action),
            observation_tokens: tokenizer.count(&observation),
            action,
            observation,
        }
    }

    pub fn render(&self) -> String {
        format!("Action: {}\nObservation: {}", self.action, self.observation)
    }
}

/// The agent's working context.
///
/// `retained_from` is the index of the first turn still held verbatim. It is
/// 0 for an untouched history; after a summary is injected it is at least 1.
/// Window baselines (FIFO, retrieval) drop turns without a summary, in which
/// case `retained_from` is the first kept index and indices may have gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionHistory {
    pub task_text: String,
    pub summary: Option<String>,
    pub retained_from: usize,
    pub turns: Vec<Turn>,
}

impl InteractionHistory {
    pub fn new(task_text: impl Into<String>) -> Self {
        InteractionHistory {
            task_text: task_text.into(),
            summary: None,
            retained_from: 0,
            turns: Vec::new(),
        }
    }

    pub fn with_turns(
        task_text: impl Into<String>,
        turns: Vec<Turn>,
    ) -> Result<Self, HistoryError> {
        let mut history = Self::new(task_text);
        for turn in turns {
            history.push(turn)?;
        }
        Ok(history)
    }

    /// Index the next appended turn must carry.
    pub fn next_index(&self) -> usize {
        self.turns
            .last()
            .map_or(self.retained_from, |t| t.index + 1)
    }

    pub fn push(&mut self, turn: Turn) -> Result<(), HistoryError> {
        if let Some(last) = self.turns.last() {
            if turn.index <= last.index {
                return Err(HistoryError::NonIncreasingIndex {
                    prev: last.index,
                    got: turn.index,
                });
            }
        } else if self.summary.is_none() && self.retained_from == 0 && turn.index != 0 {
            return Err(HistoryError::Invalid(format!(
                "first turn of a fresh history must have index 0, got {}",
                turn.index
            )));
        }
        self.turns.push(turn);
        Ok(())
    }

    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    pub fn validate(&self) -> Result<(), HistoryError> {
        for pair in self.turns.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(HistoryError::NonIncreasingIndex {
                    prev: pair[0].index,
                    got: pair[1].index,
                });
            }
        }
        match (&self.summary, self.turns.first()) {
            (Some(_), _) if self.retained_from == 0 => Err(HistoryError::Invalid(
                "summary present but retained_from is 0".into(),
            )),
            (Some(_), Some(first)) if first.index != self.retained_from => {
                Err(HistoryError::Invalid(format!(
                    "first retained turn {} != retained_from {}",
                    first.index, self.retained_from
                )))
            }
            (None, Some(first)) if first.index != self.retained_from => {
                Err(HistoryError::Invalid(format!(
                    "first turn {} != retained_from {}",
                    first.index, self.retained_from
                )))
            }
            (None, None) if self.retained_from != 0 => Err(HistoryError::Invalid(
                "empty history without summary must have retained_from 0".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Turns that a summary with `keep_last_pairs` would fold away.
    pub fn folded_turns(&self, keep_last_pairs: usize) -> &[Turn] {
        let cut = self.turns.len().saturating_sub(keep_last_pairs);
        &self.turns[..cut]
    }
}

/// Renders the summary block and turns, without the task.
pub fn render_body(history: &InteractionHistory) -> String {
    let mut out = String::new();
    if let Some(summary) = &history.summary {
        out.push_str(SUMMARY_OPEN);
        out.push('\n');
        out.push_str(summary);
        out.push('\n');
        out.push_str(SUMMARY_CLOSE);
    }
    for turn in &history.turns {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&turn.render());
    }
    out
}

pub fn render_turns(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(Turn::render)
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Canonical serialization of a history: task, summary block, retained turns.
pub fn render_context(history: &InteractionHistory) -> String {
    let body = render_body(history);
    if body.is_empty() {
        history.task_text.clone()
    } else {
        format!("{}\n\n{}", history.task_text, body)
    }
}

/// Replaces everything before the last `keep_last_pairs` turns with `summary`.
///
/// A previous summary is replaced, not chained; callers feed it to the
/// compressor as `prev_summary`.
pub fn apply_summary(
    history: &InteractionHistory,
    summary: impl Into<String>,
    keep_last_pairs: usize,
) -> Result<InteractionHistory, HistoryError> {
    if keep_last_pairs == 0 {
        return Err(HistoryError::ZeroKeep);
    }
    let n = history.turns.len();
    if n < keep_last_pairs {
        return Err(HistoryError::TooFewTurns {
            turns: n,
            keep: keep_last_pairs,
        });
    }
    let retained = &history.turns[n - keep_last_pairs..];
    let retained_from = retained[0].index;
    if retained_from == 0 {
        return Err(HistoryError::NothingToSummarize { retained_from });
    }
    Ok(InteractionHistory {
        task_text: history.task_text.clone(),
        summary: Some(summary.into()),
        retained_from,
        turns: retained.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::WordSymbolTokenizer;

    fn history(n: usize) -> InteractionHistory {
        let turns = (0..n)
            .map(|i| {
                Turn::new(
                    i,
                    format!("act {i}"),
                    format!("obs {i}"),
                    &WordSymbolTokenizer,
                )
            })
            .collect();
        InteractionHistory::with_turns("TASK", turns).unwrap()
    }

    #[test]
    fn empty_history_renders_task_only() {
        let h = InteractionHistory::new("Find the answer.");
        let text = render_context(&h);
        assert_eq!(text, "Find the answer.");
        assert!(!text.contains("Action:"));
        assert!(!text.contains("Observation:"));
    }

    #[test]
    fn summary_replaces_early_turns() {
        let h = InteractionHistory {
            task_text: "T".into(),
            summary: Some("S".into()),
            retained_from: 3,
            turns: (3..5)
                .map(|i| Turn::new(i, format!("a{i}"), format!("o{i}"), &WordSymbolTokenizer))
                .collect(),
        };
        h.validate().unwrap();
        let text = render_context(&h);
        assert_eq!(text.matches("\nS\n").count(), 1);
        for i in 0..3 {
            assert!(!text.contains(&format!("a{i}")));
        }
        assert!(text.contains("Action: a3\nObservation: o3"));
        assert!(text.contains("Action: a4\nObservation: o4"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let h = history(4);
        assert_eq!(render_context(&h), render_context(&h));
    }

    #[test]
    fn keep_one_of_six() {
        let h = apply_summary(&history(6), "sum", 1).unwrap();
        assert_eq!(h.retained_from, 5);
        assert_eq!(h.turns.len(), 1);
        assert_eq!(h.turns[0].index, 5);
        h.validate().unwrap();
    }

    #[test]
    fn keeping_everything_is_rejected() {
        let err = apply_summary(&history(6), "sum", 6).unwrap_err();
        assert!(matches!(err, HistoryError::NothingToSummarize { .. }));
    }

    #[test]
    fn too_few_turns() {
        let err = apply_summary(&history(2), "sum", 3).unwrap_err();
        assert!(matches!(
            err,
            HistoryError::TooFewTurns { turns: 2, keep: 3 }
        ));
        assert!(matches!(
            apply_summary(&history(2), "s", 0),
            Err(HistoryError::ZeroKeep)
        ));
    }

    #[test]
    fn two_turns_rendered_exactly() {
        let h = apply_summary(&history(2), "X", 1).unwrap();
        let expected =
            "TASK\n\n<HISTORY_SUMMARY>\nX\n</HISTORY_SUMMARY>\n\nAction: act 1\nObservation: obs 1";
        assert_eq!(render_context(&h), expected);
    }

    #[test]
    fn second_summary_replaces_first() {
        let h = apply_summary(&history(3), "first", 1).unwrap();
        let mut h2 = h.clone();
        h2.push(Turn::new(3, "a", "b", &WordSymbolTokenizer))
            .unwrap();
        h2.push(Turn::new(4, "c", "d", &WordSymbolTokenizer))
            .unwrap();
        let h3 = apply_summary(&h2, "second", 1).unwrap();
        assert_eq!(h3.summary.as_deref(), Some("second"));
        assert_eq!(h3.retained_from, 4);
        assert!(!render_context(&h3).contains("first"));
    }

    #[test]
    fn push_rejects_out_of_order() {
        let mut h = history(2);
        let err = h
            .push(Turn::new(1, "a", "b", &WordSymbolTokenizer))
            .unwrap_err();
        assert!(matches!(
            err,
            HistoryError::NonIncreasingIndex { prev: 1, got: 1 }
        ));
        let mut fresh = InteractionHistory::new("t");
        assert!(fresh
            .push(Turn::new(2, "a", "b", &WordSymbolTokenizer))
            .is_err());
    }

    #[test]
    fn folded_turns_excludes_kept() {
        let h = history(5);
        let folded: Vec<_> = h.folded_turns(2).iter().map(|t| t.index).collect();
        assert_eq!(folded, vec![0, 1, 2]);
        assert!(history(1).folded_turns(3).is_empty());
    }
}
