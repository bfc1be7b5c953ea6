#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use acon::agent_loop::{EpisodeRunner, TaskRun};
use acon::compression::{CompressionEvent, CompressorEnv, HashingEmbedder};
use acon::config::RunConfig;
use acon::gateway::{Gateway, LocalBackend};
use acon::guideline::{builtin, Guideline};
use acon::history::{InteractionHistory, Turn};
use acon::metrics::{CallRecord, Channel, MetricsReport, TokenLedger};
use acon::sim::{DIRECTIVE_KEEP_FACTS, DIRECTIVE_RELEVANT_ONLY, DIRECTIVE_TERSE};
use acon::templates::HISTORY_DEFAULT_ID;
use acon::tokens::{Tokenizer, WordSymbolTokenizer};
use rand::Rng;

pub const WORDS: &[&str] = &[
    "alpha", "bravo", "cargo", "delta", "ember", "fjord", "gamma", "harbor", "ion", "jolt", "kiln",
    "lumen", "mango", "nadir", "orbit", "pixel", "quartz", "rivet",
];

pub fn words(rng: &mut impl Rng, n: usize) -> String {
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A history of `n` turns with indices starting at `start`.
pub fn random_history(rng: &mut impl Rng, n: usize, start: usize) -> InteractionHistory {
    let tok = WordSymbolTokenizer;
    let turns = (start..start + n)
        .map(|i| {
            let a = format!("search({})", words(rng, 2));
            let len = rng.random_range(1..40);
            Turn::new(i, a, words(rng, len), &tok)
        })
        .collect();
    let h = InteractionHistory {
        task_text: words(rng, 6),
        summary: None,
        retained_from: start,
        turns,
    };
    h.validate().expect("valid history");
    h
}

pub fn history_default() -> Guideline {
    builtin(HISTORY_DEFAULT_ID).expect("built-in")
}

/// history-default plus the fact-keeping directive.
pub fn keep_facts_guideline() -> Guideline {
    let base = history_default();
    base.child(format!(
        "{}\n- Always {DIRECTIVE_KEEP_FACTS}.",
        base.template
    ))
    .expect("valid template")
}

/// keep-facts plus the two directives that shorten summaries.
pub fn terse_guideline() -> Guideline {
    let g = keep_facts_guideline();
    g.child(format!(
        "{}\n- {DIRECTIVE_TERSE}; keep {DIRECTIVE_RELEVANT_ONLY}.",
        g.template
    ))
    .expect("valid template")
}

pub fn guideline_map(gs: &[Guideline]) -> BTreeMap<String, Guideline> {
    gs.iter().map(|g| (g.id.clone(), g.clone())).collect()
}

pub fn gateway(backend: Arc<LocalBackend>) -> Gateway {
    Gateway::new(backend).with_retry(acon::gateway::RetryPolicy::immediate(0))
}

pub struct EnvParts {
    pub tokenizer: WordSymbolTokenizer,
    pub embedder: HashingEmbedder,
    pub guidelines: BTreeMap<String, Guideline>,
}

impl EnvParts {
    pub fn new(guidelines: &[Guideline]) -> Self {
        EnvParts {
            tokenizer: WordSymbolTokenizer,
            embedder: HashingEmbedder::default(),
            guidelines: guideline_map(guidelines),
        }
    }

    pub fn env<'a>(&'a self, gateway: &'a Gateway) -> CompressorEnv<'a> {
        CompressorEnv {
            gateway,
            model: "gpt-4.1",
            seed: 42,
            tokenizer: &self.tokenizer,
            embedder: &self.embedder,
            guidelines: &self.guidelines,
        }
    }
}

pub fn count(text: &str) -> usize {
    WordSymbolTokenizer.count(text)
}

/// A bare run record: one agent call of `cost` context tokens.
pub fn fake_run(task_id: &str, success: bool, cost: u64, events: Vec<CompressionEvent>) -> TaskRun {
    let mut ledger = TokenLedger::new();
    ledger.record(CallRecord {
        channel: Channel::Agent,
        step: 0,
        model: "gpt-4.1".into(),
        input_tokens: cost,
        cached_input_tokens: 0,
        output_tokens: 1,
        system_tokens: 0,
    });
    TaskRun {
        task_id: task_id.into(),
        task_text: format!("task {task_id}"),
        config: RunConfig::default(),
        guidelines: Vec::new(),
        trajectory: Vec::new(),
        steps: 1,
        terminated: true,
        success,
        reward: if success { 1.0 } else { 0.0 },
        ledger,
        compression_events: events,
        metrics: MetricsReport::aggregate(&[]),
        error: None,
    }
}

/// Serves fixed (success count, cost) outcomes per candidate template.
pub struct FixedRunner {
    pub outcomes: BTreeMap<String, (usize, u64)>,
}

impl EpisodeRunner for FixedRunner {
    fn run(
        &self,
        task_ids: &[String],
        guideline: Option<&Guideline>,
    ) -> acon::Result<Vec<TaskRun>> {
        let g = guideline.expect("candidate runs carry a guideline");
        let (wins, cost) = self.outcomes[&g.template];
        Ok(task_ids
            .iter()
            .enumerate()
            .map(|(i, id)| fake_run(id, i < wins, cost, Vec::new()))
            .collect())
    }
}
