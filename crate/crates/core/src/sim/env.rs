//! Multi-objective lookup QA with a search tool.
//!
//! The corpus holds one-sentence facts of the form
//! `The <attribute> of <Entity> is <Value>.`; each task asks several
//! `What is the <attribute> of <Entity>?` questions. Search results are
//! padded with filler words so observation size is controllable.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::EnvError;
use crate::rng::{substream, ENV_GEN};
use crate::tokens::Tokenizer;

pub const FILLER_WORD: &str = "lorem";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub objectives: Vec<Objective>,
}

impl TaskSpec {
    /// The instruction the agent sees first.
    pub fn instruction(&self) -> String {
        let mut out = String::from(
            "Answer every question below. Submit one answer per question, then finish.",
        );
        for (i, o) in self.objectives.iter().enumerate() {
            out.push_str(&format!("\nQ{i}: {}", o.question));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub corpus: BTreeMap<String, String>,
    pub tasks: Vec<TaskSpec>,
    pub search_top_k: usize,
    /// Target token length of each search result block.
    pub padding: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.search_top_k == 0 {
            return Err(EnvError::InvalidSpec(
                "search_top_k must be at least 1".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for task in &self.tasks {
            if !ids.insert(task.id.as_str()) {
                return Err(EnvError::InvalidSpec(format!(
                    "duplicate task id `{}`",
                    task.id
                )));
            }
            for o in &task.objectives {
                let gold = o.answer.to_lowercase();
                if !self
                    .corpus
                    .values()
                    .any(|d| d.to_lowercase().contains(&gold))
                {
                    return Err(EnvError::InvalidSpec(format!(
                        "answer `{}` of task `{}` appears in no document",
                        o.answer, task.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec, EnvError> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| EnvError::UnknownTask(id.to_string()))
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub answered: BTreeMap<usize, String>,
    pub step: usize,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Search(String),
    Answer(usize, String),
    Finish,
}

static ACTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(search|answer|finish_task)\(([^\n]*)\)").expect("action regex")
});

fn unquote(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .or_else(|| s.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')))
        .unwrap_or(s)
        .trim()
}

/// Extracts the first command found anywhere in the agent's response.
pub fn parse_action(text: &str) -> Option<Action> {
    let cap = ACTION.captures(text)?;
    let args = cap[2].trim();
    match &cap[1] {
        "search" if !unquote(args).is_empty() => Some(Action::Search(unquote(args).to_string())),
        "answer" => {
            let (idx, answer) = args.split_once(',')?;
            let idx = idx.trim().trim_start_matches(['Q', 'q']).parse().ok()?;
            Some(Action::Answer(idx, unquote(answer).to_string()))
        }
        "finish_task" => Some(Action::Finish),
        _ => None,
    }
}

pub fn terms(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Deterministic single-task environment.
pub struct Environment<'a> {
    pub spec: &'a EnvSpec,
    pub task: &'a TaskSpec,
    tokenizer: &'a dyn Tokenizer,
}

impl<'a> Environment<'a> {
    pub fn new(
        spec: &'a EnvSpec,
        task_id: &str,
        tokenizer: &'a dyn Tokenizer,
    ) -> Result<Self, EnvError> {
        Ok(Environment {
            task: spec.task(task_id)?,
            spec,
            tokenizer,
        })
    }

    pub fn instruction(&self) -> String {
        self.task.instruction()
    }

    /// Documents ranked by distinct query-term overlap, ties by doc id.
    pub fn rank(&self, query: &str) -> Vec<(&'a str, usize)> {
        let q = terms(query);
        let mut scored: Vec<(&str, usize)> = self
            .spec
            .corpus
            .iter()
            .map(|(id, text)| (id.as_str(), terms(text).intersection(&q).count()))
            .collect();
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        scored.truncate(self.spec.search_top_k);
        scored
    }

    fn search(&self, query: &str) -> String {
        let mut out = format!("Results for \"{query}\":");
        for (rank, (id, _)) in self.rank(query).into_iter().enumerate() {
            let mut block = format!("[{}] {id}: {}", rank + 1, self.spec.corpus[id]);
            let have = self.tokenizer.count(&block);
            for _ in have..self.spec.padding {
                block.push(' ');
                block.push_str(FILLER_WORD);
            }
            out.push('\n');
            out.push_str(&block);
        }
        out
    }

    pub fn step(&self, state: &EnvState, action: &str) -> Result<(EnvState, String), EnvError> {
        if state.terminated {
            return Err(EnvError::Terminated);
        }
        let mut next = state.clone();
        next.step += 1;
        let observation = match parse_action(action) {
            Some(Action::Search(q)) => self.search(&q),
            Some(Action::Answer(i, text)) if i < self.task.objectives.len() => {
                next.answered.insert(i, text);
                format!("Recorded answer for Q{i}.")
            }
            Some(Action::Answer(i, _)) => {
                format!("ERROR: no question Q{i}; valid indices are 0..{}", self.task.objectives.len())
            }
            Some(Action::Finish) => {
                next.terminated = true;
                "done".to_string()
            }
            None => "ERROR: could not parse an action. Use search(<query>), answer(<index>, <text>) or finish_task()."
                .to_string(),
        };
        Ok((next, observation))
    }

    /// Mean over objectives of (EM + F1) / 2.
    pub fn reward(&self, state: &EnvState) -> Result<f64, EnvError> {
        if !state.terminated {
            return Err(EnvError::NotTerminated);
        }
        Ok(self.partial_reward(state))
    }

    /// The same score on a non-terminal state; unanswered objectives score 0.
    pub fn partial_reward(&self, state: &EnvState) -> f64 {
        let n = self.task.objectives.len();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = self
            .task
            .objectives
            .iter()
            .enumerate()
            .map(|(i, o)| match state.answered.get(&i) {
                Some(pred) => (exact_match(pred, &o.answer) + f1(pred, &o.answer)) / 2.0,
                None => 0.0,
            })
            .sum();
        total / n as f64
    }
}

fn normalized(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn exact_match(pred: &str, gold: &str) -> f64 {
    if normalized(pred) == normalized(gold) {
        1.0
    } else {
        0.0
    }
}

pub fn f1(pred: &str, gold: &str) -> f64 {
    let p = normalized(pred);
    let g = normalized(gold);
    if p.is_empty() || g.is_empty() {
        return if p == g { 1.0 } else { 0.0 };
    }
    let mut remaining = g.clone();
    let mut common = 0usize;
    for tok in &p {
        if let Some(pos) = remaining.iter().position(|x| x == tok) {
            remaining.swap_remove(pos);
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenParams {
    pub seed: u64,
    pub tasks: usize,
    pub objectives: usize,
    /// Extra fact documents about entities no task asks about.
    pub distractors: usize,
    pub padding: usize,
    pub top_k: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            seed: 42,
            tasks: 4,
            objectives: 8,
            distractors: 16,
            padding: 150,
            top_k: 3,
        }
    }
}

const ATTRIBUTES: &[&str] = &[
    "capital", "color", "founder", "mascot", "anthem", "currency", "river", "emblem", "patron",
    "harbor",
];
const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kl", "tr", "qu",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "n", "r", "l", "s", "x", "nd", "rk"];

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("onsets"));
        w.push_str(VOWELS.choose(rng).expect("vowels"));
    }
    w.push_str(CODAS.choose(rng).expect("codas"));
    let mut chars = w.chars();
    chars
        .next()
        .map(|c| c.to_uppercase().collect::<String>() + chars.as_str())
        .unwrap_or_default()
}

fn fresh_word(rng: &mut impl Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let w = pseudo_word(rng);
        if used.insert(w.to_lowercase()) {
            return w;
        }
    }
}

pub fn fact_sentence(attribute: &str, entity: &str, value: &str) -> String {
    format!("The {attribute} of {entity} is {value}.")
}

pub fn question(attribute: &str, entity: &str) -> String {
    format!("What is the {attribute} of {entity}?")
}

/// Generates a spec from `params.seed` on the `env-gen` sub-stream.
pub fn generate(params: &GenParams) -> EnvSpec {
    let mut rng = substream(params.seed, ENV_GEN);
    let mut used = BTreeSet::new();
    let mut docs = Vec::new();
    let mut tasks = Vec::new();
    for t in 0..params.tasks {
        let mut objectives = Vec::new();
        for _ in 0..params.objectives {
            let attribute = *ATTRIBUTES.choose(&mut rng).expect("attributes");
            let entity = fresh_word(&mut rng, &mut used);
            let value = fresh_word(&mut rng, &mut used);
            docs.push(fact_sentence(attribute, &entity, &value));
            objectives.push(Objective {
                question: question(attribute, &entity),
                answer: value,
            });
        }
        tasks.push(TaskSpec {
            id: format!("task-{t:03}"),
            objectives,
        });
    }
    for _ in 0..params.distractors {
        let attribute = *ATTRIBUTES.choose(&mut rng).expect("attributes");
        let entity = fresh_word(&mut rng, &mut used);
        let value = fresh_word(&mut rng, &mut used);
        docs.push(fact_sentence(attribute, &entity, &value));
    }
    docs.shuffle(&mut rng);
    let corpus = docs
        .into_iter()
        .enumerate()
        .map(|(i, d)| (format!("doc-{i:04}"), d))
        .collect();
    EnvSpec {
        corpus,
        tasks,
        search_top_k: params.top_k,
        padding: params.padding,
    }
}
