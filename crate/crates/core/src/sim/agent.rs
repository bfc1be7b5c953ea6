//! Rule-based agent for the lookup-QA environment.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use crate::gateway::{ChatRequest, GatewayError, Responder, Role};

pub const AGENT_SYSTEM_PROMPT: &str = "\
You are a research agent. Each turn, reply with exactly one action:
  search(<query>)            look up documents
  answer(<index>, <text>)    submit the answer to question Q<index>
  finish_task()              end the episode after answering everything
Everything you learn comes from the observations in your context.";

static QUESTION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Q(\d+): (.+)$").expect("question regex"));
static QUESTION_PARTS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"What is the (\w+) of (\w+)\?").expect("question parts regex"));

#[derive(Debug, Clone, PartialEq)]
pub enum AgentStrategy {
    /// Search every question first, then answer from facts visible in context.
    GatherThenAnswer,
    /// Answers straight from a question-to-answer table, then finishes.
    Oracle(BTreeMap<String, String>),
}

/// Reads the rendered context in the user message and emits the next action.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    pub strategy: AgentStrategy,
}

impl ScriptedAgent {
    pub fn gather_then_answer() -> Self {
        ScriptedAgent {
            strategy: AgentStrategy::GatherThenAnswer,
        }
    }

    pub fn oracle(spec: &super::EnvSpec) -> Self {
        let table = spec
            .tasks
            .iter()
            .flat_map(|t| {
                t.objectives
                    .iter()
                    .map(|o| (o.question.clone(), o.answer.clone()))
            })
            .collect();
        ScriptedAgent {
            strategy: AgentStrategy::Oracle(table),
        }
    }

    pub fn next_action(&self, context: &str) -> String {
        // the instruction block comes first and contains no blank line
        let instruction = context.split("\n\n").next().unwrap_or_default();
        let questions: Vec<(usize, &str)> = QUESTION_LINE
            .captures_iter(instruction)
            .filter_map(|c| Some((c[1].parse().ok()?, c.get(2)?.as_str().trim())))
            .collect();
        let answered = |i: usize| context.contains(&format!("answer({i},"));
        match &self.strategy {
            AgentStrategy::GatherThenAnswer => {
                if let Some((_, q)) = questions
                    .iter()
                    .find(|(_, q)| !context.contains(&format!("search({q})")))
                {
                    return format!("search({q})");
                }
                if let Some((i, q)) = questions.iter().find(|(i, _)| !answered(*i)) {
                    return format!(
                        "answer({i}, {})",
                        lookup(context, q).unwrap_or_else(|| "unknown".into())
                    );
                }
            }
            AgentStrategy::Oracle(table) => {
                if let Some((i, q)) = questions.iter().find(|(i, _)| !answered(*i)) {
                    let a = table.get(*q).map_or("unknown", String::as_str);
                    return format!("answer({i}, {a})");
                }
            }
        }
        "finish_task()".into()
    }
}

/// Finds `The <attr> of <Entity> is <Value>.` for a question in `context`.
pub fn lookup(context: &str, question: &str) -> Option<String> {
    let parts = QUESTION_PARTS.captures(question)?;
    let fact = Regex::new(&format!(
        r"The {} of {} is (\w+)\.",
        regex::escape(&parts[1]),
        regex::escape(&parts[2])
    ))
    .ok()?;
    fact.captures(context).map(|c| c[1].to_string())
}

impl Responder for ScriptedAgent {
    fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let context = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| {
                GatewayError::InvalidRequest("agent request has no user message".into())
            })?;
        Ok(self.next_action(&context.content))
    }
}
