//! Episodes: the agent, the environment and the two compression gates.
//!
//! Each step the agent sees the rendered context and emits an action; the
//! environment executes it; the observation passes the observation gate, is
//! appended as a turn, and the history gate runs on the result. After an
//! applied history compression the history gate rests for
//! `history_cooldown` steps.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compression::{
    history_prompt, maybe_compress_history, maybe_compress_observation, observation_prompt,
    CompressionEvent, CompressorEnv, ContextState, Embedder, EventOutcome, HashingEmbedder, Target,
};
use crate::config::RunConfig;
use crate::gateway::{ChatRequest, Gateway, LocalBackend, Message, RetryPolicy};
use crate::guideline::Guideline;
use crate::history::{render_context, InteractionHistory, Turn};
use crate::metrics::{Channel, MetricsReport, PricingTable, Scope, TokenLedger};
use crate::sim::rules::SESSION_HEADER;
use crate::sim::{
    EnvSpec, EnvState, Environment, RuleCompressor, ScriptedAgent, AGENT_SYSTEM_PROMPT,
};
use crate::tokens::{default_tokenizer, SharedTokenizer};
use crate::{Error, Result};

/// Model clients and shared helpers for running episodes.
#[derive(Clone)]
pub struct Runtime {
    pub agent: Gateway,
    pub compressor: Gateway,
    pub tokenizer: SharedTokenizer,
    pub embedder: Arc<dyn Embedder>,
    pub pricing: PricingTable,
}

impl Runtime {
    pub fn new(agent: Gateway, compressor: Gateway) -> Self {
        Runtime {
            agent,
            compressor,
            tokenizer: default_tokenizer(),
            embedder: Arc::new(HashingEmbedder::default()),
            pricing: PricingTable::reference(),
        }
    }

    /// Rule-based agent and compressor; no network.
    pub fn offline() -> Self {
        let agent = Gateway::new(Arc::new(LocalBackend::new(
            "rule-agent",
            ScriptedAgent::gather_then_answer(),
        )))
        .with_retry(RetryPolicy::immediate(0));
        let compressor = Gateway::new(Arc::new(LocalBackend::new(
            "rule-compressor",
            RuleCompressor,
        )))
        .with_retry(RetryPolicy::immediate(0));
        Runtime::new(agent, compressor)
    }

    pub fn with_pricing(mut self, pricing: PricingTable) -> Self {
        self.pricing = pricing;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    pub action: String,
    pub raw_observation: String,
    /// What was stored in the history; differs from `raw_observation` only
    /// after observation compression.
    pub observation: String,
    /// Tokens of the rendered context the agent saw before acting.
    pub context_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task_id: String,
    pub task_text: String,
    pub config: RunConfig,
    /// Guidelines the compressors used, at the versions used.
    pub guidelines: Vec<Guideline>,
    pub trajectory: Vec<TrajectoryStep>,
    pub steps: usize,
    pub terminated: bool,
    pub success: bool,
    pub reward: f64,
    pub ledger: TokenLedger,
    pub compression_events: Vec<CompressionEvent>,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TaskRun {
    /// Total agent-visible context tokens over the episode.
    pub fn context_cost(&self) -> u64 {
        self.ledger.total_context(Scope::Agent)
    }

    pub fn recompute_metrics(&self, pricing: &PricingTable) -> Result<MetricsReport> {
        Ok(MetricsReport::for_run(
            self.steps,
            self.success,
            self.reward,
            &self.ledger,
            pricing,
            &self.config.metrics,
        )?)
    }

    fn turn(&self, index: usize) -> Option<Turn> {
        let step = self.trajectory.get(index)?;
        let tok = default_tokenizer();
        Some(Turn::new(
            index,
            step.action.clone(),
            step.observation.clone(),
            tok.as_ref(),
        ))
    }

    fn history_at(&self, state: &ContextState) -> Option<InteractionHistory> {
        let turns = state
            .turn_indices
            .iter()
            .map(|i| self.turn(*i))
            .collect::<Option<Vec<_>>>()?;
        Some(InteractionHistory {
            task_text: self.task_text.clone(),
            summary: state.summary.clone(),
            retained_from: turns.first().map_or(0, |t| t.index),
            turns,
        })
    }

    /// The context as the agent experienced it: one block per session,
    /// where a new session starts after each applied history compression.
    pub fn transcript(&self) -> String {
        let mut sessions = Vec::new();
        let mut last_after: Option<(usize, &ContextState)> = None;
        for e in &self.compression_events {
            if e.target != Target::History || e.outcome != EventOutcome::Applied {
                continue;
            }
            if let Some(h) = self.history_at(&e.context_before) {
                sessions.push(render_context(&h));
            }
            last_after = Some((e.step, &e.context_after));
        }
        let mut tail = match last_after {
            Some((step, after)) => {
                let mut state = after.clone();
                state.turn_indices.extend(step + 1..self.trajectory.len());
                self.history_at(&state)
            }
            None => self.history_at(&ContextState {
                summary: None,
                turn_indices: (0..self.trajectory.len()).collect(),
            }),
        };
        if let Some(h) = tail.take() {
            sessions.push(render_context(&h));
        }
        if sessions.len() == 1 {
            return sessions.pop().unwrap_or_default();
        }
        sessions
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{SESSION_HEADER}{}\n{s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Rebuilds the compressor prompt of `event` from the stored trajectory.
    pub fn replay_prompt(&self, event: &CompressionEvent) -> Option<String> {
        let call = event.call.as_ref()?;
        let guideline = self
            .guidelines
            .iter()
            .find(|g| g.id == call.guideline_id && g.version == call.guideline_version)?;
        let history = self.history_at(&event.context_before)?;
        match event.target {
            Target::History => Some(history_prompt(
                guideline,
                &history,
                self.config.keep_last_pairs,
            )),
            Target::Observation => {
                let raw = &self.trajectory.get(event.step)?.raw_observation;
                Some(observation_prompt(guideline, &history, raw))
            }
        }
    }
}

fn used_guidelines(config: &RunConfig, guidelines: &BTreeMap<String, Guideline>) -> Vec<Guideline> {
    [
        config.history.guideline_id(),
        config.observation.guideline_id(),
    ]
    .into_iter()
    .flatten()
    .filter_map(|id| guidelines.get(id).cloned())
    .collect()
}

/// Runs one episode. Only setup problems are errors; model failures end the
/// episode and are reported in [`TaskRun::error`].
pub fn run_task(
    spec: &EnvSpec,
    task_id: &str,
    config: &RunConfig,
    guidelines: &BTreeMap<String, Guideline>,
    runtime: &Runtime,
) -> Result<TaskRun> {
    let tok = runtime.tokenizer.as_ref();
    let env = Environment::new(spec, task_id, tok)?;
    let gate = config.gate();
    let compressor_env = CompressorEnv {
        gateway: &runtime.compressor,
        model: &config.models.compressor,
        seed: config.seed,
        tokenizer: tok,
        embedder: runtime.embedder.as_ref(),
        guidelines,
    };
    let system_tokens = tok.count(AGENT_SYSTEM_PROMPT) as u64;

    let mut history = InteractionHistory::new(env.instruction());
    let mut state = EnvState::default();
    let mut ledger = TokenLedger::new();
    let mut trajectory = Vec::new();
    let mut events = Vec::new();
    let mut error = None;
    let mut cooldown = 0usize;

    for step in 0..config.step_limit {
        let context = render_context(&history);
        let context_tokens = tok.count(&context);
        let mut request = ChatRequest::new(
            config.models.agent.as_str(),
            vec![Message::system(AGENT_SYSTEM_PROMPT), Message::user(context)],
        );
        request.seed = config.seed;
        let action = match runtime.agent.complete_recorded(
            &request,
            &mut ledger,
            Channel::Agent,
            step,
            system_tokens,
        ) {
            Ok(r) => r.content,
            Err(e) => {
                log::warn!("task {task_id}: agent call failed at step {step}: {e}");
                error = Some(e.to_string());
                break;
            }
        };
        let (next, raw) = env.step(&state, &action)?;
        state = next;
        if state.terminated {
            trajectory.push(TrajectoryStep {
                index: step,
                action,
                observation: raw.clone(),
                raw_observation: raw,
                context_tokens,
            });
            break;
        }

        let observation = match maybe_compress_observation(
            &raw,
            &history,
            &gate,
            &config.observation,
            &compressor_env,
            &mut ledger,
            step,
        ) {
            Ok(out) => {
                events.extend(out.event);
                out.observation
            }
            Err(e) => {
                events.push(failed_event(
                    step,
                    Target::Observation,
                    &config.observation.to_string(),
                    tok.count(&raw),
                    &history,
                    &e,
                ));
                raw.clone()
            }
        };
        history.push(Turn::new(step, action.clone(), observation.clone(), tok))?;
        trajectory.push(TrajectoryStep {
            index: step,
            action,
            raw_observation: raw,
            observation,
            context_tokens,
        });

        if cooldown > 0 {
            cooldown -= 1;
            continue;
        }
        match maybe_compress_history(
            &history,
            &gate,
            &config.history,
            &compressor_env,
            &mut ledger,
            step,
        ) {
            Ok(out) => {
                if out
                    .event
                    .as_ref()
                    .is_some_and(|e| e.outcome == EventOutcome::Applied)
                {
                    cooldown = config.history_cooldown;
                }
                events.extend(out.event);
                history = out.history;
            }
            Err(e) => {
                let before = tok.count(&render_context(&history));
                events.push(failed_event(
                    step,
                    Target::History,
                    config.history.method(),
                    before,
                    &history,
                    &e,
                ));
            }
        }
    }

    let reward = if state.terminated {
        env.reward(&state)?
    } else {
        env.partial_reward(&state)
    };
    let success = state.terminated && error.is_none() && reward >= config.success_threshold;
    let metrics = MetricsReport::for_run(
        state.step,
        success,
        reward,
        &ledger,
        &runtime.pricing,
        &config.metrics,
    )?;
    Ok(TaskRun {
        task_id: task_id.to_string(),
        task_text: history.task_text.clone(),
        config: config.clone(),
        guidelines: used_guidelines(config, guidelines),
        trajectory,
        steps: state.step,
        terminated: state.terminated,
        success,
        reward,
        ledger,
        compression_events: events,
        metrics,
        error,
    })
}

fn failed_event(
    step: usize,
    target: Target,
    method: &str,
    tokens: usize,
    history: &InteractionHistory,
    error: &dyn std::fmt::Display,
) -> CompressionEvent {
    log::warn!("compressor failed at step {step}: {error}; continuing uncompressed");
    CompressionEvent {
        step,
        target,
        method: method.split(':').next().unwrap_or(method).to_string(),
        tokens_before: tokens,
        tokens_after: tokens,
        outcome: EventOutcome::CompressorFailed {
            error: error.to_string(),
        },
        context_before: ContextState::of(history),
        context_after: ContextState::of(history),
        call: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub runs: Vec<TaskRun>,
    pub aggregate: MetricsReport,
}

/// Runs `task_ids` on at most `config.parallelism` threads; results keep the
/// input order.
pub fn run_suite(
    spec: &EnvSpec,
    task_ids: &[String],
    config: &RunConfig,
    guidelines: &BTreeMap<String, Guideline>,
    runtime: &Runtime,
) -> Result<SuiteResult> {
    if task_ids.is_empty() {
        return Err(Error::Config("task set is empty".into()));
    }
    for id in task_ids {
        spec.task(id)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let runs = pool.install(|| {
        task_ids
            .par_iter()
            .map(|id| run_task(spec, id, config, guidelines, runtime))
            .collect::<Result<Vec<_>>>()
    })?;
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.metrics.clone()).collect();
    Ok(SuiteResult {
        aggregate: MetricsReport::aggregate(&reports),
        runs,
    })
}

/// Runs a task set with one guideline swapped in; the optimizer's view of
/// the agent.
pub trait EpisodeRunner: Sync {
    /// `None` runs without any compression.
    fn run(&self, task_ids: &[String], guideline: Option<&Guideline>) -> Result<Vec<TaskRun>>;
}

pub struct SuiteRunner<'a> {
    pub spec: &'a EnvSpec,
    pub config: RunConfig,
    pub guidelines: BTreeMap<String, Guideline>,
    pub runtime: Runtime,
}

impl EpisodeRunner for SuiteRunner<'_> {
    fn run(&self, task_ids: &[String], guideline: Option<&Guideline>) -> Result<Vec<TaskRun>> {
        let Some(g) = guideline else {
            return Ok(run_suite(
                self.spec,
                task_ids,
                &self.config.uncompressed(),
                &self.guidelines,
                &self.runtime,
            )?
            .runs);
        };
        let mut config = self.config.clone();
        let kind = crate::compression::CompressorKind::Generative {
            guideline: g.id.clone(),
        };
        match g.kind {
            crate::guideline::GuidelineKind::History => config.history = kind,
            crate::guideline::GuidelineKind::Observation => config.observation = kind,
            other => {
                return Err(Error::Config(format!(
                    "cannot run episodes with a {other} guideline"
                )))
            }
        }
        let mut guidelines = self.guidelines.clone();
        guidelines.insert(g.id.clone(), g.clone());
        Ok(run_suite(self.spec, task_ids, &config, &guidelines, &self.runtime)?.runs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::CompressorKind;
    use crate::gateway::GatewayError;
    use crate::sim::{generate, GenParams, Objective, TaskSpec};
    use crate::templates::{HISTORY_DEFAULT_ID, OBSERVATION_DEFAULT_ID};

    fn two_objective_spec() -> EnvSpec {
        let corpus = [
            ("d0", "The color of Blarn is Teal."),
            ("d1", "The capital of Zorbia is Quillon."),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        EnvSpec {
            corpus,
            tasks: vec![TaskSpec {
                id: "t".into(),
                objectives: vec![
                    Objective {
                        question: "What is the color of Blarn?".into(),
                        answer: "Teal".into(),
                    },
                    Objective {
                        question: "What is the capital of Zorbia?".into(),
                        answer: "Quillon".into(),
                    },
                ],
            }],
            search_top_k: 2,
            padding: 0,
        }
    }

    fn guidelines() -> BTreeMap<String, Guideline> {
        RunConfig::default().resolve_guidelines().unwrap()
    }

    #[test]
    fn oracle_agent_finishes_in_objectives_plus_one() {
        let spec = two_objective_spec();
        let agent = Gateway::new(Arc::new(LocalBackend::new(
            "oracle",
            ScriptedAgent::oracle(&spec),
        )));
        let rt = Runtime::new(agent, Runtime::offline().compressor);
        let run = run_task(&spec, "t", &RunConfig::default(), &guidelines(), &rt).unwrap();
        assert!(run.success);
        assert_eq!(run.steps, 3);
        assert_eq!(run.reward, 1.0);
        assert_eq!(
            run.metrics,
            run.recompute_metrics(&PricingTable::reference()).unwrap()
        );
    }

    #[test]
    fn no_compression_means_no_events_and_growing_context() {
        let spec = generate(&GenParams {
            tasks: 1,
            objectives: 4,
            ..GenParams::default()
        });
        let config = RunConfig::default().uncompressed();
        let run = run_task(
            &spec,
            "task-000",
            &config,
            &guidelines(),
            &Runtime::offline(),
        )
        .unwrap();
        assert!(run.success, "{:?}", run.error);
        assert!(run.compression_events.is_empty());
        for w in run.trajectory.windows(2) {
            assert!(w[1].context_tokens > w[0].context_tokens);
        }
    }

    #[test]
    fn every_search_triggers_one_observation_compression() {
        let spec = generate(&GenParams {
            tasks: 1,
            objectives: 3,
            padding: 200,
            top_k: 3,
            ..GenParams::default()
        });
        let config = RunConfig {
            t_obs: 400,
            history: CompressorKind::None,
            observation: CompressorKind::Generative {
                guideline: OBSERVATION_DEFAULT_ID.into(),
            },
            ..RunConfig::default()
        };
        let run = run_task(
            &spec,
            "task-000",
            &config,
            &guidelines(),
            &Runtime::offline(),
        )
        .unwrap();
        let searches: Vec<usize> = run
            .trajectory
            .iter()
            .filter(|s| s.action.starts_with("search("))
            .map(|s| s.index)
            .collect();
        let obs_events: Vec<usize> = run
            .compression_events
            .iter()
            .filter(|e| e.target == Target::Observation)
            .map(|e| e.step)
            .collect();
        assert_eq!(searches, obs_events);
        assert!(run.success);
    }

    #[test]
    fn default_summary_loses_facts_and_fails() {
        let spec = generate(&GenParams {
            tasks: 1,
            objectives: 6,
            padding: 150,
            top_k: 3,
            ..GenParams::default()
        });
        let config = RunConfig {
            t_hist: 1200,
            ..RunConfig::default()
        };
        let run = run_task(
            &spec,
            "task-000",
            &config,
            &guidelines(),
            &Runtime::offline(),
        )
        .unwrap();
        assert!(run
            .compression_events
            .iter()
            .any(|e| e.outcome == EventOutcome::Applied));
        assert!(!run.success);
        // the recorded prompts can be rebuilt from the stored state
        for e in run.compression_events.iter().filter(|e| e.call.is_some()) {
            assert_eq!(
                run.replay_prompt(e).as_deref(),
                Some(e.call.as_ref().unwrap().prompt.as_str())
            );
        }
        assert!(run.transcript().contains("### Session 2"));
    }

    #[test]
    fn aborted_run_is_a_contained_failure() {
        let spec = two_objective_spec();
        let failing = Gateway::new(Arc::new(LocalBackend::new("down", |_: &ChatRequest| {
            Err(GatewayError::Transient("503".into()))
        })))
        .with_retry(RetryPolicy::immediate(1));
        let rt = Runtime::new(failing, Runtime::offline().compressor);
        let suite = run_suite(
            &spec,
            &["t".to_string()],
            &RunConfig::default(),
            &guidelines(),
            &rt,
        )
        .unwrap();
        let run = &suite.runs[0];
        assert!(!run.success);
        assert!(run.error.as_deref().unwrap().contains("attempts"));
        assert_eq!(suite.aggregate.success_rate, 0.0);
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let spec = generate(&GenParams {
            tasks: 4,
            objectives: 3,
            ..GenParams::default()
        });
        let ids = spec.task_ids();
        let one = RunConfig {
            parallelism: 1,
            t_hist: 900,
            ..RunConfig::default()
        };
        let four = RunConfig {
            parallelism: 4,
            ..one.clone()
        };
        let a = run_suite(&spec, &ids, &one, &guidelines(), &Runtime::offline()).unwrap();
        let b = run_suite(&spec, &ids, &four, &guidelines(), &Runtime::offline()).unwrap();
        let strip = |s: &SuiteResult| {
            s.runs
                .iter()
                .map(|r| (r.trajectory.clone(), r.ledger.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.aggregate, b.aggregate);
        assert_eq!(
            a.runs.iter().map(|r| r.task_id.clone()).collect::<Vec<_>>(),
            ids
        );
    }

    #[test]
    fn single_task_suite_aggregate_matches_run() {
        let spec = two_objective_spec();
        let suite = run_suite(
            &spec,
            &["t".to_string()],
            &RunConfig::default(),
            &guidelines(),
            &Runtime::offline(),
        )
        .unwrap();
        assert_eq!(suite.aggregate, suite.runs[0].metrics);
    }

    #[test]
    fn history_default_is_a_history_guideline() {
        assert!(guidelines().contains_key(HISTORY_DEFAULT_ID));
    }
}
