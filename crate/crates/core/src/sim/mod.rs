//! A deterministic lookup-QA environment and rule-based stand-ins for the
//! agent, compressor and optimizer models, so whole pipelines run offline.

pub mod agent;
pub mod env;
pub mod rules;

pub use agent::{AgentStrategy, ScriptedAgent, AGENT_SYSTEM_PROMPT};
pub use env::{generate, EnvSpec, EnvState, Environment, GenParams, Objective, TaskSpec};
pub use rules::{
    RuleCompressor, RuleOptimizer, DIRECTIVE_KEEP_FACTS, DIRECTIVE_RELEVANT_ONLY, DIRECTIVE_TERSE,
};
