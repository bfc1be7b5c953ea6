//! Token ledger, pricing, and efficiency metrics.
//!
//! Every model call is recorded as a [`CallRecord`] on a channel (agent,
//! compressor, optimizer). Metrics are pure functions of the ledger:
//!
//! * peak tokens: the largest single-call input, minus the system prompt;
//! * dependency: `sum((n_in + 2 * n_out) * n_out / 2)` over agent calls,
//!   the area under the context-length curve while generating;
//! * API cost: uncached, cached and output tokens at per-million rates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Agent,
    Compressor,
    Optimizer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub channel: Channel,
    pub step: usize,
    pub model: String,
    pub input_tokens: u64,
    pub cached_input_tokens: u64,
    pub output_tokens: u64,
    /// Tokens of the system prompt inside `input_tokens`.
    #[serde(default)]
    pub system_tokens: u64,
}

impl CallRecord {
    pub fn context_tokens(&self) -> u64 {
        self.input_tokens.saturating_sub(self.system_tokens)
    }

    pub fn uncached_input_tokens(&self) -> u64 {
        self.input_tokens - self.cached_input_tokens
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub records: Vec<CallRecord>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record, clamping `cached_input_tokens` to `input_tokens`.
    pub fn record(&mut self, mut record: CallRecord) {
        record.cached_input_tokens = record.cached_input_tokens.min(record.input_tokens);
        self.records.push(record);
    }

    pub fn extend(&mut self, other: &TokenLedger) {
        self.records.extend(other.records.iter().cloned());
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn calls<'a>(&'a self, scope: Scope) -> impl Iterator<Item = &'a CallRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| scope.includes(r.channel))
    }

    pub fn total_input(&self, scope: Scope) -> u64 {
        self.calls(scope).map(|r| r.input_tokens).sum()
    }

    pub fn total_context(&self, scope: Scope) -> u64 {
        self.calls(scope).map(CallRecord::context_tokens).sum()
    }
}

/// Which channels a metric sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Agent,
    AgentAndCompressor,
    All,
}

impl Scope {
    pub fn includes(self, channel: Channel) -> bool {
        match self {
            Scope::Agent => channel == Channel::Agent,
            Scope::AgentAndCompressor => channel != Channel::Optimizer,
            Scope::All => true,
        }
    }
}

/// Twice the dependency, kept integral so it can be compared exactly.
pub fn dependency_doubled(ledger: &TokenLedger, scope: Scope) -> u128 {
    ledger
        .calls(scope)
        .map(|r| {
            let n_in = u128::from(r.input_tokens);
            let n_out = u128::from(r.output_tokens);
            (n_in + 2 * n_out) * n_out
        })
        .sum()
}

pub fn dependency(ledger: &TokenLedger) -> f64 {
    dependency_in(ledger, Scope::Agent)
}

pub fn dependency_in(ledger: &TokenLedger, scope: Scope) -> f64 {
    dependency_doubled(ledger, scope) as f64 / 2.0
}

pub fn peak_tokens(ledger: &TokenLedger) -> u64 {
    peak_tokens_in(ledger, Scope::Agent)
}

pub fn peak_tokens_in(ledger: &TokenLedger, scope: Scope) -> u64 {
    ledger
        .calls(scope)
        .map(CallRecord::context_tokens)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRates {
    pub input: f64,
    pub cached_input: f64,
    pub output: f64,
}

/// USD per one million tokens, by model name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable {
    pub models: BTreeMap<String, ModelRates>,
}

impl PricingTable {
    /// Published list prices used for the cost analysis: gpt-4.1,
    /// gpt-4.1-mini, and an OpenRouter quote for Qwen3-14B.
    pub fn reference() -> Self {
        let mut models = BTreeMap::new();
        models.insert(
            "gpt-4.1".into(),
            ModelRates {
                input: 3.00,
                cached_input: 0.75,
                output: 12.00,
            },
        );
        models.insert(
            "gpt-4.1-mini".into(),
            ModelRates {
                input: 0.80,
                cached_input: 0.20,
                output: 3.20,
            },
        );
        models.insert(
            "qwen3-14b".into(),
            ModelRates {
                input: 0.06,
                cached_input: 0.015,
                output: 0.24,
            },
        );
        PricingTable { models }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        for (model, r) in &self.models {
            let bad = |reason: &str| MetricsError::InvalidPricing {
                model: model.clone(),
                reason: reason.to_string(),
            };
            if !(r.input >= 0.0 && r.cached_input >= 0.0 && r.output >= 0.0) {
                return Err(bad("rates must be non-negative"));
            }
            if r.cached_input > r.input {
                return Err(bad("cached input rate exceeds input rate"));
            }
        }
        Ok(())
    }

    pub fn rates(&self, model: &str) -> Result<&ModelRates, MetricsError> {
        self.models
            .get(model)
            .ok_or_else(|| MetricsError::UnknownModel(model.to_string()))
    }

    pub fn with_model(mut self, model: impl Into<String>, rates: ModelRates) -> Self {
        self.models.insert(model.into(), rates);
        self
    }
}

fn priced(r: &CallRecord, rates: &ModelRates) -> f64 {
    (r.uncached_input_tokens() as f64 * rates.input
        + r.cached_input_tokens as f64 * rates.cached_input
        + r.output_tokens as f64 * rates.output)
        / 1_000_000.0
}

/// Cost of every call in the ledger at `model`'s rates.
pub fn api_cost(
    ledger: &TokenLedger,
    pricing: &PricingTable,
    model: &str,
) -> Result<f64, MetricsError> {
    let rates = pricing.rates(model)?;
    Ok(ledger.records.iter().map(|r| priced(r, rates)).sum())
}

/// Cost of the calls in `scope`, each at the rates of the model it used.
pub fn api_cost_by_call(
    ledger: &TokenLedger,
    pricing: &PricingTable,
    scope: Scope,
) -> Result<f64, MetricsError> {
    ledger
        .calls(scope)
        .map(|r| pricing.rates(&r.model).map(|rates| priced(r, rates)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub cost_scope: Scope,
    pub dependency_scope: Scope,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            cost_scope: Scope::AgentAndCompressor,
            dependency_scope: Scope::Agent,
        }
    }
}

/// Efficiency summary for one run or an aggregate over runs.
///
/// For an aggregate, `steps`, `peak_tokens` and `dependency` are means over
/// tasks, `max_peak_tokens` is the largest single call seen, and
/// `api_cost_usd` is the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub steps: f64,
    pub peak_tokens: f64,
    pub max_peak_tokens: u64,
    pub dependency: f64,
    pub api_cost_usd: f64,
}

impl MetricsReport {
    pub fn for_run(
        steps: usize,
        success: bool,
        reward: f64,
        ledger: &TokenLedger,
        pricing: &PricingTable,
        options: &MetricsOptions,
    ) -> Result<Self, MetricsError> {
        let peak = peak_tokens(ledger);
        Ok(MetricsReport {
            tasks: 1,
            success_rate: if success { 1.0 } else { 0.0 },
            mean_reward: reward,
            steps: steps as f64,
            peak_tokens: peak as f64,
            max_peak_tokens: peak,
            dependency: dependency_in(ledger, options.dependency_scope),
            api_cost_usd: api_cost_by_call(ledger, pricing, options.cost_scope)?,
        })
    }

    pub fn aggregate(reports: &[MetricsReport]) -> MetricsReport {
        if reports.is_empty() {
            return MetricsReport {
                tasks: 0,
                success_rate: 0.0,
                mean_reward: 0.0,
                steps: 0.0,
                peak_tokens: 0.0,
                max_peak_tokens: 0,
                dependency: 0.0,
                api_cost_usd: 0.0,
            };
        }
        let n = reports.iter().map(|r| r.tasks).sum::<usize>().max(1) as f64;
        let weighted = |f: fn(&MetricsReport) -> f64| {
            reports.iter().map(|r| f(r) * r.tasks as f64).sum::<f64>() / n
        };
        MetricsReport {
            tasks: reports.iter().map(|r| r.tasks).sum(),
            success_rate: weighted(|r| r.success_rate),
            mean_reward: weighted(|r| r.mean_reward),
            steps: weighted(|r| r.steps),
            peak_tokens: weighted(|r| r.peak_tokens),
            max_peak_tokens: reports.iter().map(|r| r.max_peak_tokens).max().unwrap_or(0),
            dependency: weighted(|r| r.dependency),
            api_cost_usd: reports.iter().map(|r| r.api_cost_usd).sum(),
        }
    }
}

const COLUMNS: [&str; 8] = [
    "label",
    "tasks",
    "success",
    "steps",
    "peak",
    "max_peak",
    "dependency",
    "cost_usd",
];

/// Fixed-width text table, one row per labelled report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let label_w = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(std::iter::once(COLUMNS[0].len()))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<lw$} {:>6} {:>8} {:>8} {:>10} {:>10} {:>14} {:>12}",
        COLUMNS[0],
        COLUMNS[1],
        COLUMNS[2],
        COLUMNS[3],
        COLUMNS[4],
        COLUMNS[5],
        COLUMNS[6],
        COLUMNS[7],
        lw = label_w
    );
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{:<lw$} {:>6} {:>8.3} {:>8.2} {:>10.1} {:>10} {:>14.1} {:>12.6}",
            label,
            r.tasks,
            r.success_rate,
            r.steps,
            r.peak_tokens,
            r.max_peak_tokens,
            r.dependency,
            r.api_cost_usd,
            lw = label_w
        );
    }
    out
}

pub fn format_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            label.replace(',', ";"),
            r.tasks,
            r.success_rate,
            r.steps,
            r.peak_tokens,
            r.max_peak_tokens,
            r.dependency,
            r.api_cost_usd
        );
    }
    out
}
