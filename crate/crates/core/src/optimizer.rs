//! Alternating guideline optimization.
//!
//! Each round has two stages. The utility stage contrasts tasks that succeed
//! without compression but fail with it, asks the optimizer model what the
//! compressed context lost, samples `k` revised guidelines and keeps the one
//! with the best success rate. The compression stage reviews successful
//! compressed runs for material nobody used, samples `k` shorter variants
//! and keeps the best by `success_rate - lambda * norm_cost`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent_loop::{EpisodeRunner, TaskRun};
use crate::error::OptimizeError;
use crate::gateway::{ChatRequest, Gateway, Message};
use crate::guideline::{builtin, Guideline, GuidelineKind};
use crate::io::write_json;
use crate::metrics::{Channel, TokenLedger};
use crate::rng::{substream, CANDIDATE_NONCE};
use crate::templates::{self, ORIGINAL_PROMPT_MARKER};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveRecord {
    pub task_id: String,
    pub baseline_run: TaskRun,
    pub compressed_run: TaskRun,
    pub baseline_context: String,
    pub compressed_context: String,
}

/// Tasks that succeeded without compression and failed with it, by task id.
pub fn build_contrastive_set(
    baseline: &[TaskRun],
    compressed: &[TaskRun],
) -> Result<Vec<ContrastiveRecord>, OptimizeError> {
    let by_id = |runs: &[TaskRun]| -> BTreeMap<String, TaskRun> {
        runs.iter()
            .map(|r| (r.task_id.clone(), r.clone()))
            .collect()
    };
    let base = by_id(baseline);
    let comp = by_id(compressed);
    if base.len() != baseline.len()
        || comp.len() != compressed.len()
        || !base.keys().eq(comp.keys())
    {
        return Err(OptimizeError::MismatchedTaskSets);
    }
    Ok(base
        .into_iter()
        .zip(comp.into_values())
        .filter(|((_, b), c)| b.success && !c.success)
        .map(|((task_id, b), c)| ContrastiveRecord {
            task_id,
            baseline_context: b.transcript(),
            compressed_context: c.transcript(),
            baseline_run: b,
            compressed_run: c,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Utility,
    Compression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub task_id: String,
    pub stage: Stage,
    pub text: String,
}

/// The optimizer model, with its own usage ledger.
pub struct OptimizerClient {
    pub gateway: Gateway,
    pub model: String,
    pub seed: u64,
    ledger: Mutex<TokenLedger>,
}

impl OptimizerClient {
    pub fn new(gateway: Gateway, model: impl Into<String>, seed: u64) -> Self {
        OptimizerClient {
            gateway,
            model: model.into(),
            seed,
            ledger: Mutex::new(TokenLedger::new()),
        }
    }

    pub fn ask(&self, prompt: String) -> Result<String, OptimizeError> {
        let mut request = ChatRequest::new(self.model.as_str(), vec![Message::user(prompt)]);
        request.seed = self.seed;
        let mut ledger = self.ledger.lock().expect("optimizer ledger");
        let step = ledger.records.len();
        Ok(self
            .gateway
            .complete_recorded(&request, &mut ledger, Channel::Optimizer, step, 0)?
            .content)
    }

    pub fn ledger(&self) -> TokenLedger {
        self.ledger.lock().expect("optimizer ledger").clone()
    }
}

fn bool_text(b: bool) -> String {
    b.to_string()
}

pub fn generate_feedback_ut(
    record: &ContrastiveRecord,
    guideline: &Guideline,
    client: &OptimizerClient,
) -> Result<FeedbackItem, OptimizeError> {
    guideline.expect_kind(GuidelineKind::FeedbackInstruction)?;
    let b = &record.baseline_run;
    let c = &record.compressed_run;
    let mut values = BTreeMap::new();
    values.insert("task", b.task_text.clone());
    values.insert("task_name", record.task_id.clone());
    values.insert("baseline_history", record.baseline_context.clone());
    values.insert("optimized_history", record.compressed_context.clone());
    values.insert("baseline_success", bool_text(b.success));
    values.insert("optimized_success", bool_text(c.success));
    values.insert("baseline_env_steps", b.steps.to_string());
    values.insert("optimized_env_steps", c.steps.to_string());
    values.insert(
        "step_ratio",
        format!("{:.3}", c.steps as f64 / b.steps.max(1) as f64),
    );
    values.insert(
        "failure_report",
        c.error
            .clone()
            .unwrap_or_else(|| format!("reward {:.3}", c.reward)),
    );
    let text = client.ask(guideline.render(&values))?;
    feedback_item(&record.task_id, Stage::Utility, text)
}

fn feedback_item(task_id: &str, stage: Stage, text: String) -> Result<FeedbackItem, OptimizeError> {
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(OptimizeError::EmptyFeedback(task_id.to_string()));
    }
    Ok(FeedbackItem {
        task_id: task_id.to_string(),
        stage,
        text,
    })
}

pub fn generate_feedback_co(
    runs: &[TaskRun],
    guideline: &Guideline,
    client: &OptimizerClient,
) -> Result<Vec<FeedbackItem>, OptimizeError> {
    guideline.expect_kind(GuidelineKind::CompressFeedbackInstruction)?;
    runs.iter()
        .map(|run| {
            if !run.success {
                return Err(OptimizeError::InvalidArgument(format!(
                    "run `{}` did not succeed; compression feedback needs successful runs",
                    run.task_id
                )));
            }
            let mut values = BTreeMap::new();
            values.insert("task", run.task_text.clone());
            values.insert("task_name", run.task_id.clone());
            values.insert("optimized_history", run.transcript());
            values.insert("optimized_success", bool_text(run.success));
            values.insert("optimized_env_steps", run.steps.to_string());
            feedback_item(
                &run.task_id,
                Stage::Compression,
                client.ask(guideline.render(&values))?,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub success_rate: f64,
    pub mean_cost: f64,
    pub norm_cost: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub parent: Guideline,
    pub candidates: Vec<Guideline>,
    pub scores: Vec<Option<CandidateScore>>,
    pub selected: Option<usize>,
}

/// Pulls a template out of an optimizer reply: code fences are dropped and,
/// when the reply repeats the sentinel markers, only the text between them
/// is kept.
pub fn parse_candidate(output: &str) -> String {
    let mut text = output.trim();
    if let Some(start) = text.find(ORIGINAL_PROMPT_MARKER) {
        let rest = &text[start + ORIGINAL_PROMPT_MARKER.len()..];
        if let Some(end) = rest.find(ORIGINAL_PROMPT_MARKER) {
            text = rest[..end].trim();
        }
    }
    if let Some(inner) = text.strip_prefix("```") {
        let inner = inner.split_once('\n').map_or(inner, |(_, body)| body);
        text = inner.strip_suffix("```").unwrap_or(inner).trim();
    }
    text.to_string()
}

/// Samples up to `k` revisions of `parent`.
///
/// Every request carries a distinct `[sample candidate=<i> attempt=<a>
/// nonce=<hex>]` line so deterministic backends can still vary their
/// answers. Invalid templates are re-requested up to `retries` times.
pub fn update_guideline(
    parent: &Guideline,
    feedback: &[FeedbackItem],
    update_template: &Guideline,
    k: usize,
    retries: usize,
    client: &OptimizerClient,
    rng: &mut impl Rng,
) -> Result<CandidateSet, OptimizeError> {
    if feedback.is_empty() {
        return Err(OptimizeError::NoFeedback);
    }
    if k == 0 {
        return Err(OptimizeError::InvalidArgument(
            "k must be at least 1".into(),
        ));
    }
    if !matches!(
        update_template.kind,
        GuidelineKind::UpdateInstruction | GuidelineKind::CompressUpdateInstruction
    ) {
        return Err(OptimizeError::InvalidArgument(format!(
            "`{}` is not an update instruction",
            update_template.id
        )));
    }
    let joined = feedback
        .iter()
        .enumerate()
        .map(|(i, f)| format!("[{}] task {}:\n{}", i + 1, f.task_id, f.text))
        .collect::<Vec<_>>()
        .join("\n\n");
    let mut values = BTreeMap::new();
    values.insert("original_prompt", parent.template.clone());
    values.insert("feedback", joined);
    values.insert(
        "avg_orig_chars",
        parent.template.chars().count().to_string(),
    );
    let base = update_template.render(&values);

    let mut candidates = Vec::new();
    for i in 0..k {
        for attempt in 0..=retries {
            let nonce: u32 = rng.random();
            let prompt =
                format!("{base}\n\n[sample candidate={i} attempt={attempt} nonce={nonce:08x}]");
            let text = parse_candidate(&client.ask(prompt)?);
            match parent.child(text) {
                Ok(c) => {
                    candidates.push(c);
                    break;
                }
                Err(e) => log::warn!("candidate {i} attempt {attempt} rejected: {e}"),
            }
        }
    }
    if candidates.is_empty() {
        return Err(OptimizeError::AllCandidatesInvalid);
    }
    if candidates.len() < k {
        log::warn!("only {} of {k} candidates are valid", candidates.len());
    }
    let n = candidates.len();
    Ok(CandidateSet {
        parent: parent.clone(),
        candidates,
        scores: vec![None; n],
        selected: None,
    })
}

/// Highest success rate; ties go to the lower mean cost, then the lower index.
pub fn pick_by_reward(scores: &[(f64, f64)]) -> Option<usize> {
    pick(scores, |&(rate, _)| rate)
}

/// Highest `rate - lambda * cost / max_cost`, with the same tie-breaks as
/// [`pick_by_reward`]. With `max_cost == 0` every normalized cost is 0.
pub fn pick_by_reward_cost(scores: &[(f64, f64)], lambda: f64) -> Option<usize> {
    let max = scores.iter().map(|s| s.1).fold(0.0, f64::max);
    pick(scores, |&(rate, cost)| rate - lambda * norm(cost, max))
}

fn norm(cost: f64, max: f64) -> f64 {
    if max > 0.0 {
        cost / max
    } else {
        0.0
    }
}

fn pick(scores: &[(f64, f64)], value: impl Fn(&(f64, f64)) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let v = value(s);
        let better = match best {
            None => true,
            Some((j, bv)) => v > bv || (v == bv && s.1 < scores[j].1),
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn success_rate(runs: &[TaskRun]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    runs.iter().filter(|r| r.success).count() as f64 / runs.len() as f64
}

fn mean_cost(runs: &[TaskRun]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    runs.iter().map(|r| r.context_cost() as f64).sum::<f64>() / runs.len() as f64
}

/// (success rate, mean context cost) per candidate. A failed evaluation
/// scores zero success at the highest cost seen.
fn evaluate(
    cands: &CandidateSet,
    eval_tasks: &[String],
    runner: &dyn EpisodeRunner,
) -> Result<Vec<(f64, f64)>, OptimizeError> {
    if eval_tasks.is_empty() {
        return Err(OptimizeError::InvalidArgument(
            "evaluation task set is empty".into(),
        ));
    }
    if cands.candidates.is_empty() {
        return Err(OptimizeError::NoCandidates);
    }
    let raw: Vec<Option<(f64, f64)>> = cands
        .candidates
        .iter()
        .map(|c| match runner.run(eval_tasks, Some(c)) {
            Ok(runs) => Some((success_rate(&runs), mean_cost(&runs))),
            Err(e) => {
                log::warn!("evaluating candidate v{} failed: {e}", c.version);
                None
            }
        })
        .collect();
    let worst = raw.iter().flatten().map(|s| s.1).fold(0.0, f64::max);
    Ok(raw.into_iter().map(|s| s.unwrap_or((0.0, worst))).collect())
}

fn record_scores(cands: &mut CandidateSet, scores: &[(f64, f64)], lambda: f64) {
    let max = scores.iter().map(|s| s.1).fold(0.0, f64::max);
    cands.scores = scores
        .iter()
        .map(|&(rate, cost)| {
            let norm_cost = norm(cost, max);
            Some(CandidateScore {
                success_rate: rate,
                mean_cost: cost,
                norm_cost,
                score: rate - lambda * norm_cost,
            })
        })
        .collect();
}

pub fn select_by_reward(
    cands: &mut CandidateSet,
    eval_tasks: &[String],
    runner: &dyn EpisodeRunner,
) -> Result<Guideline, OptimizeError> {
    let scores = evaluate(cands, eval_tasks, runner)?;
    record_scores(cands, &scores, 0.0);
    let i = pick_by_reward(&scores).ok_or(OptimizeError::NoCandidates)?;
    cands.selected = Some(i);
    Ok(cands.candidates[i].clone())
}

pub fn select_by_reward_cost(
    cands: &mut CandidateSet,
    eval_tasks: &[String],
    runner: &dyn EpisodeRunner,
    lambda: f64,
) -> Result<Guideline, OptimizeError> {
    if !(lambda >= 0.0) {
        return Err(OptimizeError::InvalidArgument(
            "lambda must be non-negative".into(),
        ));
    }
    let scores = evaluate(cands, eval_tasks, runner)?;
    record_scores(cands, &scores, lambda);
    let i = pick_by_reward_cost(&scores, lambda).ok_or(OptimizeError::NoCandidates)?;
    cands.selected = Some(i);
    Ok(cands.candidates[i].clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageAEval {
    /// The contrastive tasks themselves.
    Contrastive,
    /// Every training task the uncompressed agent solves.
    BaselineSuccesses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub rounds: usize,
    pub k: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub candidate_retries: usize,
    pub stage_a_eval: StageAEval,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            rounds: 3,
            k: 5,
            lambda: 0.1,
            epsilon: 0.01,
            candidate_retries: 2,
            stage_a_eval: StageAEval::Contrastive,
            seed: 42,
        }
    }
}

pub struct OptimizerTemplates {
    pub feedback: Guideline,
    pub update: Guideline,
    pub compress_feedback: Guideline,
    pub compress_update: Guideline,
}

impl Default for OptimizerTemplates {
    fn default() -> Self {
        let get = |id| builtin(id).expect("built-in optimizer template");
        OptimizerTemplates {
            feedback: get(templates::FEEDBACK_DEFAULT_ID),
            update: get(templates::UPDATE_DEFAULT_ID),
            compress_feedback: get(templates::COMPRESS_FEEDBACK_DEFAULT_ID),
            compress_update: get(templates::COMPRESS_UPDATE_DEFAULT_ID),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Initial,
    Utility,
    Compression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub version: u32,
    pub template: String,
    pub score: Option<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub round: usize,
    pub stage: EntryKind,
    /// The incumbent after this stage.
    pub guideline: Guideline,
    pub accepted: bool,
    pub eval_tasks: Vec<String>,
    /// Incumbent's (success rate, mean cost) on `eval_tasks` before the stage.
    pub incumbent: Option<(f64, f64)>,
    pub selected: Option<usize>,
    pub candidates: Vec<CandidateRecord>,
    pub feedback: Vec<FeedbackItem>,
    /// Train-set `success_rate - lambda * cost / baseline_cost` at the end
    /// of the round (initial entry: before any update).
    pub round_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub entries: Vec<LineageEntry>,
    pub best: Guideline,
    pub rounds_run: usize,
    pub stopped_early: bool,
    pub optimizer_ledger: TokenLedger,
}

impl Lineage {
    /// Writes every guideline version, `best.txt`, and `lineage.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let g = &e.guideline;
            if seen.insert((g.id.clone(), g.version)) {
                g.save(dir, &format!("{}-v{}", g.id, g.version))?;
            }
        }
        self.best.save(dir, "best")?;
        write_json(&dir.join("lineage.json"), self)
    }
}

fn candidate_records(cands: &CandidateSet) -> Vec<CandidateRecord> {
    cands
        .candidates
        .iter()
        .zip(&cands.scores)
        .map(|(g, s)| CandidateRecord {
            version: g.version,
            template: g.template.clone(),
            score: *s,
        })
        .collect()
}

fn restrict(runs: &[TaskRun], ids: &[String]) -> Vec<TaskRun> {
    runs.iter()
        .filter(|r| ids.contains(&r.task_id))
        .cloned()
        .collect()
}

fn ids(runs: impl IntoIterator<Item = impl std::borrow::Borrow<TaskRun>>) -> Vec<String> {
    runs.into_iter()
        .map(|r| r.borrow().task_id.clone())
        .collect()
}

/// Runs up to `config.rounds` rounds from `initial` over `train`.
///
/// Stops early once a round improves the train score by less than
/// `config.epsilon`. A candidate replaces the incumbent only when it beats
/// the incumbent's measured score on the same evaluation tasks.
pub fn optimize(
    initial: &Guideline,
    train: &[String],
    runner: &dyn EpisodeRunner,
    client: &OptimizerClient,
    templates: &OptimizerTemplates,
    config: &OptimizeConfig,
) -> Result<Lineage> {
    if config.rounds == 0 {
        return Err(OptimizeError::InvalidArgument("rounds must be at least 1".into()).into());
    }
    if !matches!(
        initial.kind,
        GuidelineKind::History | GuidelineKind::Observation
    ) {
        return Err(OptimizeError::InvalidArgument(format!(
            "cannot optimize a {} guideline",
            initial.kind
        ))
        .into());
    }
    let mut rng = substream(config.seed, CANDIDATE_NONCE);
    let baseline = runner.run(train, None)?;
    let baseline_cost = mean_cost(&baseline);
    let round_score = |runs: &[TaskRun]| {
        success_rate(runs) - config.lambda * norm(mean_cost(runs), baseline_cost)
    };

    let mut incumbent = initial.clone();
    let mut current = runner.run(train, Some(&incumbent))?;
    let mut previous = round_score(&current);
    let entry = |round, stage, guideline: &Guideline| LineageEntry {
        round,
        stage,
        guideline: guideline.clone(),
        accepted: false,
        eval_tasks: Vec::new(),
        incumbent: None,
        selected: None,
        candidates: Vec::new(),
        feedback: Vec::new(),
        round_score: None,
        note: None,
    };
    let mut entries = vec![LineageEntry {
        round_score: Some(previous),
        ..entry(0, EntryKind::Initial, initial)
    }];
    let mut stopped_early = false;
    let mut rounds_run = 0;

    for round in 1..=config.rounds {
        rounds_run = round;

        // utility stage
        let contrastive = build_contrastive_set(&baseline, &current)?;
        let mut a = entry(round, EntryKind::Utility, &incumbent);
        if contrastive.is_empty() {
            a.note = Some("no contrastive tasks".into());
        } else {
            let feedback = contrastive
                .iter()
                .map(|r| generate_feedback_ut(r, &templates.feedback, client))
                .collect::<Result<Vec<_>, _>>()?;
            let mut cands = update_guideline(
                &incumbent,
                &feedback,
                &templates.update,
                config.k,
                config.candidate_retries,
                client,
                &mut rng,
            )?;
            let eval = match config.stage_a_eval {
                StageAEval::Contrastive => ids(&contrastive
                    .iter()
                    .map(|r| r.compressed_run.clone())
                    .collect::<Vec<_>>()),
                StageAEval::BaselineSuccesses => ids(baseline.iter().filter(|r| r.success)),
            };
            let before = restrict(&current, &eval);
            let inc = (success_rate(&before), mean_cost(&before));
            let winner = select_by_reward(&mut cands, &eval, runner)?;
            let rate = cands.scores[cands.selected.unwrap_or(0)].map_or(0.0, |s| s.success_rate);
            a.accepted = rate > inc.0 && winner.template != incumbent.template;
            if a.accepted {
                incumbent = winner;
                current = runner.run(train, Some(&incumbent))?;
            }
            a.guideline = incumbent.clone();
            a.eval_tasks = eval;
            a.incumbent = Some(inc);
            a.selected = cands.selected;
            a.candidates = candidate_records(&cands);
            a.feedback = feedback;
        }
        entries.push(a);

        // compression stage
        let successful: Vec<TaskRun> = current.iter().filter(|r| r.success).cloned().collect();
        let mut b = entry(round, EntryKind::Compression, &incumbent);
        if successful.is_empty() {
            b.note = Some("no successful compressed runs".into());
        } else {
            let feedback = generate_feedback_co(&successful, &templates.compress_feedback, client)?;
            let mut cands = update_guideline(
                &incumbent,
                &feedback,
                &templates.compress_update,
                config.k,
                config.candidate_retries,
                client,
                &mut rng,
            )?;
            let eval = ids(&successful);
            let inc = (success_rate(&successful), mean_cost(&successful));
            let winner = select_by_reward_cost(&mut cands, &eval, runner, config.lambda)?;
            let chosen = cands.scores[cands.selected.unwrap_or(0)]
                .map_or((0.0, f64::INFINITY), |s| (s.success_rate, s.mean_cost));
            let max = cands
                .scores
                .iter()
                .flatten()
                .map(|s| s.mean_cost)
                .fold(inc.1, f64::max);
            let value = |(rate, cost): (f64, f64)| rate - config.lambda * norm(cost, max);
            b.accepted = value(chosen) > value(inc) && winner.template != incumbent.template;
            if b.accepted {
                incumbent = winner;
                current = runner.run(train, Some(&incumbent))?;
            }
            b.guideline = incumbent.clone();
            b.eval_tasks = eval;
            b.incumbent = Some(inc);
            b.selected = cands.selected;
            b.candidates = candidate_records(&cands);
            b.feedback = feedback;
        }
        let score = round_score(&current);
        b.round_score = Some(score);
        entries.push(b);

        if score - previous < config.epsilon && round < config.rounds {
            stopped_early = true;
            break;
        }
        previous = score;
    }

    Ok(Lineage {
        entries,
        best: incumbent,
        rounds_run,
        stopped_early,
        optimizer_ledger: client.ledger(),
    })
}
