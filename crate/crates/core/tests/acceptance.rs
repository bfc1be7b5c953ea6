//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the pass/fail lines always show:
//! `cargo test --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use acon::agent_loop::{run_suite, Runtime, SuiteRunner, TaskRun};
use acon::compression::{
    fifo_window, maybe_compress_history, maybe_compress_observation, retrieve_turns,
    CompressorKind, EventOutcome, GatePolicy, HashingEmbedder,
};
use acon::config::RunConfig;
use acon::distill::{export_pairs, write_pairs};
use acon::gateway::{script_mock, Gateway, LocalBackend, ScriptRule};
use acon::history::render_context;
use acon::metrics::{
    api_cost, dependency_doubled, CallRecord, Channel, PricingTable, Scope, TokenLedger,
};
use acon::optimizer::{
    build_contrastive_set, optimize, select_by_reward, select_by_reward_cost, CandidateSet,
    EntryKind, Lineage, OptimizeConfig, OptimizerClient, OptimizerTemplates,
};
use acon::sim::{generate, GenParams, RuleOptimizer};
use acon::templates::{HISTORY_DEFAULT_ID, OBSERVATION_DEFAULT_ID};
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gating_exactness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let backend = Arc::new(script_mock(vec![
        ScriptRule::contains("## Interactions so far", "# Refined Observation\nshort"),
        ScriptRule::contains(
            "## Interactions",
            "<HISTORY_SUMMARY>\nsummary\n</HISTORY_SUMMARY>",
        ),
    ]));
    let gw = gateway(backend.clone());
    let parts = EnvParts::new(&[
        history_default(),
        acon::guideline::builtin(OBSERVATION_DEFAULT_ID).unwrap(),
    ]);
    let env = parts.env(&gw);
    let hist_kind = CompressorKind::Generative {
        guideline: HISTORY_DEFAULT_ID.into(),
    };
    let obs_kind = CompressorKind::Generative {
        guideline: OBSERVATION_DEFAULT_ID.into(),
    };
    let (mut fired, mut quiet) = (0, 0);
    for case in 0..200 {
        let n = rng.random_range(2..12);
        let history = random_history(&mut rng, n, 0);
        let delta: i64 = rng.random_range(-3..=3);
        let calls_before = backend.call_count();
        let mut ledger = TokenLedger::new();
        let (size, threshold, event_seen) = if case % 2 == 0 {
            let size = count(&render_context(&history));
            let t_hist = (size as i64 + delta).max(1) as usize;
            let gate = GatePolicy {
                t_hist,
                ..GatePolicy::default()
            };
            let out = maybe_compress_history(&history, &gate, &hist_kind, &env, &mut ledger, 0)
                .map_err(err)?;
            (size, t_hist, out.event.is_some())
        } else {
            let n = rng.random_range(5..200);
            let raw = words(&mut rng, n);
            let size = count(&raw);
            let t_obs = (size as i64 + delta).max(1) as usize;
            let gate = GatePolicy {
                t_obs,
                ..GatePolicy::default()
            };
            let out =
                maybe_compress_observation(&raw, &history, &gate, &obs_kind, &env, &mut ledger, 0)
                    .map_err(err)?;
            (size, t_obs, out.event.is_some())
        };
        let calls = backend.call_count() - calls_before;
        let expect = size > threshold;
        ensure(event_seen == expect && calls == usize::from(expect), || {
            format!(
                "case {case}: size {size} threshold {threshold} event {event_seen} calls {calls}"
            )
        })?;
        if expect {
            fired += 1
        } else {
            quiet += 1
        }
    }
    within(Duration::from_secs(5), start)?;
    Ok(format!(
        "200 cases ({fired} above, {quiet} at-or-below) in {:.2?}",
        start.elapsed()
    ))
}

fn keep_last_pair() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kind = CompressorKind::Generative {
        guideline: HISTORY_DEFAULT_ID.into(),
    };
    let parts = EnvParts::new(&[history_default()]);
    for case in 0..100 {
        let n = rng.random_range(1..30);
        let summary = words(&mut rng, n);
        let reply = if rng.random_bool(0.5) {
            format!("<HISTORY_SUMMARY>\n{summary}\n</HISTORY_SUMMARY>")
        } else {
            summary
        };
        let gw = gateway(Arc::new(LocalBackend::new(
            "mock",
            move |_: &acon::gateway::ChatRequest| Ok(reply.clone()),
        )));
        let env = parts.env(&gw);
        let n = rng.random_range(2..10);
        let history = random_history(&mut rng, n, 0);
        let last = history.last_turn().unwrap().render();
        let gate = GatePolicy {
            t_hist: 1,
            ..GatePolicy::default()
        };
        let out = maybe_compress_history(&history, &gate, &kind, &env, &mut TokenLedger::new(), 0)
            .map_err(err)?;
        let event = out.event.ok_or(format!("case {case}: no event"))?;
        ensure(event.outcome == EventOutcome::Applied, || {
            format!("case {case}: {:?}", event.outcome)
        })?;
        ensure(render_context(&out.history).contains(&last), || {
            format!("case {case}: last pair missing")
        })?;
    }
    Ok("100/100 compressions keep the last pair verbatim".into())
}

fn dependency_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let mut ledger = TokenLedger::new();
        let n = rng.random_range(0..40);
        for step in 0..n {
            ledger.record(CallRecord {
                channel: Channel::Agent,
                step,
                model: "gpt-4.1".into(),
                input_tokens: rng.random_range(0..2_000_000),
                cached_input_tokens: 0,
                output_tokens: rng.random_range(0..100_000),
                system_tokens: 0,
            });
        }
        // sum of (n_i + 2 n_o) * n_o / 2, kept doubled to stay in integers
        let mut brute: u128 = 0;
        for r in &ledger.records {
            brute +=
                (r.input_tokens as u128 + 2 * r.output_tokens as u128) * r.output_tokens as u128;
        }
        let got = dependency_doubled(&ledger, Scope::Agent);
        ensure(got == brute, || format!("ledger {case}: {got} != {brute}"))?;
    }
    Ok("1000/1000 ledgers match exactly".into())
}

fn api_cost_oracle() -> Check {
    let pricing = PricingTable::reference();
    let one = |input, cached, output| {
        let mut l = TokenLedger::new();
        l.record(CallRecord {
            channel: Channel::Agent,
            step: 0,
            model: "gpt-4.1".into(),
            input_tokens: input,
            cached_input_tokens: cached,
            output_tokens: output,
            system_tokens: 0,
        });
        api_cost(&l, &pricing, "gpt-4.1").map_err(err)
    };
    let m = 1_000_000;
    let got = [one(m, 0, 0)?, one(m, m, 0)?, one(0, 0, m)?];
    for (g, want) in got.iter().zip([3.00, 0.75, 12.00]) {
        ensure((g - want).abs() <= 1e-9, || format!("{g} != {want}"))?;
    }
    Ok(format!("${:.2} / ${:.2} / ${:.2}", got[0], got[1], got[2]))
}

fn window_baselines() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let embedder = HashingEmbedder::default();
    for case in 0..500 {
        let start = if rng.random_bool(0.3) {
            rng.random_range(0..20)
        } else {
            0
        };
        let n = rng.random_range(1..25);
        let h = random_history(&mut rng, n, start);
        let fifo = fifo_window(&h, 5);
        let n = h.turns.len();
        ensure(fifo.turns == h.turns[n.saturating_sub(5)..], || {
            format!("history {case}: fifo mismatch")
        })?;

        let k = rng.random_range(1..8);
        let r = retrieve_turns(&h, k, &embedder);
        let input: BTreeSet<usize> = h.turns.iter().map(|t| t.index).collect();
        let max = *input.iter().max().unwrap();
        ensure(r.turns.iter().any(|t| t.index == max), || {
            format!("history {case}: max index dropped")
        })?;
        ensure(r.turns.iter().all(|t| input.contains(&t.index)), || {
            format!("history {case}: foreign index")
        })?;
        ensure(r.turns.len() <= k + 1, || {
            format!("history {case}: kept {} > {}", r.turns.len(), k + 1)
        })?;
    }
    Ok("500/500 histories".into())
}

fn peak_reduction() -> Check {
    let start = Instant::now();
    let spec = generate(&GenParams {
        tasks: 3,
        objectives: 8,
        padding: 480,
        top_k: 3,
        ..GenParams::default()
    });
    let guideline = keep_facts_guideline();
    let config = RunConfig {
        history: CompressorKind::Generative {
            guideline: guideline.id.clone(),
        },
        ..RunConfig::default()
    };
    let guidelines = guideline_map(&[guideline]);
    let runtime = Runtime::offline();
    let ids = spec.task_ids();
    let base =
        run_suite(&spec, &ids, &config.uncompressed(), &guidelines, &runtime).map_err(err)?;
    let comp = run_suite(&spec, &ids, &config, &guidelines, &runtime).map_err(err)?;
    let (pb, pc) = (
        base.aggregate.max_peak_tokens as f64,
        comp.aggregate.max_peak_tokens as f64,
    );
    let reduction = 1.0 - pc / pb;
    let detail = format!(
        "peak {pb} -> {pc} ({:.1}% lower), success {:.2} -> {:.2}, {:.2?}",
        reduction * 100.0,
        base.aggregate.success_rate,
        comp.aggregate.success_rate,
        start.elapsed()
    );
    ensure((10_000.0..=14_000.0).contains(&pb), || {
        format!("uncompressed peak not near 12k: {detail}")
    })?;
    ensure(reduction >= 0.30, || detail.clone())?;
    let same = base
        .runs
        .iter()
        .zip(&comp.runs)
        .all(|(a, b)| a.success == b.success);
    ensure(same, || format!("success changed: {detail}"))?;
    within(Duration::from_secs(30), start)?;
    Ok(detail)
}

fn contrastive_recount() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..300 {
        let n = rng.random_range(1..15);
        let outcomes: Vec<(bool, bool)> = (0..n)
            .map(|_| (rng.random_bool(0.6), rng.random_bool(0.5)))
            .collect();
        let base: Vec<TaskRun> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| fake_run(&format!("t{i:02}"), o.0, 10, vec![]))
            .collect();
        let mut comp: Vec<TaskRun> = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| fake_run(&format!("t{i:02}"), o.1, 10, vec![]))
            .collect();
        comp.shuffle(&mut rng);
        let got: Vec<String> = build_contrastive_set(&base, &comp)
            .map_err(err)?
            .into_iter()
            .map(|r| r.task_id)
            .collect();
        let mut want = Vec::new();
        for (i, (b, c)) in outcomes.iter().enumerate() {
            if *b && !*c {
                want.push(format!("t{i:02}"));
            }
        }
        ensure(got == want, || {
            format!("matrix {case}: {got:?} != {want:?}")
        })?;
    }
    Ok("300/300 outcome matrices".into())
}

fn rule_client() -> OptimizerClient {
    OptimizerClient::new(
        Gateway::new(Arc::new(LocalBackend::new("rule-optimizer", RuleOptimizer))),
        "gpt-4.1",
        42,
    )
}

fn run_optimizer(spec: &acon::sim::EnvSpec, rounds: usize) -> Result<Lineage, String> {
    let config = RunConfig {
        t_hist: 1100,
        parallelism: 2,
        ..RunConfig::default()
    };
    let runner = SuiteRunner {
        spec,
        guidelines: config.resolve_guidelines().map_err(err)?,
        config,
        runtime: Runtime::offline(),
    };
    let cfg = OptimizeConfig {
        rounds,
        k: 5,
        lambda: 0.2,
        ..OptimizeConfig::default()
    };
    optimize(
        &history_default(),
        &spec.task_ids(),
        &runner,
        &rule_client(),
        &OptimizerTemplates::default(),
        &cfg,
    )
    .map_err(err)
}

fn optimizer_end_to_end() -> Check {
    let start = Instant::now();
    let spec = generate(&GenParams {
        tasks: 2,
        objectives: 6,
        padding: 150,
        top_k: 3,
        ..GenParams::default()
    });
    let lineage = run_optimizer(&spec, 1)?;
    let a = lineage
        .entries
        .iter()
        .find(|e| e.stage == EntryKind::Utility)
        .ok_or("no utility stage")?;
    let succeeding: Vec<usize> = a
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.score.is_some_and(|s| s.success_rate > 0.0))
        .map(|(i, _)| i)
        .collect();
    ensure(a.candidates.len() == 5 && succeeding.len() == 1, || {
        format!("expected exactly one fact-keeping candidate of 5, got {succeeding:?}")
    })?;
    ensure(a.accepted && a.selected == Some(succeeding[0]), || {
        format!("stage A picked {:?}, accepted {}", a.selected, a.accepted)
    })?;

    let b = lineage
        .entries
        .iter()
        .find(|e| e.stage == EntryKind::Compression)
        .ok_or("no compression stage")?;
    let scores: Vec<_> = b.candidates.iter().map(|c| c.score.unwrap()).collect();
    let best = (0..scores.len())
        .max_by(|&i, &j| {
            scores[i]
                .score
                .total_cmp(&scores[j].score)
                .then(scores[j].mean_cost.total_cmp(&scores[i].mean_cost))
                .then(j.cmp(&i))
        })
        .unwrap();
    ensure(b.selected == Some(best), || {
        format!("stage B picked {:?}, formula says {best}", b.selected)
    })?;

    // Two candidates with equal success and different cost, scored directly.
    let cheap = history_default()
        .child(format!("{}\n- variant cheap", history_default().template))
        .map_err(err)?;
    let dear = history_default()
        .child(format!("{}\n- variant dear", history_default().template))
        .map_err(err)?;
    let runner = FixedRunner {
        outcomes: [
            (dear.template.clone(), (4, 900)),
            (cheap.template.clone(), (4, 600)),
        ]
        .into_iter()
        .collect(),
    };
    let mut set = CandidateSet {
        parent: history_default(),
        candidates: vec![dear, cheap],
        scores: vec![],
        selected: None,
    };
    let tasks: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
    select_by_reward_cost(&mut set, &tasks, &runner, 0.2).map_err(err)?;
    let s: Vec<f64> = set.scores.iter().map(|s| s.unwrap().score).collect();
    ensure(set.selected == Some(1), || {
        format!("picked {:?} with scores {s:?}", set.selected)
    })?;
    ensure(
        (s[0] - 0.8).abs() < 1e-12 && (s[1] - (1.0 - 0.2 * 600.0 / 900.0)).abs() < 1e-12,
        || format!("{s:?}"),
    )?;

    let again = run_optimizer(&spec, 1)?;
    ensure(again == lineage, || "second optimize run differs".into())?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "stage A chose {}/5, stage B chose {} (E2E) and the cheaper of two; {:.2?}",
        succeeding[0],
        best,
        start.elapsed()
    ))
}

fn lambda_zero() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tasks: Vec<String> = (0..4).map(|i| format!("t{i}")).collect();
    let parent = history_default();
    for case in 0..200 {
        let k = rng.random_range(1..7);
        let mut candidates = Vec::new();
        let mut outcomes = BTreeMap::new();
        for i in 0..k {
            let g = parent
                .child(format!("{}\n- variant {i}", parent.template))
                .map_err(err)?;
            outcomes.insert(
                g.template.clone(),
                (rng.random_range(0..=4), rng.random_range(1..5) * 100),
            );
            candidates.push(g);
        }
        let runner = FixedRunner { outcomes };
        let set = CandidateSet {
            parent: parent.clone(),
            candidates,
            scores: vec![],
            selected: None,
        };
        let (mut a, mut b) = (set.clone(), set);
        select_by_reward(&mut a, &tasks, &runner).map_err(err)?;
        select_by_reward_cost(&mut b, &tasks, &runner, 0.0).map_err(err)?;
        ensure(a.selected == b.selected, || {
            format!("set {case}: {:?} vs {:?}", a.selected, b.selected)
        })?;
    }
    Ok("200/200 score sets agree".into())
}

/// run -> optimize -> export, all files under `dir`.
fn pipeline(dir: &Path) -> Result<(), String> {
    let spec = generate(&GenParams {
        tasks: 3,
        objectives: 6,
        padding: 150,
        top_k: 3,
        seed: 42,
        ..GenParams::default()
    });
    acon::io::write_json(&dir.join("env.json"), &spec).map_err(err)?;
    let config = RunConfig {
        t_hist: 1100,
        ..RunConfig::default()
    };
    let runtime = Runtime::offline();
    let baseline = run_suite(
        &spec,
        &spec.task_ids(),
        &config,
        &config.resolve_guidelines().map_err(err)?,
        &runtime,
    )
    .map_err(err)?;
    acon::io::write_jsonl(&dir.join("runs.jsonl"), &baseline.runs).map_err(err)?;

    let lineage = run_optimizer(&spec, 2)?;
    lineage.save(&dir.join("lineage")).map_err(err)?;

    let optimized = run_suite(
        &spec,
        &spec.task_ids(),
        &config,
        &guideline_map(&[lineage.best.clone()]),
        &runtime,
    )
    .map_err(err)?;
    acon::io::write_jsonl(&dir.join("optimized.jsonl"), &optimized.runs).map_err(err)?;
    write_pairs(
        &dir.join("distill.jsonl"),
        &export_pairs(&optimized.runs).pairs,
    )
    .map_err(err)
}

fn bit_reproducibility() -> Check {
    let dirs = [
        tempfile::tempdir().map_err(err)?,
        tempfile::tempdir().map_err(err)?,
    ];
    for d in &dirs {
        pipeline(d.path())?;
    }
    let files = [
        "env.json",
        "runs.jsonl",
        "optimized.jsonl",
        "distill.jsonl",
        "lineage/lineage.json",
        "lineage/best.txt",
    ];
    let mut pairs = 0;
    for f in files {
        let a = std::fs::read(dirs[0].path().join(f)).map_err(err)?;
        let b = std::fs::read(dirs[1].path().join(f)).map_err(err)?;
        ensure(a == b, || format!("{f} differs"))?;
        if f == "distill.jsonl" {
            pairs = a.iter().filter(|&&c| c == b'\n').count();
        }
    }
    ensure(pairs > 0, || "distill export is empty".into())?;
    Ok(format!(
        "{} files byte-identical, {pairs} distill pairs",
        files.len()
    ))
}

fn distill_soundness() -> Check {
    let spec = generate(&GenParams {
        tasks: 6,
        objectives: 5,
        padding: 150,
        top_k: 3,
        ..GenParams::default()
    });
    let keep = keep_facts_guideline();
    let runtime = Runtime::offline();
    let ids = spec.task_ids();
    let mut runs = Vec::new();
    // Alternate guidelines so some runs fail on their own.
    for (i, id) in ids.iter().enumerate() {
        let g = if i % 2 == 0 {
            keep.clone()
        } else {
            history_default()
        };
        let config = RunConfig {
            t_hist: 900,
            history: CompressorKind::Generative {
                guideline: g.id.clone(),
            },
            ..RunConfig::default()
        };
        runs.extend(
            run_suite(
                &spec,
                std::slice::from_ref(id),
                &config,
                &guideline_map(&[g]),
                &runtime,
            )
            .map_err(err)?
            .runs,
        );
    }
    ensure(
        runs.iter().any(|r| r.success) && runs.iter().any(|r| !r.success),
        || "need mixed outcomes".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let mut trial_runs = runs.clone();
        if trial > 0 {
            for r in &mut trial_runs {
                r.success = rng.random_bool(0.5);
            }
        }
        let export = export_pairs(&trial_runs);
        let winners: BTreeSet<&str> = trial_runs
            .iter()
            .filter(|r| r.success)
            .map(|r| r.task_id.as_str())
            .collect();
        ensure(
            export
                .pairs
                .iter()
                .all(|p| winners.contains(p.task_id.as_str())),
            || format!("trial {trial}: pair from a failed run"),
        )?;
        let mut brute = 0;
        for r in &trial_runs {
            if !r.success {
                continue;
            }
            for e in &r.compression_events {
                if e.outcome == EventOutcome::Applied && e.call.is_some() {
                    brute += 1;
                }
            }
        }
        ensure(export.pairs.len() == brute, || {
            format!("trial {trial}: {} != {brute}", export.pairs.len())
        })?;
    }
    Ok("100/100 trials".into())
}

fn main() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("gating exactness", gating_exactness),
        ("keep-last-pair invariant", keep_last_pair),
        ("dependency oracle", dependency_oracle),
        ("api cost oracle", api_cost_oracle),
        ("fifo/retrieval contracts", window_baselines),
        ("peak-token reduction", peak_reduction),
        ("contrastive set recount", contrastive_recount),
        ("optimizer end to end", optimizer_end_to_end),
        ("lambda=0 degeneracy", lambda_zero),
        ("bit reproducibility", bit_reproducibility),
        ("distill filter soundness", distill_soundness),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
