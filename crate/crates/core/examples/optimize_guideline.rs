//! Two-stage guideline optimization with the rule-based optimizer model.
//!
//! cargo run --example optimize_guideline [out-dir]

use std::sync::Arc;

use acon::agent_loop::{Runtime, SuiteRunner};
use acon::config::RunConfig;
use acon::gateway::{Gateway, LocalBackend};
use acon::guideline::builtin;
use acon::optimizer::{optimize, OptimizeConfig, OptimizerClient, OptimizerTemplates};
use acon::sim::{generate, GenParams, RuleOptimizer};
use acon::templates::HISTORY_DEFAULT_ID;

fn main() -> acon::Result<()> {
    let spec = generate(&GenParams {
        tasks: 2,
        objectives: 6,
        padding: 150,
        ..GenParams::default()
    });
    let config = RunConfig {
        t_hist: 1100,
        parallelism: 2,
        ..RunConfig::default()
    };
    let runner = SuiteRunner {
        spec: &spec,
        guidelines: config.resolve_guidelines()?,
        config,
        runtime: Runtime::offline(),
    };
    let client = OptimizerClient::new(
        Gateway::new(Arc::new(LocalBackend::new("rule-optimizer", RuleOptimizer))),
        "gpt-4.1",
        42,
    );
    let initial = builtin(HISTORY_DEFAULT_ID).expect("built-in");
    let cfg = OptimizeConfig {
        rounds: 2,
        lambda: 0.2,
        ..OptimizeConfig::default()
    };
    let lineage = optimize(
        &initial,
        &spec.task_ids(),
        &runner,
        &client,
        &OptimizerTemplates::default(),
        &cfg,
    )?;

    for e in &lineage.entries {
        println!(
            "round {} {:?}: accepted={} selected={:?} score={:?} {}",
            e.round,
            e.stage,
            e.accepted,
            e.selected,
            e.round_score,
            e.note.as_deref().unwrap_or("")
        );
        for (i, c) in e.candidates.iter().enumerate() {
            if let Some(s) = &c.score {
                println!(
                    "    cand {i}: sr={:.2} cost={:.0} score={:.4}",
                    s.success_rate, s.mean_cost, s.score
                );
            }
        }
    }
    println!(
        "\nbest is v{} ({} rounds, stopped early: {})",
        lineage.best.version, lineage.rounds_run, lineage.stopped_early
    );
    println!("--- tail of best template ---");
    for line in lineage
        .best
        .template
        .lines()
        .rev()
        .take(4)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
    {
        println!("{line}");
    }
    if let Some(dir) = std::env::args().nth(1) {
        lineage.save(dir.as_ref())?;
        println!("lineage written to {dir}");
    }
    Ok(())
}
