//! Run the same tasks with and without history compression.
//!
//! cargo run --example run_episode

use acon::agent_loop::{run_suite, Runtime};
use acon::config::RunConfig;
use acon::metrics::format_table;
use acon::sim::{generate, GenParams};

fn main() -> acon::Result<()> {
    let spec = generate(&GenParams {
        tasks: 3,
        objectives: 6,
        padding: 150,
        ..GenParams::default()
    });
    let compressed = RunConfig {
        t_hist: 1100,
        ..RunConfig::default()
    };
    let guidelines = compressed.resolve_guidelines()?;
    let runtime = Runtime::offline();
    let ids = spec.task_ids();

    let full = run_suite(
        &spec,
        &ids,
        &compressed.uncompressed(),
        &guidelines,
        &runtime,
    )?;
    let folded = run_suite(&spec, &ids, &compressed, &guidelines, &runtime)?;
    print!(
        "{}",
        format_table(&[
            ("uncompressed".into(), full.aggregate.clone()),
            ("history-default".into(), folded.aggregate.clone()),
        ])
    );

    let run = &folded.runs[0];
    println!(
        "\n{}: {} compression events",
        run.task_id,
        run.compression_events.len()
    );
    for e in &run.compression_events {
        println!(
            "  step {:>2} {:?} {} -> {} tokens ({:?})",
            e.step, e.target, e.tokens_before, e.tokens_after, e.outcome
        );
    }
    // The default guideline drops fact values from the summary, so the
    // compressed agent answers "unknown" for questions it searched early.
    println!(
        "answers: {:?}",
        run.trajectory
            .iter()
            .filter(|s| s.action.starts_with("answer"))
            .map(|s| &s.action)
            .collect::<Vec<_>>()
    );
    Ok(())
}
