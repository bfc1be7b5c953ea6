//! Export compressor input/output pairs from successful runs as JSONL.
//!
//! cargo run --example distill_export [out.jsonl]

use acon::agent_loop::{run_suite, Runtime};
use acon::config::RunConfig;
use acon::distill::{export_pairs, write_pairs};
use acon::guideline::builtin;
use acon::sim::{generate, GenParams, DIRECTIVE_KEEP_FACTS};
use acon::templates::HISTORY_DEFAULT_ID;

fn main() -> acon::Result<()> {
    let spec = generate(&GenParams {
        tasks: 3,
        objectives: 6,
        padding: 150,
        ..GenParams::default()
    });
    let config = RunConfig {
        t_hist: 1100,
        ..RunConfig::default()
    };
    let mut guidelines = config.resolve_guidelines()?;
    // A stronger guideline, so that the runs succeed and their pairs count.
    let base = builtin(HISTORY_DEFAULT_ID).expect("built-in");
    let better = base.child(format!(
        "{}\n- Keep facts verbatim: {DIRECTIVE_KEEP_FACTS}.",
        base.template
    ))?;
    guidelines.insert(better.id.clone(), better);

    let suite = run_suite(
        &spec,
        &spec.task_ids(),
        &config,
        &guidelines,
        &Runtime::offline(),
    )?;
    println!("success rate {:.2}", suite.aggregate.success_rate);
    let export = export_pairs(&suite.runs);
    println!("{} pairs, {} skipped", export.pairs.len(), export.skipped);
    if let Some(p) = export.pairs.first() {
        println!(
            "first pair: {} step {} ({} v{})",
            p.task_id, p.step, p.guideline_id, p.guideline_version
        );
        println!("output:\n{}", p.output);
    }
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        std::env::temp_dir()
            .join("acon-distill.jsonl")
            .display()
            .to_string()
    });
    write_pairs(path.as_ref(), &export.pairs)?;
    println!("wrote {path}");
    Ok(())
}
