//! FIFO and retrieval memories compared with generative folding.
//!
//! cargo run --example memory_baselines

use acon::agent_loop::{run_suite, Runtime};
use acon::compression::CompressorKind;
use acon::config::RunConfig;
use acon::metrics::format_table;
use acon::sim::{generate, GenParams};

fn main() -> acon::Result<()> {
    let spec = generate(&GenParams {
        tasks: 3,
        objectives: 5,
        padding: 120,
        ..GenParams::default()
    });
    let base = RunConfig {
        t_hist: 900,
        ..RunConfig::default()
    };
    let guidelines = base.resolve_guidelines()?;
    let runtime = Runtime::offline();
    let ids = spec.task_ids();

    let mut rows = Vec::new();
    for kind in [
        "none",
        "fifo:3",
        "retrieval:3",
        "generative:history-default",
    ] {
        let config = RunConfig {
            history: kind.parse::<CompressorKind>()?,
            ..base.clone()
        };
        let suite = run_suite(&spec, &ids, &config, &guidelines, &runtime)?;
        rows.push((kind.to_string(), suite.aggregate));
    }
    print!("{}", format_table(&rows));
    Ok(())
}
