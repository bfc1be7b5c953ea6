//! History and observation gates with a scripted compressor.
//!
//! cargo run --example gated_compression

use std::collections::BTreeMap;
use std::sync::Arc;

use acon::compression::{
    maybe_compress_history, maybe_compress_observation, CompressorEnv, CompressorKind, GatePolicy,
    HashingEmbedder,
};
use acon::gateway::{script_mock, Gateway, ScriptRule};
use acon::guideline::builtin;
use acon::history::{render_context, InteractionHistory, Turn};
use acon::metrics::TokenLedger;
use acon::templates::{HISTORY_DEFAULT_ID, OBSERVATION_DEFAULT_ID};
use acon::tokens::{Tokenizer, WordSymbolTokenizer};

fn main() -> acon::Result<()> {
    let tok = WordSymbolTokenizer;
    let turns = (0..6)
        .map(|i| {
            Turn::new(
                i,
                format!("search(report part {i})"),
                "row ".repeat(40),
                &tok,
            )
        })
        .collect();
    let history = InteractionHistory::with_turns("Summarize the quarterly report.", turns)?;

    let backend = Arc::new(script_mock(vec![
        ScriptRule::contains(
            "## Interactions",
            "<HISTORY_SUMMARY>\nRead report parts 0-4.\n</HISTORY_SUMMARY>",
        ),
        ScriptRule::contains(
            "## Interactions so far",
            "# Reasoning\nOnly totals matter.\n# Refined Observation\ntotal=42",
        ),
    ]));
    let gateway = Gateway::new(backend.clone());
    let guidelines: BTreeMap<_, _> = [HISTORY_DEFAULT_ID, OBSERVATION_DEFAULT_ID]
        .into_iter()
        .map(|id| (id.to_string(), builtin(id).expect("built-in")))
        .collect();
    let embedder = HashingEmbedder::default();
    let env = CompressorEnv {
        gateway: &gateway,
        model: "gpt-4.1-mini",
        seed: 42,
        tokenizer: &tok,
        embedder: &embedder,
        guidelines: &guidelines,
    };
    let kind = CompressorKind::Generative {
        guideline: HISTORY_DEFAULT_ID.into(),
    };
    let mut ledger = TokenLedger::new();

    let size = tok.count(&render_context(&history));
    println!("history is {size} tokens");
    for t_hist in [size, size - 1] {
        let gate = GatePolicy {
            t_hist,
            ..GatePolicy::default()
        };
        let out = maybe_compress_history(&history, &gate, &kind, &env, &mut ledger, 5)?;
        println!(
            "t_hist={t_hist}: fired={} tokens_after={}",
            out.event.is_some(),
            tok.count(&render_context(&out.history))
        );
        if out.event.is_some() {
            println!("---\n{}\n---", render_context(&out.history));
        }
    }

    let gate = GatePolicy {
        t_obs: 100,
        ..GatePolicy::default()
    };
    let obs_kind = CompressorKind::Generative {
        guideline: OBSERVATION_DEFAULT_ID.into(),
    };
    let raw = "cell ".repeat(150);
    let out = maybe_compress_observation(&raw, &history, &gate, &obs_kind, &env, &mut ledger, 6)?;
    println!(
        "observation {} -> {:?} ({:?})",
        tok.count(&raw),
        out.observation,
        out.event.map(|e| e.outcome)
    );
    println!("compressor calls: {}", backend.call_count());
    Ok(())
}
