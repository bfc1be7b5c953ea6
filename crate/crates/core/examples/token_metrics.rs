//! Peak tokens, dependency and API cost from a token ledger.
//!
//! cargo run --example token_metrics

use acon::metrics::{
    api_cost, dependency, format_table, peak_tokens, CallRecord, Channel, MetricsOptions,
    MetricsReport, PricingTable, TokenLedger,
};

fn call(channel: Channel, step: usize, input: u64, cached: u64, output: u64) -> CallRecord {
    CallRecord {
        channel,
        step,
        model: "gpt-4.1".into(),
        input_tokens: input,
        cached_input_tokens: cached,
        output_tokens: output,
        system_tokens: if channel == Channel::Agent { 200 } else { 0 },
    }
}

fn main() -> acon::Result<()> {
    let mut ledger = TokenLedger::new();
    ledger.record(call(Channel::Agent, 0, 1_200, 0, 40));
    ledger.record(call(Channel::Agent, 1, 4_800, 1_000, 55));
    ledger.record(call(Channel::Compressor, 1, 4_500, 0, 300));
    ledger.record(call(Channel::Agent, 2, 1_900, 0, 35));

    let pricing = PricingTable::reference();
    println!(
        "peak tokens (agent, minus system prompt): {}",
        peak_tokens(&ledger)
    );
    println!("dependency: {}", dependency(&ledger));
    println!(
        "cost, everything at gpt-4.1 rates: ${:.6}",
        api_cost(&ledger, &pricing, "gpt-4.1")?
    );

    let report =
        MetricsReport::for_run(3, true, 1.0, &ledger, &pricing, &MetricsOptions::default())?;
    print!("{}", format_table(&[("episode".to_string(), report)]));

    for (name, rates) in &pricing.models {
        println!(
            "{name}: in ${} cached ${} out ${} per 1M",
            rates.input, rates.cached_input, rates.output
        );
    }
    Ok(())
}
