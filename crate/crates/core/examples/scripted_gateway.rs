//! Scripted mock backend, response cache and retry policy.
//!
//! cargo run --example scripted_gateway

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use acon::gateway::{
    prompt_hash, script_mock, ChatRequest, Gateway, GatewayError, LocalBackend, Message,
    ResponseCache, RetryPolicy, ScriptRule,
};

fn main() {
    let backend = Arc::new(script_mock(vec![
        ScriptRule::contains("Splitwise", "short rule"),
        ScriptRule::contains("Splitwise app", "longest rule wins"),
    ]));
    let gateway = Gateway::new(backend.clone()).with_cache(Arc::new(ResponseCache::in_memory()));
    let request = ChatRequest::new("gpt-4.1", vec![Message::user("open the Splitwise app")]);
    for _ in 0..2 {
        let r = gateway.complete(&request).expect("scripted");
        println!("{:?} cached={} usage={:?}", r.content, r.cached, r.usage);
    }
    println!("backend calls: {}", backend.call_count());
    println!("prompt hash: {}", prompt_hash(&request.prompt_text()));

    match gateway.complete(&ChatRequest::new(
        "gpt-4.1",
        vec![Message::user("pay Venmo")],
    )) {
        Err(GatewayError::Unmatched { nearest }) => {
            println!("unmatched, nearest matcher: {nearest:?}")
        }
        other => println!("unexpected: {other:?}"),
    }

    let failures = Arc::new(AtomicU32::new(0));
    let counter = failures.clone();
    let flaky = LocalBackend::new("flaky", move |_: &ChatRequest| {
        if counter.fetch_add(1, Ordering::SeqCst) < 3 {
            Err(GatewayError::Transient("503 service unavailable".into()))
        } else {
            Ok("recovered".into())
        }
    });
    let gateway = Gateway::new(Arc::new(flaky)).with_retry(RetryPolicy {
        max_retries: 3,
        base_delay_ms: 10,
        max_delay_ms: 40,
    });
    let r = gateway.complete(&request).expect("fourth attempt succeeds");
    println!(
        "{} after {} attempts",
        r.content,
        failures.load(Ordering::SeqCst)
    );
}
