//! One request against an OpenAI-compatible endpoint.
//!
//! ACON_API_KEY=... cargo run --example live_backend [base-url] [model]
//!
//! Does nothing without an API key.

use std::sync::Arc;

use acon::gateway::{
    ChatRequest, Gateway, HttpBackend, HttpConfig, Message, ResponseCache, API_KEY_ENV,
};

fn main() {
    if std::env::var(API_KEY_ENV).is_err() {
        println!("{API_KEY_ENV} is not set; skipping");
        return;
    }
    let mut args = std::env::args().skip(1);
    let mut config = HttpConfig::default();
    if let Some(url) = args.next() {
        config.base_url = url;
    }
    let model = args.next().unwrap_or_else(|| "gpt-4.1-mini".into());
    let gateway = Gateway::new(Arc::new(HttpBackend::new(config)))
        .with_cache(Arc::new(ResponseCache::in_memory()));
    let request = ChatRequest::new(
        model,
        vec![
            Message::system("Answer in one word."),
            Message::user("What color is the sky on a clear day?"),
        ],
    );
    match gateway.complete(&request) {
        Ok(r) => println!("{} ({:?})", r.content, r.usage),
        Err(e) => eprintln!("request failed: {e}"),
    }
}
