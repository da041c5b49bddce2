//! Shows retry backoff and rate limiting on a virtual clock.
//!
//! cargo run --example retry_and_rate_limit

use std::sync::Arc;

use icl_bench::prompts::{ContentPart, Message, PromptPackage, QueryRef, Role, StrategyKind};
use icl_bench::provider::{parse_script, Clock, MockClock, MockTransport, Provider, ProviderConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let package = PromptPackage {
        strategy: StrategyKind::Naive,
        messages: vec![Message {
            role: Role::User,
            parts: vec![ContentPart::Text("Instruction: classify the image".into())],
        }],
        query_index_map: vec![QueryRef {
            index: 1,
            group: 1,
            item_id: "test/COVID/x.png".into(),
        }],
    };
    let script = parse_script(
        r#"{"status": 429, "times": 2}
{"text": "COVID\nOpacities."}
{"text": "Normal\nClear.", "times": 4}
"#,
    )?;
    let config = ProviderConfig {
        max_requests_per_minute: 30,
        initial_backoff_ms: 500,
        ..ProviderConfig::default()
    };
    let clock = Arc::new(MockClock::new());
    let transport = Arc::new(MockTransport::new(script)?);
    let provider = Provider::new(config, transport, clock.clone())?;

    for _ in 0..5 {
        let reply = provider.send(&package)?;
        println!(
            "t={:>6.1}s attempts={} {:?}",
            clock.now().as_secs_f64(),
            reply.attempts,
            reply.text.lines().next().unwrap_or_default()
        );
    }
    println!("sleeps: {:?}", clock.sleeps());
    Ok(())
}
