//! Start the session service with the demo backend, drive one session over
//! HTTP, then keep serving until interrupted.
//!
//!     cargo run --example serve_demo -- 8080

use std::net::SocketAddr;

use qtransducer::llm_backend::BackendRegistry;
use qtransducer::service::{router, ServiceConfig, ServiceState};
use serde_json::{json, Value};

async fn post(client: &reqwest::Client, url: String, body: Value) -> anyhow::Result<Value> {
    Ok(client.post(url).json(&body).send().await?.json().await?)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let port: u16 = std::env::args().nth(1).map(|p| p.parse()).transpose()?.unwrap_or(0);
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port))).await?;
    let addr = listener.local_addr()?;
    let state = ServiceState::new(ServiceConfig::new(BackendRegistry::with_demo()));
    tokio::spawn(async move { axum::serve(listener, router(state)).await });
    let base = format!("http://{addr}");
    println!("listening on {base}");

    let client = reqwest::Client::new();
    let info = post(&client, format!("{base}/sessions"), json!({"mode": "with_transducer", "turns": 3})).await?;
    let id = info["session_id"].as_str().unwrap().to_string();
    for text in ["Who scored the music for the film?", "How to Train Your Dragon"] {
        let reply = post(&client, format!("{base}/sessions/{id}/messages"), json!({ "text": text })).await?;
        println!("> {text}\n{}", serde_json::to_string_pretty(&reply["turn"])?);
    }
    let transcript: Value = client.get(format!("{base}/sessions/{id}/transcript")).send().await?.json().await?;
    println!("transcript: {}", transcript["transcript"]);

    println!("still serving on {base}; ctrl-c to stop");
    tokio::signal::ctrl_c().await?;
    Ok(())
}
