//! Builds a store and serves the JSON API on it until Ctrl-C.
//!
//! `cargo run --example serve_api -- 8017`, then e.g.
//! `curl localhost:8017/concepts?query=fall`.

use caremart::config::Config;
use caremart::pipeline::Pipeline;
use caremart::qa::ReportFormat;

fn main() -> caremart::Result<()> {
    let port: u16 = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(8017);
    let store = std::env::temp_dir().join("caremart-serve");
    let p = Pipeline::new(Config {
        store: store.clone(),
        ..Config::default()
    });
    p.gen(None, None)?;
    p.ingest(None)?;
    p.etl()?;
    p.qa(ReportFormat::Text)?;
    p.nlp(None)?;
    p.characterize()?;
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    println!("serving {} on port {port}", store.display());
    runtime.block_on(caremart::service::serve(&store, port, &Default::default()))
}
