//! Every pipeline stage against a directory-backed store.

use caremart::config::Config;
use caremart::pipeline::Pipeline;
use caremart::qa::ReportFormat;

fn main() -> caremart::Result<()> {
    let store = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("caremart-e2e"), Into::into);
    let p = Pipeline::new(Config {
        store,
        ..Config::default()
    });
    let (dir, _) = p.gen(None, None)?;
    println!("extract: {}", dir.display());
    p.ingest(None)?;
    p.etl()?;
    print!("{}", p.qa(ReportFormat::Text)?.rendered);
    let nlp = p.nlp(None)?;
    println!(
        "nlp: {} notes, {} mentions",
        nlp.metrics.notes_processed, nlp.metrics.concepts_emitted
    );
    println!("stats: {} records", p.characterize()?.len());
    let cohort = p.cohort_run(&caremart::fixtures::stroke_cohort(), None)?;
    println!("cohort: {} subjects", cohort.rows.len());
    println!("status: {:?}", p.status()?.completed);
    Ok(())
}
