//! Raw extract to CDM tables, with per-table row accounting.

use caremart::etl::{self, EtlConfig, EtlRules};
use caremart::store::Datamart;
use caremart::synth::{self, GenConfig};

fn main() -> caremart::Result<()> {
    let (bundle, _) = synth::generate(&GenConfig::default())?;
    let mut mart = Datamart::in_memory();
    synth::write_raw(&bundle, &mut mart)?;
    let report = etl::run_etl(
        &mut mart,
        &caremart::fixtures::vocabulary(),
        &EtlRules::fixture(),
        &EtlConfig::default(),
    )?;
    for t in &report.transforms {
        println!(
            "{:<16} -> {:<22} {:>6} -> {:>6} ({} excluded)",
            t.raw_table,
            t.cdm_table,
            t.raw_count,
            t.cdm_count,
            t.excluded.len()
        );
    }
    for (table, n) in &report.derived {
        println!("derived {table:<22} {n}");
    }
    println!("took {} ms", report.duration_ms);
    Ok(())
}
