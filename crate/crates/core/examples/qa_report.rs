//! Count reconciliation between raw and CDM tables with a loss gate.

use std::collections::BTreeMap;

use caremart::etl::{self, EtlConfig, EtlRules};
use caremart::qa::{self, QaPair, ReportFormat};
use caremart::store::Datamart;
use caremart::synth::{self, GenConfig};

fn main() -> caremart::Result<()> {
    let (bundle, _) = synth::generate(&GenConfig::default())?;
    let mut mart = Datamart::in_memory();
    synth::write_raw(&bundle, &mut mart)?;
    etl::run_etl(
        &mut mart,
        &caremart::fixtures::vocabulary(),
        &EtlRules::fixture(),
        &EtlConfig::default(),
    )?;

    let report = qa::reconcile(&mart, &QaPair::defaults())?;
    print!("{}", qa::render_report(&report, ReportFormat::Text)?);

    let limits = BTreeMap::from([("RAW.procedures vs CDM.procedure_occurrence".to_string(), 5.0)]);
    let outcome = qa::assert_thresholds(&report, &limits);
    println!("\n5% procedure limit passed: {}", outcome.passed);
    for v in outcome.violations {
        println!("  {} lost {:.3}% > {}%", v.comparison, v.raw_lost_pct, v.limit_pct);
    }
    Ok(())
}
