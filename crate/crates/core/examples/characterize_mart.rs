//! Summary statistics over a populated CDM.

use caremart::characterize;
use caremart::etl::{self, EtlConfig, EtlRules};
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
    for s in characterize::characterize(&mut mart)? {
        let avg = s.avg_value.map(|v| format!(" (exact {v:.3})")).unwrap_or_default();
        println!(
            "{:<34} {:<22} {}{avg}",
            s.analysis_name,
            s.stratum_1.unwrap_or_default(),
            s.count_value
        );
    }
    Ok(())
}
