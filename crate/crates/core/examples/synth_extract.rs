//! Writes a synthetic raw extract plus its ground-truth manifest.

use caremart::synth::{self, GenConfig};

fn main() -> caremart::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("caremart-extract"), Into::into);
    let cfg = GenConfig {
        n_patients: 300,
        ..GenConfig::default()
    };
    let cfg = GenConfig {
        mention_patients: [("fall".to_string(), 40)].into(),
        variant_expansion: [("fall".to_string(), 80)].into(),
        ..cfg
    };
    let (bundle, manifest) = synth::generate(&cfg)?;
    synth::write_extract(&bundle, &manifest, &out)?;
    println!("extract in {}", out.display());
    for (table, n) in bundle.counts() {
        println!("  {table:<16} {n}");
    }
    println!("planted cohort subjects: {:?}", manifest.planted_cohort_subject_ids);
    println!("planted mention spans:   {}", manifest.planted_mention_spans.len());
    Ok(())
}
