//! Builds the stroke + diabetes + physical therapy cohort and its attrition.

use caremart::cohort::{self, GenerateOptions};
use caremart::etl::{self, EtlConfig, EtlRules};
use caremart::fixtures;
use caremart::nlp::{self, NlpRunConfig};
use caremart::store::Datamart;
use caremart::synth::{self, GenConfig};

fn main() -> caremart::Result<()> {
    let (bundle, manifest) = synth::generate(&GenConfig::default())?;
    let mut mart = Datamart::in_memory();
    synth::write_raw(&bundle, &mut mart)?;
    let vocab = fixtures::vocabulary();
    etl::run_etl(&mut mart, &vocab, &EtlRules::fixture(), &EtlConfig::default())?;

    let def = fixtures::stroke_cohort();
    let result = cohort::generate(&def, &mart, &GenerateOptions::default())?;
    println!("{}", def.name);
    println!(
        "  entry events {:>5}, persons {:>5}",
        result.attrition.initial_events, result.attrition.initial_persons
    );
    for step in &result.attrition.after_rules {
        println!("  {:<45} {:>5}", step.name, step.persons);
    }
    println!(
        "  subjects {:?} (planted {:?})",
        result.subjects(),
        manifest.planted_cohort_subject_ids
    );

    // a cohort entered through note mentions
    let mut dict = nlp::compile_dictionary(fixtures::dictionary_entries(), &Default::default(), Some(&vocab))?;
    dict.extend(fixtures::rehab_entries(), Some(&vocab))?;
    nlp::run_nlp(&mut mart, &dict, &NlpRunConfig::default())?;
    let falls = cohort::generate(&fixtures::fall_mentions_cohort(), &mart, &GenerateOptions::default())?;
    println!("fall-mention cohort: {} subjects", falls.rows.len());
    Ok(())
}
