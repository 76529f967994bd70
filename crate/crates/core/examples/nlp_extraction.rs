//! Dictionary concept extraction from note text, with negation and snippets.

use caremart::fixtures;
use caremart::nlp::{self, compile_dictionary, ManualLinks, NlpRunConfig};
use caremart::store::Note;
use chrono::NaiveDate;

fn main() -> caremart::Result<()> {
    let vocab = fixtures::vocabulary();
    let dict = compile_dictionary(fixtures::dictionary_entries(), &ManualLinks::default(), Some(&vocab))?;
    let texts = [
        "Pt reports a Fall at home last week; right knee pain since.",
        "Denies fall. Continue physical therapy program.",
        "Type 2 diabetes stable, h/o stroke in 2019.",
    ];
    let notes: Vec<Note> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Note {
            note_id: i as i64 + 1,
            person_id: 1,
            note_date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
            note_type_concept_id: 44814640,
            note_title: String::new(),
            note_text: t.to_string(),
            visit_occurrence_id: None,
        })
        .collect();
    let out = nlp::run_pipeline(&notes, &dict, &NlpRunConfig::default())?;
    for r in &out.rows {
        println!(
            "note {} @{:<3} {:<20} concept {:<9} exists={} | {}",
            r.note_id, r.offset, r.lexical_variant, r.note_nlp_concept_id, r.term_exists, r.snippet
        );
    }
    nlp::write_metrics(&mut std::io::stdout(), &out.metrics)?;
    Ok(())
}
