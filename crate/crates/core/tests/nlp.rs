use std::collections::BTreeMap;

use caremart::fixtures;
use caremart::nlp::{self, compile_dictionary, CompiledDictionary, ManualLinks, NlpRunConfig};
use caremart::store::{Note, NoteNlp};
use chrono::NaiveDate;
use proptest::prelude::*;

fn dictionary() -> CompiledDictionary {
    let vocab = fixtures::vocabulary();
    let mut dict = compile_dictionary(fixtures::dictionary_entries(), &ManualLinks::default(), Some(&vocab)).unwrap();
    dict.extend(fixtures::rehab_entries(), Some(&vocab)).unwrap();
    dict
}

fn term_strategy() -> impl Strategy<Value = String> {
    let terms: Vec<String> = fixtures::dictionary_entries()
        .into_iter()
        .map(|e| e.surface_term)
        .collect();
    let filler = [
        "the", "patient", "no", "denies", "was", "seen", "today", "h/o", "knee", "café", "—", "., ", "\n",
    ];
    prop_oneof![
        3 => proptest::sample::select(filler.to_vec()).prop_map(str::to_string),
        2 => proptest::sample::select(terms).prop_map(|t| t),
        1 => proptest::sample::select(fixtures::fall_terms()).prop_map(|t| t.to_uppercase()),
    ]
}

fn text_strategy() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        (
            term_strategy(),
            proptest::sample::select(vec![" ", "  ", ", ", "-", ". "]),
        ),
        0..40,
    )
    .prop_map(|parts| parts.into_iter().map(|(t, sep)| format!("{t}{sep}")).collect())
}

fn notes(texts: &[String]) -> Vec<Note> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Note {
            note_id: i as i64 + 1,
            person_id: 100 + i as i64 % 7,
            note_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            note_type_concept_id: 44814640,
            note_title: String::new(),
            note_text: t.clone(),
            visit_occurrence_id: None,
        })
        .collect()
}

fn char_slice(text: &str, offset: usize, len: usize) -> String {
    text.chars().skip(offset).take(len).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn mentions_are_disjoint_and_offsets_exact(text in text_strategy()) {
        let dict = dictionary();
        let mentions = dict.extract(&text);
        let mut spans: Vec<(usize, usize)> = mentions.iter().map(|m| (m.char_offset, m.char_offset + m.char_len)).collect();
        spans.sort();
        spans.dedup();
        for w in spans.windows(2) {
            prop_assert!(w[0].1 <= w[1].0, "overlap {:?}", w);
        }
        for m in &mentions {
            prop_assert_eq!(&text[m.byte_start..m.byte_end], m.matched_text.as_str());
            prop_assert_eq!(char_slice(&text, m.char_offset, m.char_len), m.matched_text.clone());
        }
    }

    #[test]
    fn rows_point_at_their_variants(texts in proptest::collection::vec(text_strategy(), 1..12)) {
        let dict = dictionary();
        let notes = notes(&texts);
        let out = nlp::run_pipeline(&notes, &dict, &NlpRunConfig { batch_size: 3, ..NlpRunConfig::default() }).unwrap();
        let by_id: BTreeMap<i64, &Note> = notes.iter().map(|n| (n.note_id, n)).collect();
        for r in &out.rows {
            let text = &by_id[&r.note_id].note_text;
            let len = r.lexical_variant.chars().count();
            prop_assert_eq!(char_slice(text, r.offset as usize, len), r.lexical_variant.clone());
            prop_assert!(r.snippet.contains(&r.lexical_variant));
        }
        let ids: Vec<i64> = out.rows.iter().map(|r| r.note_nlp_id).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn output_ignores_worker_count_and_batching(
        texts in proptest::collection::vec(text_strategy(), 1..30),
        batch in 1usize..8,
    ) {
        let dict = dictionary();
        let notes = notes(&texts);
        let run = |workers: usize, batch_size: usize| -> Vec<NoteNlp> {
            nlp::run_pipeline(&notes, &dict, &NlpRunConfig { worker_count: workers, batch_size, ..NlpRunConfig::default() })
                .unwrap()
                .rows
        };
        let base = run(1, 500);
        for w in [1, 4, 8] {
            prop_assert_eq!(&run(w, batch), &base);
        }
    }
}

#[test]
fn negation_cues_within_five_tokens() {
    let dict = dictionary();
    let m = dict.extract("Patient denies a recent fall at home.");
    let fall: Vec<_> = m
        .iter()
        .filter(|m| dict.entry(m.entry).concept_id == fixtures::FALL_CONCEPT_ID)
        .collect();
    assert_eq!(fall.len(), 1);
    assert!(fall[0].negated);
    let m = dict.extract("Patient denies any recent episode of a fall at home.");
    assert!(m.iter().all(|m| !m.negated));
}

#[test]
fn kill_and_resume_matches_uninterrupted_run() {
    let dict = dictionary();
    let texts: Vec<String> = (0..200)
        .map(|i| {
            format!(
                "note {i}: patient had a fall and {} pain",
                if i % 3 == 0 { "no" } else { "some" }
            )
        })
        .collect();
    let notes = notes(&texts);
    let dir = tempfile::tempdir().unwrap();
    let cfg = NlpRunConfig {
        batch_size: 10,
        checkpoint_every: 2,
        checkpoint_dir: Some(dir.path().to_owned()),
        ..NlpRunConfig::default()
    };
    let full = nlp::run_pipeline(
        &notes,
        &dict,
        &NlpRunConfig {
            checkpoint_dir: None,
            ..cfg.clone()
        },
    )
    .unwrap();
    let partial = nlp::run_pipeline(
        &notes,
        &dict,
        &NlpRunConfig {
            stop_after_batches: Some(7),
            ..cfg.clone()
        },
    )
    .unwrap();
    assert!(!partial.complete);
    let resumed = nlp::run_pipeline(&notes, &dict, &cfg).unwrap();
    assert!(resumed.complete);
    assert_eq!(resumed.rows, full.rows);
}
