//! Checked-in reference data: a small vocabulary, the concept dictionary, the
//! rehabilitation category extension, manual rule sets and cohort definitions.
//!
//! The same files live under `crates/core/fixtures/` so they can be edited
//! and passed to the CLI by path.

use crate::cohort::CohortDefinition;
use crate::nlp::DictionaryEntry;
use crate::vocab::{RuleSet, VocabularyStore};

pub const CONCEPT_CSV: &str = include_str!("../fixtures/concept.csv");
pub const CONCEPT_RELATIONSHIP_CSV: &str = include_str!("../fixtures/concept_relationship.csv");
pub const DICTIONARY_CSV: &str = include_str!("../fixtures/dictionary.csv");
pub const REHAB_CATEGORIES_CSV: &str = include_str!("../fixtures/rehab_categories.csv");
pub const STROKE_COHORT_JSON: &str = include_str!("../fixtures/stroke_cohort.json");
pub const FALL_MENTIONS_JSON: &str = include_str!("../fixtures/fall_mentions.json");

const RULES: [(&str, &str); 5] = [
    ("gender", include_str!("../fixtures/rules/gender.json")),
    ("race", include_str!("../fixtures/rules/race.json")),
    ("ethnicity", include_str!("../fixtures/rules/ethnicity.json")),
    ("enc_type", include_str!("../fixtures/rules/enc_type.json")),
    ("parent_kind", include_str!("../fixtures/rules/note_type.json")),
];

/// Concept id of the fall observation used throughout the fixtures.
pub const FALL_CONCEPT_ID: i64 = 436583;
pub const STROKE_CONCEPT_ID: i64 = 35207821;
pub const T2DM_CONCEPT_ID: i64 = 35206882;
pub const PHYSICAL_THERAPY_CONCEPT_ID: i64 = 2314284;

pub fn vocabulary() -> VocabularyStore {
    VocabularyStore::load_from(CONCEPT_CSV.as_bytes(), CONCEPT_RELATIONSHIP_CSV.as_bytes())
        .expect("fixture vocabulary is valid")
}

/// Fixture rule set for one raw field: `gender`, `race`, `ethnicity`,
/// `enc_type` or `parent_kind`.
pub fn rule_set(field: &str) -> RuleSet {
    let (_, text) = RULES
        .iter()
        .find(|(f, _)| *f == field)
        .unwrap_or_else(|| panic!("no fixture rule set for {field}"));
    RuleSet::from_json(text).expect("fixture rule set is valid")
}

pub fn dictionary_entries() -> Vec<DictionaryEntry> {
    crate::nlp::read_dictionary(DICTIONARY_CSV.as_bytes()).expect("fixture dictionary is valid")
}

pub fn rehab_entries() -> Vec<DictionaryEntry> {
    crate::nlp::read_dictionary(REHAB_CATEGORIES_CSV.as_bytes()).expect("fixture rehab categories are valid")
}

pub fn stroke_cohort() -> CohortDefinition {
    CohortDefinition::parse(STROKE_COHORT_JSON).expect("fixture definition is valid")
}

pub fn fall_mentions_cohort() -> CohortDefinition {
    CohortDefinition::parse(FALL_MENTIONS_JSON).expect("fixture definition is valid")
}

/// Surface forms of the fall concept as they appear in the fixture dictionary.
pub fn fall_terms() -> Vec<String> {
    dictionary_entries()
        .into_iter()
        .filter(|e| e.concept_id == FALL_CONCEPT_ID)
        .map(|e| e.surface_term)
        .collect()
}
