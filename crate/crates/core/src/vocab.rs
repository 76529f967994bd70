//! Standardized vocabulary store and source-code mapping.
//!
//! [`VocabularyStore::to_cdm`] resolves a raw code against an ordered list of
//! vocabularies: the first vocabulary holding the code wins, a standard
//! source concept maps to itself, and a non-standard one follows its
//! `Maps to` relationship one hop. Local value sets that have no standard
//! code (ethnicity labels, encounter types) go through a [`RuleSet`].

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{record, Cell, ColumnKind, Datamart, Namespace, Record, Value};

pub const MAPS_TO: &str = "Maps to";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardFlag {
    Standard,
    NonStandard,
}

// OMOP encodes standard concepts as 'S' and leaves the column empty otherwise.
impl Cell for StandardFlag {
    const KIND: ColumnKind = ColumnKind::String;
    const NULLABLE: bool = true;
    fn to_value(&self) -> Value {
        match self {
            StandardFlag::Standard => Value::Text("S".into()),
            StandardFlag::NonStandard => Value::Null,
        }
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Text(s) if s == "S" => Some(StandardFlag::Standard),
            Value::Null => Some(StandardFlag::NonStandard),
            Value::Text(s) if s == "C" => Some(StandardFlag::NonStandard),
            _ => None,
        }
    }
}

record! {
    pub struct Concept in Cdm."concept" {
        pub concept_id: i64,
        pub concept_name: String,
        pub domain_id: String,
        pub vocabulary_id: String,
        pub concept_class_id: String,
        pub standard_concept: StandardFlag,
        pub concept_code: String,
    }
}

impl Concept {
    pub fn is_standard(&self) -> bool {
        self.standard_concept == StandardFlag::Standard
    }
}

record! {
    pub struct ConceptRelationship in Cdm."concept_relationship" {
        pub concept_id_1: i64,
        pub concept_id_2: i64,
        pub relationship_id: String,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingStatus {
    Mapped,
    SourceOnly,
    Unmapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingResult {
    /// 0 when the code is in none of the listed vocabularies.
    pub source_concept_id: i64,
    /// 0 when no standard concept could be reached.
    pub standard_concept_id: i64,
    pub resolved_vocabulary: Option<String>,
    pub status: MappingStatus,
    /// Number of standard `Maps to` targets; more than one means the lowest id was chosen.
    pub target_count: usize,
}

impl MappingResult {
    pub fn unmapped() -> Self {
        MappingResult {
            source_concept_id: 0,
            standard_concept_id: 0,
            resolved_vocabulary: None,
            status: MappingStatus::Unmapped,
            target_count: 0,
        }
    }
}

/// Immutable, indexed concept and relationship tables.
#[derive(Debug, Clone, Default)]
pub struct VocabularyStore {
    concepts: Vec<Concept>,
    relationships: Vec<ConceptRelationship>,
    by_id: HashMap<i64, usize>,
    by_code: HashMap<(String, String), usize>,
    /// Standard `Maps to` targets per source concept, ascending.
    maps_to: HashMap<i64, Vec<i64>>,
}

impl VocabularyStore {
    /// Loads `concept.csv` and `concept_relationship.csv`.
    pub fn load(concept_csv: &Path, relationship_csv: &Path) -> Result<Self> {
        let c = fs::File::open(concept_csv).map_err(|e| Error::io(concept_csv, e))?;
        let r = fs::File::open(relationship_csv).map_err(|e| Error::io(relationship_csv, e))?;
        Self::load_from(c, r)
    }

    pub fn load_from(concept_csv: impl io::Read, relationship_csv: impl io::Read) -> Result<Self> {
        let mut scratch = Datamart::in_memory();
        scratch.load_csv_from(Namespace::Cdm, Concept::TABLE, concept_csv)?;
        scratch.load_csv_from(Namespace::Cdm, ConceptRelationship::TABLE, relationship_csv)?;
        Self::from_datamart(&scratch)
    }

    pub fn from_datamart(mart: &Datamart) -> Result<Self> {
        Self::from_records(mart.records()?, mart.records()?)
    }

    pub fn from_records(concepts: Vec<Concept>, relationships: Vec<ConceptRelationship>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(concepts.len());
        let mut by_code = HashMap::with_capacity(concepts.len());
        let mut duplicates = BTreeSet::new();
        for (i, c) in concepts.iter().enumerate() {
            if c.concept_id <= 0 {
                return Err(Error::Validation(format!(
                    "concept_id must be positive, found {} for {}/{}",
                    c.concept_id, c.vocabulary_id, c.concept_code
                )));
            }
            if by_id.insert(c.concept_id, i).is_some() {
                duplicates.insert(format!("concept_id {}", c.concept_id));
            }
            if by_code
                .insert((c.vocabulary_id.clone(), c.concept_code.clone()), i)
                .is_some()
            {
                duplicates.insert(format!("{}/{}", c.vocabulary_id, c.concept_code));
            }
        }
        if !duplicates.is_empty() {
            return Err(Error::Validation(format!(
                "duplicate vocabulary entries: {}",
                duplicates.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }

        let mut maps_to: HashMap<i64, Vec<i64>> = HashMap::new();
        for r in &relationships {
            for id in [r.concept_id_1, r.concept_id_2] {
                if !by_id.contains_key(&id) {
                    return Err(Error::Validation(format!(
                        "relationship {} -> {} references unknown concept {id}",
                        r.concept_id_1, r.concept_id_2
                    )));
                }
            }
            if r.relationship_id == MAPS_TO && concepts[by_id[&r.concept_id_2]].is_standard() {
                maps_to.entry(r.concept_id_1).or_default().push(r.concept_id_2);
            }
        }
        for targets in maps_to.values_mut() {
            targets.sort_unstable();
            targets.dedup();
        }

        Ok(VocabularyStore {
            concepts,
            relationships,
            by_id,
            by_code,
            maps_to,
        })
    }

    /// The checked-in fixture vocabulary.
    pub fn fixture() -> Self {
        crate::fixtures::vocabulary()
    }

    /// Writes the concept and relationship tables into `cdm`.
    pub fn write_to(&self, mart: &mut Datamart) -> Result<()> {
        mart.replace(self.concepts.iter().cloned())?;
        mart.replace(self.relationships.iter().cloned())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn relationships(&self) -> &[ConceptRelationship] {
        &self.relationships
    }

    pub fn get(&self, concept_id: i64) -> Option<&Concept> {
        self.by_id.get(&concept_id).map(|&i| &self.concepts[i])
    }

    pub fn contains(&self, concept_id: i64) -> bool {
        self.by_id.contains_key(&concept_id)
    }

    pub fn lookup(&self, vocabulary_id: &str, code: &str) -> Option<&Concept> {
        self.by_code
            .get(&(vocabulary_id.to_owned(), code.to_owned()))
            .map(|&i| &self.concepts[i])
    }

    /// Resolves `code` against `vocab_order`, trying vocabularies in order.
    pub fn to_cdm<S: AsRef<str>>(&self, code: &str, vocab_order: &[S]) -> MappingResult {
        for vocab in vocab_order {
            let vocab = vocab.as_ref();
            let Some(source) = self.lookup(vocab, code) else {
                continue;
            };
            let resolved_vocabulary = Some(vocab.to_owned());
            if source.is_standard() {
                return MappingResult {
                    source_concept_id: source.concept_id,
                    standard_concept_id: source.concept_id,
                    resolved_vocabulary,
                    status: MappingStatus::Mapped,
                    target_count: 1,
                };
            }
            return match self.maps_to.get(&source.concept_id) {
                Some(targets) => MappingResult {
                    source_concept_id: source.concept_id,
                    standard_concept_id: targets[0],
                    resolved_vocabulary,
                    status: MappingStatus::Mapped,
                    target_count: targets.len(),
                },
                None => MappingResult {
                    source_concept_id: source.concept_id,
                    standard_concept_id: 0,
                    resolved_vocabulary,
                    status: MappingStatus::SourceOnly,
                    target_count: 0,
                },
            };
        }
        MappingResult::unmapped()
    }

    /// Maps every `(code, vocab_order)` pair and tallies the outcomes.
    pub fn coverage_report<'a, I, S>(&self, codes: I) -> CoverageReport
    where
        I: IntoIterator<Item = (&'a str, &'a [S])>,
        S: AsRef<str> + 'a,
    {
        let mut report = CoverageReport::default();
        for (code, order) in codes {
            let m = self.to_cdm(code, order);
            report.total += 1;
            match m.status {
                MappingStatus::Mapped => report.mapped += 1,
                MappingStatus::SourceOnly => report.source_only += 1,
                MappingStatus::Unmapped => report.unmapped += 1,
            }
            if m.target_count > 1 {
                report.multi_target += 1;
            }
        }
        report.unmapped_fraction = if report.total == 0 {
            0.0
        } else {
            report.unmapped as f64 / report.total as f64
        };
        report
    }

    /// Case-insensitive substring search over concept names and codes,
    /// ordered by concept id.
    pub fn search(&self, query: &str) -> Vec<&Concept> {
        let needle = query.trim().to_lowercase();
        let mut hits: Vec<&Concept> = self
            .concepts
            .iter()
            .filter(|c| {
                needle.is_empty()
                    || c.concept_name.to_lowercase().contains(&needle)
                    || c.concept_code.to_lowercase().contains(&needle)
            })
            .collect();
        hits.sort_by_key(|c| c.concept_id);
        hits
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub mapped: usize,
    pub source_only: usize,
    pub unmapped: usize,
    pub unmapped_fraction: f64,
    /// Codes whose source concept had several standard targets.
    pub multi_target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(rename = "match")]
    pub match_value: String,
    pub concept_id: i64,
}

/// An ordered `CASE WHEN field = '...' THEN id ... ELSE default END` mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    pub field: String,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub default: i64,
}

impl RuleSet {
    pub fn new(field: impl Into<String>, rules: Vec<(&str, i64)>) -> Result<Self> {
        let rs = RuleSet {
            field: field.into(),
            rules: rules
                .into_iter()
                .map(|(m, id)| Rule {
                    match_value: m.to_owned(),
                    concept_id: id,
                })
                .collect(),
            default: 0,
        };
        rs.validate()?;
        Ok(rs)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rs: RuleSet = serde_json::from_str(text)?;
        rs.validate()?;
        Ok(rs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rules {
            if !seen.insert(r.match_value.trim()) {
                return Err(Error::Validation(format!(
                    "rule set {}: duplicate match value {:?}",
                    self.field, r.match_value
                )));
            }
        }
        Ok(())
    }

    /// First rule whose match value equals `value` (both trimmed, case-sensitive),
    /// else the default.
    pub fn apply(&self, value: &str) -> i64 {
        let value = value.trim();
        self.rules
            .iter()
            .find(|r| r.match_value.trim() == value)
            .map_or(self.default, |r| r.concept_id)
    }

    /// Every concept id the rule set can produce.
    pub fn targets(&self) -> impl Iterator<Item = i64> + '_ {
        self.rules
            .iter()
            .map(|r| r.concept_id)
            .chain(std::iter::once(self.default))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn concept(id: i64, vocab: &str, code: &str, std: bool) -> Concept {
        Concept {
            concept_id: id,
            concept_name: format!("c{id}"),
            domain_id: "Condition".into(),
            vocabulary_id: vocab.into(),
            concept_class_id: "x".into(),
            standard_concept: if std {
                StandardFlag::Standard
            } else {
                StandardFlag::NonStandard
            },
            concept_code: code.into(),
        }
    }

    fn maps(a: i64, b: i64) -> ConceptRelationship {
        ConceptRelationship {
            concept_id_1: a,
            concept_id_2: b,
            relationship_id: MAPS_TO.into(),
        }
    }

    #[test]
    fn fixture_holds_named_concepts() {
        let v = VocabularyStore::fixture();
        assert_eq!(v.get(35207821).unwrap().concept_code, "I63.9");
        for id in [35207821, 35206882, 2314284, 436583] {
            assert!(v.get(id).unwrap().is_standard(), "{id}");
        }
    }

    #[test]
    fn empty_relationships_make_non_standard_source_only() {
        let v = VocabularyStore::from_records(
            vec![
                concept(1, "ICD9CM", "250.00", false),
                concept(2, "ICD10CM", "E11.9", true),
            ],
            vec![],
        )
        .unwrap();
        let m = v.to_cdm("250.00", &["ICD9CM"]);
        assert_eq!(m.status, MappingStatus::SourceOnly);
        assert_eq!((m.source_concept_id, m.standard_concept_id), (1, 0));
    }

    #[test]
    fn duplicate_code_is_rejected() {
        let err = VocabularyStore::from_records(
            vec![concept(1, "CPT4", "97110", true), concept(2, "CPT4", "97110", true)],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("CPT4/97110"), "{err}");
    }

    #[test]
    fn dangling_relationship_is_rejected() {
        let err = VocabularyStore::from_records(vec![concept(1, "A", "x", false)], vec![maps(1, 5)]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn fallback_to_second_vocabulary() {
        // R29.6 exists only in ICD10 in the fixture.
        let v = VocabularyStore::fixture();
        let in_fixture: Vec<&str> = v
            .concepts()
            .iter()
            .filter(|c| c.concept_code == "R29.6")
            .map(|c| c.vocabulary_id.as_str())
            .collect();
        assert_eq!(in_fixture, vec!["ICD10"]);
        let m = v.to_cdm("R29.6", &["CPT4", "ICD10"]);
        assert_eq!(m.resolved_vocabulary.as_deref(), Some("ICD10"));
        assert_eq!(m.status, MappingStatus::Mapped);
        assert_eq!(m.standard_concept_id, 436583);
    }

    #[test]
    fn first_listed_vocabulary_wins() {
        // I10 is in both ICD10CM and ICD10.
        let v = VocabularyStore::fixture();
        assert_eq!(
            v.to_cdm("I10", &["ICD10", "ICD10CM"]).resolved_vocabulary.as_deref(),
            Some("ICD10")
        );
        assert_eq!(
            v.to_cdm("I10", &["ICD10CM", "ICD10"]).resolved_vocabulary.as_deref(),
            Some("ICD10CM")
        );
    }

    #[test]
    fn unknown_code_is_unmapped_with_zero_ids() {
        let v = VocabularyStore::fixture();
        let m = v.to_cdm("ZZZ99", &["CPT4", "ICD10CM"]);
        assert_eq!(m, MappingResult::unmapped());
    }

    #[test]
    fn standard_source_maps_to_itself() {
        let v = VocabularyStore::fixture();
        let m = v.to_cdm("97110", &["CPT4"]);
        assert_eq!(m.source_concept_id, 2314284);
        assert_eq!(m.standard_concept_id, 2314284);
    }

    #[test]
    fn multiple_targets_pick_lowest_id() {
        let v = VocabularyStore::from_records(
            vec![
                concept(10, "ICD9CM", "x", false),
                concept(30, "SNOMED", "a", true),
                concept(20, "SNOMED", "b", true),
            ],
            vec![maps(10, 30), maps(10, 20)],
        )
        .unwrap();
        let m = v.to_cdm("x", &["ICD9CM"]);
        assert_eq!(m.standard_concept_id, 20);
        assert_eq!(m.target_count, 2);
        let report = v.coverage_report([("x", &["ICD9CM"][..])]);
        assert_eq!(report.multi_target, 1);
    }

    #[test]
    fn table_a1_ethnicity_rules() {
        let rs = fixtures::rule_set("ethnicity");
        assert_eq!(rs.apply("HISPANIC OR LATINO"), 38003563);
        assert_eq!(rs.apply("NOT HISPANIC OR LATINO"), 38003564);
        assert_eq!(rs.apply("UNKNOWN"), 0);
        assert_eq!(rs.apply("  HISPANIC OR LATINO "), 38003563);
        assert_eq!(rs.apply("hispanic or latino"), 0);
    }

    #[test]
    fn table_a2_encounter_rules() {
        let rs = fixtures::rule_set("enc_type");
        assert_eq!(rs.apply("ABSTRACT"), 45877039);
        assert_eq!(rs.apply("ANTICOAGULATION"), 35803400);
        assert_eq!(rs.apply("ANTICOAGULATION SCHEDULED"), 35803400);
        assert_eq!(rs.apply("APPOINTMENT"), 4089197);
        assert_eq!(rs.apply("TELEPHONE"), 0);
    }

    #[test]
    fn rule_set_json_format() {
        let rs =
            RuleSet::from_json(r#"{"field": "ethnicity", "rules": [{"match": "A", "concept_id": 5}], "default": 0}"#)
                .unwrap();
        assert_eq!(rs.apply("A"), 5);
        assert!(RuleSet::from_json(
            r#"{"field": "f", "rules": [{"match": "A", "concept_id": 1}, {"match": " A", "concept_id": 2}]}"#
        )
        .is_err());
    }

    #[test]
    fn coverage_of_empty_input_is_zero() {
        let v = VocabularyStore::fixture();
        let r = v.coverage_report(std::iter::empty::<(&str, &[&str])>());
        assert_eq!(r, CoverageReport::default());
    }

    #[test]
    fn coverage_fraction() {
        let v = VocabularyStore::fixture();
        let order: &[&str] = &["CPT4"];
        let mut codes: Vec<(&str, &[&str])> = vec![("97110", order); 9037];
        codes.extend(std::iter::repeat_n(("0999T", order), 963));
        let r = v.coverage_report(codes);
        assert_eq!(r.total, 10_000);
        assert_eq!(r.unmapped, 963);
        assert!((r.unmapped_fraction - 0.0963).abs() < 1e-12);
    }

    #[test]
    fn search_matches_name_and_code() {
        let v = VocabularyStore::fixture();
        let mut ids: Vec<i64> = v.search("cerebral infarction").iter().map(|c| c.concept_id).collect();
        ids.sort();
        assert!(ids.contains(&35207821));
        assert!(v.search("97110").iter().any(|c| c.concept_id == 2314284));
    }
}
