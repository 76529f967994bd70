//! Descriptive statistics over the CDM namespace, stored in
//! `results.stat_record`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::store::{record, Datamart, Namespace, Note, NoteNlp, Person};

record! {
    /// One statistic. `avg_value` carries the unrounded figure for averages.
    pub struct StatRecord in Results."stat_record" {
        pub analysis_name: String,
        pub stratum_1: Option<String>,
        pub stratum_2: Option<String>,
        pub count_value: i64,
        pub avg_value: Option<f64>,
    }
}

impl StatRecord {
    fn count(name: &str, stratum: Option<String>, count: u64) -> Self {
        StatRecord {
            analysis_name: name.into(),
            stratum_1: stratum,
            stratum_2: None,
            count_value: count as i64,
            avg_value: None,
        }
    }

    fn average(name: &str, total: u64, persons: u64) -> Self {
        StatRecord {
            analysis_name: name.into(),
            stratum_1: None,
            stratum_2: None,
            count_value: rounded_average(total, persons) as i64,
            avg_value: Some(total as f64 / persons as f64),
        }
    }
}

pub const ROW_COUNT: &str = "row_count";
pub const PERSON_BY_GENDER: &str = "person_by_gender";
pub const NLP_TOTAL_MENTIONS: &str = "nlp_total_mentions";
pub const NLP_DISTINCT_CONCEPTS: &str = "nlp_distinct_concepts";
pub const NLP_MENTIONS_PER_PERSON: &str = "nlp_mentions_per_person";
pub const NLP_DISTINCT_CONCEPTS_PER_PERSON: &str = "nlp_distinct_concepts_per_person";

/// Event tables averaged per person, with the analysis name used for each.
pub const PER_PERSON_TABLES: [(&str, &str); 4] = [
    ("condition_occurrence", "conditions_per_person"),
    ("visit_occurrence", "visits_per_person"),
    ("note", "notes_per_person"),
    ("procedure_occurrence", "procedures_per_person"),
];

/// `total / persons` rounded half-up, in integer arithmetic.
pub fn rounded_average(total: u64, persons: u64) -> u64 {
    assert!(persons > 0, "average over zero persons");
    (2 * total + persons) / (2 * persons)
}

/// One row-count record per CDM table, stratified by table name.
pub fn summarize_tables(mart: &Datamart) -> Result<Vec<StatRecord>> {
    mart.registry()
        .tables(Namespace::Cdm)
        .map(|t| {
            let n = mart.row_count(Namespace::Cdm, t.name)? as u64;
            Ok(StatRecord::count(ROW_COUNT, Some(t.name.to_owned()), n))
        })
        .collect()
}

/// Events per person for condition, visit, note and procedure tables.
pub fn per_person_averages(mart: &Datamart) -> Result<Vec<StatRecord>> {
    let persons = mart.row_count(Namespace::Cdm, "person")? as u64;
    if persons == 0 {
        return Err(Error::Validation("per-person averages need at least one person".into()));
    }
    PER_PERSON_TABLES
        .iter()
        .map(|(table, name)| {
            let n = mart.row_count(Namespace::Cdm, table)? as u64;
            Ok(StatRecord::average(name, n, persons))
        })
        .collect()
}

/// Person counts per gender concept, with the concept id as stratum.
pub fn demographics_breakdown(mart: &Datamart) -> Result<Vec<StatRecord>> {
    let persons: Vec<Person> = mart.records()?;
    let mut by_gender: BTreeMap<i64, u64> = BTreeMap::new();
    for p in &persons {
        *by_gender.entry(p.gender_concept_id).or_default() += 1;
    }
    Ok(by_gender
        .into_iter()
        .map(|(g, n)| StatRecord::count(PERSON_BY_GENDER, Some(g.to_string()), n))
        .collect())
}

/// Mention totals and per-person mention figures. Per-person figures divide
/// by the person table size; with no persons they are reported as zero.
pub fn nlp_concept_stats(mart: &Datamart) -> Result<Vec<StatRecord>> {
    let rows: Vec<NoteNlp> = mart.records()?;
    let notes: Vec<Note> = mart.records()?;
    let persons = mart.row_count(Namespace::Cdm, "person")? as u64;
    let owner: HashMap<i64, i64> = notes.iter().map(|n| (n.note_id, n.person_id)).collect();

    let distinct: BTreeSet<i64> = rows.iter().map(|r| r.note_nlp_concept_id).collect();
    let mut per_person: HashMap<i64, BTreeSet<i64>> = HashMap::new();
    for r in &rows {
        if let Some(&p) = owner.get(&r.note_id) {
            per_person.entry(p).or_default().insert(r.note_nlp_concept_id);
        }
    }
    let distinct_pairs: u64 = per_person.values().map(|s| s.len() as u64).sum();
    let total = rows.len() as u64;

    let avg = |name: &str, n: u64| {
        if persons == 0 {
            StatRecord {
                avg_value: Some(0.0),
                ..StatRecord::count(name, None, 0)
            }
        } else {
            StatRecord::average(name, n, persons)
        }
    };
    Ok(vec![
        StatRecord::count(NLP_TOTAL_MENTIONS, None, total),
        StatRecord::count(NLP_DISTINCT_CONCEPTS, None, distinct.len() as u64),
        avg(NLP_MENTIONS_PER_PERSON, total),
        avg(NLP_DISTINCT_CONCEPTS_PER_PERSON, distinct_pairs),
    ])
}

/// Runs every analysis and replaces `results.stat_record`.
pub fn characterize(mart: &mut Datamart) -> Result<Vec<StatRecord>> {
    let mut out = summarize_tables(mart)?;
    out.extend(per_person_averages(mart)?);
    out.extend(demographics_breakdown(mart)?);
    out.extend(nlp_concept_stats(mart)?);
    mart.replace(out.iter().cloned())?;
    Ok(out)
}

/// Looks up one record by analysis name and first stratum.
pub fn find<'a>(stats: &'a [StatRecord], analysis: &str, stratum_1: Option<&str>) -> Option<&'a StatRecord> {
    stats
        .iter()
        .find(|s| s.analysis_name == analysis && s.stratum_1.as_deref() == stratum_1)
}
