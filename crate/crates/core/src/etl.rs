//! RAW → CDM transformation.
//!
//! Each transform reads one raw table, maps codes and local values to
//! concept ids, and either emits a CDM row or records an [`Exclusion`]. For
//! every transform `raw_count = cdm_count + excluded`. Output ids are
//! assigned from a single [`IdAllocator`] after sorting on natural keys, so
//! reruns over the same raw data produce identical tables.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{
    record, ConditionOccurrence, Datamart, Death, Namespace, Note, NoteParentKind, ObservationPeriod, Person,
    ProcedureOccurrence, RawDemographics, RawDiagnosis, RawEncounter, RawNoteEntry, RawProcedure, Record,
    VisitOccurrence, ENCOUNTER_NOTES, PROCEDURE_NOTES,
};
use crate::vocab::{MappingStatus, RuleSet, VocabularyStore};

pub const REASON_UNMAPPED: &str = "unmapped code";
pub const REASON_UNKNOWN_PERSON: &str = "unknown person";
pub const REASON_CONFLICTING_PATIENT: &str = "conflicting patient_id";
pub const REASON_DUPLICATE_SEQ: &str = "duplicate entry_seq";

/// OMOP type concept for EHR-derived records.
pub const EHR_TYPE_CONCEPT: i64 = 32817;

record! {
    /// A raw row that did not make it into the CDM, with the reason.
    pub struct Exclusion in Results."etl_exclusion" {
        pub source_table: String,
        pub raw_key: String,
        pub reason: String,
    }
}

impl Exclusion {
    fn new(source_table: &str, raw_key: String, reason: &str) -> Self {
        Exclusion {
            source_table: source_table.to_owned(),
            raw_key,
            reason: reason.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TypeConcepts {
    pub condition: i64,
    pub visit: i64,
    pub procedure: i64,
    pub observation_period: i64,
}

impl Default for TypeConcepts {
    fn default() -> Self {
        TypeConcepts {
            condition: EHR_TYPE_CONCEPT,
            visit: EHR_TYPE_CONCEPT,
            procedure: EHR_TYPE_CONCEPT,
            observation_period: EHR_TYPE_CONCEPT,
        }
    }
}

/// Vocabulary chains per raw code-type label, and type-concept constants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EtlConfig {
    pub dx_vocab_chains: BTreeMap<String, Vec<String>>,
    pub default_dx_chain: Vec<String>,
    pub px_vocab_chains: BTreeMap<String, Vec<String>>,
    pub default_px_chain: Vec<String>,
    pub type_concepts: TypeConcepts,
}

impl Default for EtlConfig {
    fn default() -> Self {
        let chain = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let mut dx = BTreeMap::new();
        dx.insert("ICD10CM".into(), chain(&["ICD10CM", "ICD10", "ICD9CM"]));
        dx.insert("ICD10".into(), chain(&["ICD10", "ICD10CM", "ICD9CM"]));
        dx.insert("ICD9CM".into(), chain(&["ICD9CM", "ICD10CM", "ICD10"]));
        let mut px = BTreeMap::new();
        px.insert("CPT4".into(), chain(&["CPT4"]));
        EtlConfig {
            dx_vocab_chains: dx,
            default_dx_chain: chain(&["ICD10CM", "ICD10", "ICD9CM"]),
            px_vocab_chains: px,
            default_px_chain: chain(&["CPT4"]),
            type_concepts: TypeConcepts::default(),
        }
    }
}

impl EtlConfig {
    pub fn dx_chain(&self, code_type: &str) -> &[String] {
        self.dx_vocab_chains
            .get(code_type.trim())
            .unwrap_or(&self.default_dx_chain)
    }

    pub fn px_chain(&self, code_type: &str) -> &[String] {
        self.px_vocab_chains
            .get(code_type.trim())
            .unwrap_or(&self.default_px_chain)
    }
}

/// The manual mappings the ETL applies to local categorical values.
#[derive(Debug, Clone)]
pub struct EtlRules {
    pub gender: RuleSet,
    pub race: RuleSet,
    pub ethnicity: RuleSet,
    pub enc_type: RuleSet,
    pub note_type: RuleSet,
}

impl EtlRules {
    pub fn fixture() -> Self {
        use crate::fixtures::rule_set;
        EtlRules {
            gender: rule_set("gender"),
            race: rule_set("race"),
            ethnicity: rule_set("ethnicity"),
            enc_type: rule_set("enc_type"),
            note_type: rule_set("parent_kind"),
        }
    }

    pub fn all(&self) -> [&RuleSet; 5] {
        [
            &self.gender,
            &self.race,
            &self.ethnicity,
            &self.enc_type,
            &self.note_type,
        ]
    }
}

/// Per-table id sequences. Ids start at 1 and are never reused within a run.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next: BTreeMap<String, i64>,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&mut self, table: &str) -> i64 {
        let slot = self.next.entry(table.to_owned()).or_insert(1);
        let id = *slot;
        *slot += 1;
        id
    }

    /// Last id handed out per table.
    pub fn watermarks(&self) -> BTreeMap<String, i64> {
        self.next.iter().map(|(k, v)| (k.clone(), v - 1)).collect()
    }
}

/// Rows produced by one transform plus the raw rows it excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformOutput<T> {
    pub rows: Vec<T>,
    pub excluded: Vec<Exclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    pub raw_table: String,
    pub cdm_table: String,
    pub raw_count: usize,
    pub cdm_count: usize,
    pub excluded: Vec<Exclusion>,
}

impl TransformReport {
    pub fn conserves(&self) -> bool {
        self.raw_count == self.cdm_count + self.excluded.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtlReport {
    pub transforms: Vec<TransformReport>,
    /// Row counts of tables derived without a one-to-one raw source.
    pub derived: BTreeMap<String, usize>,
    pub duration_ms: u128,
    pub id_watermarks: BTreeMap<String, i64>,
}

impl EtlReport {
    pub fn transform(&self, cdm_table: &str) -> Option<&TransformReport> {
        self.transforms.iter().find(|t| t.cdm_table == cdm_table)
    }
}

/// Free text of one encounter or procedure after merging its fragments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedNote {
    pub patient_id: i64,
    pub parent_id: i64,
    pub parent_kind: NoteParentKind,
    pub note_date: NaiveDate,
    pub text: String,
    pub fragment_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    /// One note per parent, ordered by `(parent_kind, parent_id)`.
    pub notes: Vec<MergedNote>,
    pub skipped: Vec<Exclusion>,
}

impl MergeOutcome {
    /// Distinct parents seen in the input.
    pub fn parent_count(&self) -> usize {
        self.notes.len() + self.skipped.len()
    }
}

pub const MERGED_NOTES: &str = "merged_notes";

/// Joins the fragments of each parent in ascending `entry_seq`, separated by a
/// single newline. The merged note is dated by its earliest fragment.
pub fn merge_note_entries<'a>(entries: impl IntoIterator<Item = &'a RawNoteEntry>) -> MergeOutcome {
    let mut groups: BTreeMap<(NoteParentKind, i64), Vec<&RawNoteEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry((e.parent_kind, e.parent_id)).or_default().push(e);
    }
    let mut notes = Vec::with_capacity(groups.len());
    let mut skipped = Vec::new();
    for ((kind, parent_id), mut frags) in groups {
        let key = format!("{kind}:{parent_id}");
        let patient_id = frags[0].patient_id;
        if frags.iter().any(|f| f.patient_id != patient_id) {
            log::warn!("note parent {key} has fragments from several patients; skipped");
            skipped.push(Exclusion::new(kind.raw_table(), key, REASON_CONFLICTING_PATIENT));
            continue;
        }
        frags.sort_by_key(|f| f.entry_seq);
        if frags.windows(2).any(|w| w[0].entry_seq == w[1].entry_seq) {
            log::warn!("note parent {key} repeats an entry_seq; skipped");
            skipped.push(Exclusion::new(kind.raw_table(), key, REASON_DUPLICATE_SEQ));
            continue;
        }
        let text = frags
            .iter()
            .map(|f| f.text_fragment.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        notes.push(MergedNote {
            patient_id,
            parent_id,
            parent_kind: kind,
            note_date: frags.iter().map(|f| f.note_date).min().expect("non-empty group"),
            text,
            fragment_count: frags.len(),
        });
    }
    MergeOutcome { notes, skipped }
}

/// One person per raw demographics row, plus a death row when a death date is present.
pub fn transform_demographics(raw: &[RawDemographics], rules: &EtlRules) -> Result<(Vec<Person>, Vec<Death>)> {
    let mut sorted: Vec<&RawDemographics> = raw.iter().collect();
    sorted.sort_by_key(|d| d.patient_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].patient_id == w[1].patient_id) {
        return Err(Error::Integrity(format!(
            "duplicate patient_id {} in raw.demographics",
            w[0].patient_id
        )));
    }
    let mut persons = Vec::with_capacity(sorted.len());
    let mut deaths = Vec::new();
    for d in sorted {
        persons.push(Person {
            person_id: d.patient_id,
            gender_concept_id: rules.gender.apply(&d.gender),
            year_of_birth: d.birth_date.year() as i64,
            month_of_birth: d.birth_date.month() as i64,
            day_of_birth: d.birth_date.day() as i64,
            race_concept_id: rules.race.apply(&d.race),
            ethnicity_concept_id: rules.ethnicity.apply(&d.ethnicity),
            gender_source_value: d.gender.clone(),
            race_source_value: d.race.clone(),
            ethnicity_source_value: d.ethnicity.clone(),
        });
        if let Some(death_date) = d.death_date {
            deaths.push(Death {
                person_id: d.patient_id,
                death_date,
            });
        }
    }
    Ok((persons, deaths))
}

/// One visit per encounter. Never excludes; an encounter for an unknown
/// patient or a repeated encounter id is an integrity error.
pub fn transform_encounters(
    raw: &[RawEncounter],
    persons: &HashSet<i64>,
    rules: &EtlRules,
    cfg: &EtlConfig,
    ids: &mut IdAllocator,
) -> Result<(Vec<VisitOccurrence>, HashMap<i64, i64>)> {
    let mut sorted: Vec<&RawEncounter> = raw.iter().collect();
    sorted.sort_by_key(|e| (e.patient_id, e.enc_start_date, e.encounter_id));
    let mut visit_ids = HashMap::with_capacity(sorted.len());
    let mut visits = Vec::with_capacity(sorted.len());
    for e in sorted {
        if !persons.contains(&e.patient_id) {
            return Err(Error::Integrity(format!(
                "encounter {} references unknown patient {}",
                e.encounter_id, e.patient_id
            )));
        }
        let id = ids.next(VisitOccurrence::TABLE);
        if visit_ids.insert(e.encounter_id, id).is_some() {
            return Err(Error::Integrity(format!(
                "duplicate encounter_id {} in raw.encounters",
                e.encounter_id
            )));
        }
        visits.push(VisitOccurrence {
            visit_occurrence_id: id,
            person_id: e.patient_id,
            visit_concept_id: rules.enc_type.apply(&e.enc_type),
            visit_start_date: e.enc_start_date,
            visit_end_date: e.enc_end_date.unwrap_or(e.enc_start_date),
            visit_type_concept_id: cfg.type_concepts.visit,
            visit_source_value: e.enc_type.clone(),
        });
    }
    Ok((visits, visit_ids))
}

/// Maps diagnoses through the code-type's vocabulary chain. Unmapped codes
/// and diagnoses of unknown patients are excluded.
pub fn transform_diagnoses(
    raw: &[RawDiagnosis],
    persons: &HashSet<i64>,
    visit_ids: &HashMap<i64, i64>,
    vocab: &VocabularyStore,
    cfg: &EtlConfig,
    ids: &mut IdAllocator,
) -> TransformOutput<ConditionOccurrence> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&raw[a], &raw[b]);
        (x.patient_id, x.dx_date, &x.dx_code_type, &x.dx_code, x.encounter_id, a).cmp(&(
            y.patient_id,
            y.dx_date,
            &y.dx_code_type,
            &y.dx_code,
            y.encounter_id,
            b,
        ))
    });
    let mut out = TransformOutput {
        rows: Vec::with_capacity(raw.len()),
        excluded: Vec::new(),
    };
    for i in order {
        let dx = &raw[i];
        let key = || format!("row={};patient_id={};code={}", i + 1, dx.patient_id, dx.dx_code);
        if !persons.contains(&dx.patient_id) {
            out.excluded
                .push(Exclusion::new(RawDiagnosis::TABLE, key(), REASON_UNKNOWN_PERSON));
            continue;
        }
        let m = vocab.to_cdm(dx.dx_code.trim(), cfg.dx_chain(&dx.dx_code_type));
        if m.status == MappingStatus::Unmapped {
            out.excluded
                .push(Exclusion::new(RawDiagnosis::TABLE, key(), REASON_UNMAPPED));
            continue;
        }
        out.rows.push(ConditionOccurrence {
            condition_occurrence_id: ids.next(ConditionOccurrence::TABLE),
            person_id: dx.patient_id,
            condition_concept_id: m.standard_concept_id,
            condition_start_date: dx.dx_date,
            condition_type_concept_id: cfg.type_concepts.condition,
            condition_source_value: dx.dx_code.clone(),
            condition_source_concept_id: m.source_concept_id,
            visit_occurrence_id: dx.encounter_id.and_then(|e| visit_ids.get(&e).copied()),
        });
    }
    out
}

/// Maps procedures through the CPT chain. Unmapped codes are excluded.
pub fn transform_procedures(
    raw: &[RawProcedure],
    persons: &HashSet<i64>,
    visit_ids: &HashMap<i64, i64>,
    vocab: &VocabularyStore,
    cfg: &EtlConfig,
    ids: &mut IdAllocator,
) -> Result<TransformOutput<ProcedureOccurrence>> {
    let mut sorted: Vec<&RawProcedure> = raw.iter().collect();
    sorted.sort_by_key(|p| p.procedure_id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].procedure_id == w[1].procedure_id) {
        return Err(Error::Integrity(format!(
            "duplicate procedure_id {} in raw.procedures",
            w[0].procedure_id
        )));
    }
    let mut out = TransformOutput {
        rows: Vec::with_capacity(raw.len()),
        excluded: Vec::new(),
    };
    for px in sorted {
        let key = || format!("procedure_id={};code={}", px.procedure_id, px.px_code);
        if !persons.contains(&px.patient_id) {
            out.excluded
                .push(Exclusion::new(RawProcedure::TABLE, key(), REASON_UNKNOWN_PERSON));
            continue;
        }
        let m = vocab.to_cdm(px.px_code.trim(), cfg.px_chain(&px.px_code_type));
        if m.status == MappingStatus::Unmapped {
            out.excluded
                .push(Exclusion::new(RawProcedure::TABLE, key(), REASON_UNMAPPED));
            continue;
        }
        out.rows.push(ProcedureOccurrence {
            procedure_occurrence_id: ids.next(ProcedureOccurrence::TABLE),
            person_id: px.patient_id,
            procedure_concept_id: m.standard_concept_id,
            procedure_date: px.px_date,
            procedure_type_concept_id: cfg.type_concepts.procedure,
            procedure_source_value: px.px_code.clone(),
            procedure_source_concept_id: m.source_concept_id,
            visit_occurrence_id: px.encounter_id.and_then(|e| visit_ids.get(&e).copied()),
        });
    }
    Ok(out)
}

/// One note row per merged note. Encounter notes link to their visit.
pub fn transform_notes(
    merged: &[MergedNote],
    persons: &HashSet<i64>,
    visit_ids: &HashMap<i64, i64>,
    rules: &EtlRules,
    ids: &mut IdAllocator,
) -> TransformOutput<Note> {
    let mut out = TransformOutput {
        rows: Vec::with_capacity(merged.len()),
        excluded: Vec::new(),
    };
    for m in merged {
        if !persons.contains(&m.patient_id) {
            out.excluded.push(Exclusion::new(
                m.parent_kind.raw_table(),
                format!("{}:{}", m.parent_kind, m.parent_id),
                REASON_UNKNOWN_PERSON,
            ));
            continue;
        }
        let visit = match m.parent_kind {
            NoteParentKind::Encounter => visit_ids.get(&m.parent_id).copied(),
            NoteParentKind::Procedure => None,
        };
        out.rows.push(Note {
            note_id: ids.next(Note::TABLE),
            person_id: m.patient_id,
            note_date: m.note_date,
            note_type_concept_id: rules.note_type.apply(m.parent_kind.as_str()),
            note_title: format!("{} note {}", m.parent_kind, m.parent_id),
            note_text: m.text.clone(),
            visit_occurrence_id: visit,
        });
    }
    out
}

/// One period per person spanning their earliest to latest event date across
/// conditions, visits (start and end), procedures and notes. Persons without
/// events get no period.
pub fn derive_observation_periods(
    conditions: &[ConditionOccurrence],
    visits: &[VisitOccurrence],
    procedures: &[ProcedureOccurrence],
    notes: &[Note],
    period_type_concept_id: i64,
    ids: &mut IdAllocator,
) -> Vec<ObservationPeriod> {
    let mut span: BTreeMap<i64, (NaiveDate, NaiveDate)> = BTreeMap::new();
    let mut see = |person: i64, date: NaiveDate| {
        span.entry(person)
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(date);
                *hi = (*hi).max(date);
            })
            .or_insert((date, date));
    };
    for c in conditions {
        see(c.person_id, c.condition_start_date);
    }
    for v in visits {
        see(v.person_id, v.visit_start_date);
        see(v.person_id, v.visit_end_date);
    }
    for p in procedures {
        see(p.person_id, p.procedure_date);
    }
    for n in notes {
        see(n.person_id, n.note_date);
    }
    span.into_iter()
        .map(|(person_id, (start, end))| ObservationPeriod {
            observation_period_id: ids.next(ObservationPeriod::TABLE),
            person_id,
            observation_period_start_date: start,
            observation_period_end_date: end,
            period_type_concept_id,
        })
        .collect()
}

const CDM_OUTPUT_TABLES: [&str; 9] = [
    "person",
    "death",
    "observation_period",
    "condition_occurrence",
    "visit_occurrence",
    "procedure_occurrence",
    "note",
    "note_nlp",
    "cohort",
];

/// Runs every transform in dependency order and replaces the cdm event
/// tables and `results.etl_exclusion`. Vocabulary tables are left alone.
pub fn run_etl(mart: &mut Datamart, vocab: &VocabularyStore, rules: &EtlRules, cfg: &EtlConfig) -> Result<EtlReport> {
    let started = Instant::now();
    let demographics: Vec<RawDemographics> = mart.records()?;
    let encounters: Vec<RawEncounter> = mart.records()?;
    let diagnoses: Vec<RawDiagnosis> = mart.records()?;
    let procedures: Vec<RawProcedure> = mart.records()?;
    let mut note_entries: Vec<RawNoteEntry> = mart.records_from(Namespace::Raw, ENCOUNTER_NOTES)?;
    note_entries.extend(mart.records_from::<RawNoteEntry>(Namespace::Raw, PROCEDURE_NOTES)?);

    let mut ids = IdAllocator::new();

    let (persons, deaths) = transform_demographics(&demographics, rules)?;
    if persons.len() != demographics.len() {
        return Err(Error::Integrity(format!(
            "person transform produced {} rows from {} demographics rows",
            persons.len(),
            demographics.len()
        )));
    }
    let person_ids: HashSet<i64> = persons.iter().map(|p| p.person_id).collect();

    let (visits, visit_ids) = transform_encounters(&encounters, &person_ids, rules, cfg, &mut ids)?;
    let conditions = transform_diagnoses(&diagnoses, &person_ids, &visit_ids, vocab, cfg, &mut ids);
    let procs = transform_procedures(&procedures, &person_ids, &visit_ids, vocab, cfg, &mut ids)?;
    let merged = merge_note_entries(&note_entries);
    let mut notes = transform_notes(&merged.notes, &person_ids, &visit_ids, rules, &mut ids);
    let mut note_excluded = merged.skipped.clone();
    note_excluded.append(&mut notes.excluded);
    let periods = derive_observation_periods(
        &conditions.rows,
        &visits,
        &procs.rows,
        &notes.rows,
        cfg.type_concepts.observation_period,
        &mut ids,
    );

    let transforms = vec![
        TransformReport {
            raw_table: RawDemographics::TABLE.into(),
            cdm_table: Person::TABLE.into(),
            raw_count: demographics.len(),
            cdm_count: persons.len(),
            excluded: Vec::new(),
        },
        TransformReport {
            raw_table: RawDiagnosis::TABLE.into(),
            cdm_table: ConditionOccurrence::TABLE.into(),
            raw_count: diagnoses.len(),
            cdm_count: conditions.rows.len(),
            excluded: conditions.excluded.clone(),
        },
        TransformReport {
            raw_table: RawEncounter::TABLE.into(),
            cdm_table: VisitOccurrence::TABLE.into(),
            raw_count: encounters.len(),
            cdm_count: visits.len(),
            excluded: Vec::new(),
        },
        TransformReport {
            raw_table: RawProcedure::TABLE.into(),
            cdm_table: ProcedureOccurrence::TABLE.into(),
            raw_count: procedures.len(),
            cdm_count: procs.rows.len(),
            excluded: procs.excluded.clone(),
        },
        TransformReport {
            raw_table: MERGED_NOTES.into(),
            cdm_table: Note::TABLE.into(),
            raw_count: merged.parent_count(),
            cdm_count: notes.rows.len(),
            excluded: note_excluded.clone(),
        },
    ];
    debug_assert!(transforms.iter().all(TransformReport::conserves));

    let mut derived = BTreeMap::new();
    derived.insert(Death::TABLE.to_owned(), deaths.len());
    derived.insert(ObservationPeriod::TABLE.to_owned(), periods.len());

    for t in CDM_OUTPUT_TABLES {
        mart.clear(Namespace::Cdm, t)?;
    }
    mart.clear(Namespace::Results, Exclusion::TABLE)?;
    mart.insert(persons)?;
    mart.insert(deaths)?;
    mart.insert(visits)?;
    mart.insert(conditions.rows)?;
    mart.insert(procs.rows)?;
    mart.insert(notes.rows)?;
    mart.insert(periods)?;
    mart.insert(
        conditions
            .excluded
            .into_iter()
            .chain(procs.excluded)
            .chain(note_excluded),
    )?;

    Ok(EtlReport {
        transforms,
        derived,
        duration_ms: started.elapsed().as_millis(),
        id_watermarks: ids.watermarks(),
    })
}
