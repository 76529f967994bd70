//! Row types for the raw and cdm namespaces.
//!
//! Raw tables mirror the extract delivered by the source EHR. CDM tables are
//! subsets of OMOP CDM v5.3 restricted to the columns the pipeline populates.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::schema::record;
use super::value::{Cell, ColumnKind, Value};

pub const ENCOUNTER_NOTES: &str = "encounter_notes";
pub const PROCEDURE_NOTES: &str = "procedure_notes";

/// Which raw record a note fragment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoteParentKind {
    Encounter,
    Procedure,
}

impl NoteParentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoteParentKind::Encounter => "encounter",
            NoteParentKind::Procedure => "procedure",
        }
    }

    /// Raw table holding fragments of this kind.
    pub fn raw_table(self) -> &'static str {
        match self {
            NoteParentKind::Encounter => ENCOUNTER_NOTES,
            NoteParentKind::Procedure => PROCEDURE_NOTES,
        }
    }
}

impl fmt::Display for NoteParentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoteParentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encounter" => Ok(NoteParentKind::Encounter),
            "procedure" => Ok(NoteParentKind::Procedure),
            other => Err(format!("unknown note parent kind {other:?}")),
        }
    }
}

impl Cell for NoteParentKind {
    const KIND: ColumnKind = ColumnKind::String;
    fn to_value(&self) -> Value {
        Value::Text(self.as_str().to_owned())
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Text(s) => s.parse().ok(),
            _ => None,
        }
    }
}

record! {
    pub struct RawDemographics in Raw."demographics" {
        pub patient_id: i64,
        pub birth_date: NaiveDate,
        pub death_date: Option<NaiveDate>,
        pub gender: String,
        pub race: String,
        pub ethnicity: String,
    }
}

record! {
    pub struct RawDiagnosis in Raw."diagnoses" {
        pub patient_id: i64,
        pub encounter_id: Option<i64>,
        pub dx_code: String,
        pub dx_code_type: String,
        pub dx_name: String,
        pub dx_date: NaiveDate,
    }
}

record! {
    pub struct RawEncounter in Raw."encounters" {
        pub patient_id: i64,
        pub encounter_id: i64,
        pub enc_type: String,
        pub enc_start_date: NaiveDate,
        pub enc_end_date: Option<NaiveDate>,
    }
}

record! {
    /// One fragment of free text attached to an encounter or a procedure.
    /// Stored in `raw.encounter_notes` or `raw.procedure_notes`.
    pub struct RawNoteEntry in Raw."encounter_notes" {
        pub patient_id: i64,
        pub parent_id: i64,
        pub parent_kind: NoteParentKind,
        pub entry_seq: i64,
        pub note_date: NaiveDate,
        pub text_fragment: String,
    }
}

record! {
    pub struct RawProcedure in Raw."procedures" {
        pub patient_id: i64,
        pub encounter_id: Option<i64>,
        pub procedure_id: i64,
        pub px_code: String,
        pub px_code_type: String,
        pub px_date: NaiveDate,
    }
}

record! {
    pub struct Person in Cdm."person" {
        pub person_id: i64,
        pub gender_concept_id: i64,
        pub year_of_birth: i64,
        pub month_of_birth: i64,
        pub day_of_birth: i64,
        pub race_concept_id: i64,
        pub ethnicity_concept_id: i64,
        pub gender_source_value: String,
        pub race_source_value: String,
        pub ethnicity_source_value: String,
    }
}

record! {
    pub struct Death in Cdm."death" {
        pub person_id: i64,
        pub death_date: NaiveDate,
    }
}

record! {
    pub struct ObservationPeriod in Cdm."observation_period" {
        pub observation_period_id: i64,
        pub person_id: i64,
        pub observation_period_start_date: NaiveDate,
        pub observation_period_end_date: NaiveDate,
        pub period_type_concept_id: i64,
    }
}

record! {
    pub struct ConditionOccurrence in Cdm."condition_occurrence" {
        pub condition_occurrence_id: i64,
        pub person_id: i64,
        pub condition_concept_id: i64,
        pub condition_start_date: NaiveDate,
        pub condition_type_concept_id: i64,
        pub condition_source_value: String,
        pub condition_source_concept_id: i64,
        pub visit_occurrence_id: Option<i64>,
    }
}

record! {
    pub struct VisitOccurrence in Cdm."visit_occurrence" {
        pub visit_occurrence_id: i64,
        pub person_id: i64,
        pub visit_concept_id: i64,
        pub visit_start_date: NaiveDate,
        pub visit_end_date: NaiveDate,
        pub visit_type_concept_id: i64,
        pub visit_source_value: String,
    }
}

record! {
    pub struct ProcedureOccurrence in Cdm."procedure_occurrence" {
        pub procedure_occurrence_id: i64,
        pub person_id: i64,
        pub procedure_concept_id: i64,
        pub procedure_date: NaiveDate,
        pub procedure_type_concept_id: i64,
        pub procedure_source_value: String,
        pub procedure_source_concept_id: i64,
        pub visit_occurrence_id: Option<i64>,
    }
}

record! {
    pub struct Note in Cdm."note" {
        pub note_id: i64,
        pub person_id: i64,
        pub note_date: NaiveDate,
        pub note_type_concept_id: i64,
        pub note_title: String,
        pub note_text: String,
        pub visit_occurrence_id: Option<i64>,
    }
}

record! {
    /// One extracted mention. `offset` counts Unicode scalar values into `note_text`.
    pub struct NoteNlp in Cdm."note_nlp" {
        pub note_nlp_id: i64,
        pub note_id: i64,
        pub section_concept_id: i64,
        pub snippet: String,
        pub offset: i64,
        pub lexical_variant: String,
        pub note_nlp_concept_id: i64,
        pub note_nlp_source_concept_id: i64,
        pub nlp_system: String,
        pub nlp_date: NaiveDate,
        pub term_exists: bool,
        pub term_temporal: Option<String>,
        pub term_modifiers: Option<String>,
    }
}

record! {
    pub struct CohortRow in Cdm."cohort" {
        pub cohort_definition_id: i64,
        pub subject_id: i64,
        pub cohort_start_date: NaiveDate,
        pub cohort_end_date: NaiveDate,
    }
}
