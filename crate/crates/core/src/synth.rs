//! Deterministic synthetic raw EHR extracts with a ground-truth manifest.
//!
//! Generated data exercises every downstream stage with known answers: a
//! planted cohort, planted concept mentions at recorded offsets, lexical
//! variants of a concept, and an exact number of codes absent from the
//! vocabulary. Output is a pure function of the config and reference data.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etl::EtlConfig;
use crate::fixtures;
use crate::nlp::text::{normalize, tokenize, NEGATION_TRIGGERS};
use crate::nlp::{compile_dictionary, DictionaryEntry, ManualLinks};
use crate::store::{
    Datamart, Namespace, NoteParentKind, RawDemographics, RawDiagnosis, RawEncounter, RawNoteEntry, RawProcedure,
    Record, ENCOUNTER_NOTES, PROCEDURE_NOTES,
};
use crate::vocab::{MappingStatus, VocabularyStore};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub min: usize,
    pub max: usize,
}

impl Span {
    pub const fn new(min: usize, max: usize) -> Self {
        Span { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
}

/// A raw code as it appears in the extract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedCode {
    pub kind: CodeKind,
    pub code: String,
    pub code_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedCohort {
    /// Patients given the entry code and every inclusion code.
    pub n_qualifying: usize,
    /// Patients given a strict subset of those codes.
    pub n_decoys: usize,
    pub entry_code: PlantedCode,
    pub inclusion_codes: Vec<PlantedCode>,
}

impl Default for PlantedCohort {
    fn default() -> Self {
        let code = |kind, code: &str, code_type: &str| PlantedCode {
            kind,
            code: code.into(),
            code_type: code_type.into(),
        };
        PlantedCohort {
            n_qualifying: 5,
            n_decoys: 12,
            entry_code: code(CodeKind::Diagnosis, "I63.9", "ICD10CM"),
            inclusion_codes: vec![
                code(CodeKind::Diagnosis, "E11.9", "ICD10CM"),
                code(CodeKind::Procedure, "97110", "CPT4"),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub date_range: DateRange,
    pub encounters_per_patient: Span,
    pub diagnoses_per_encounter: Span,
    pub procedures_per_encounter: Span,
    /// Fragments making up each encounter note.
    pub fragments_per_note: Span,
    /// Filler sentences per fragment.
    pub sentences_per_fragment: Span,
    /// Share of procedures that carry their own note.
    pub procedure_note_fraction: f64,
    /// Share of encounter notes that mention one random non-planted concept.
    pub background_mention_fraction: f64,
    pub unmappable_procedure_fraction: f64,
    pub unmappable_diagnosis_fraction: f64,
    pub male_fraction: f64,
    pub unknown_gender_fraction: f64,
    pub death_fraction: f64,
    pub planted_cohort: PlantedCohort,
    /// Dictionary term naming a concept → explicit surface variants to plant.
    pub planted_variants: BTreeMap<String, Vec<String>>,
    /// Dictionary term naming a concept → number of distinct variants to
    /// plant, built from that concept's dictionary terms by varying letter
    /// case and token separators. Explicit variants count toward the target.
    pub variant_expansion: BTreeMap<String, usize>,
    /// Dictionary term naming a concept → patients whose notes affirm it.
    /// The planted variants are spread over these patients.
    pub mention_patients: BTreeMap<String, usize>,
    /// Dictionary term naming a concept → patients whose only mentions of it are negated.
    pub negated_patients: BTreeMap<String, usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 42,
            n_patients: 1000,
            date_range: DateRange {
                start: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
                end: NaiveDate::from_ymd_opt(2022, 12, 31).unwrap(),
            },
            encounters_per_patient: Span::new(2, 6),
            diagnoses_per_encounter: Span::new(1, 3),
            procedures_per_encounter: Span::new(0, 3),
            fragments_per_note: Span::new(1, 3),
            sentences_per_fragment: Span::new(2, 3),
            procedure_note_fraction: 0.1,
            background_mention_fraction: 0.5,
            unmappable_procedure_fraction: 0.09627,
            unmappable_diagnosis_fraction: 0.00129,
            male_fraction: 0.49,
            unknown_gender_fraction: 0.0,
            death_fraction: 0.03,
            planted_cohort: PlantedCohort::default(),
            planted_variants: BTreeMap::new(),
            variant_expansion: BTreeMap::from([("fall".to_string(), 358)]),
            mention_patients: BTreeMap::from([("fall".to_string(), 57)]),
            negated_patients: BTreeMap::from([("fall".to_string(), 3)]),
        }
    }
}

impl GenConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("generator config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        for (name, f) in [
            ("unmappable_procedure_fraction", self.unmappable_procedure_fraction),
            ("unmappable_diagnosis_fraction", self.unmappable_diagnosis_fraction),
            ("procedure_note_fraction", self.procedure_note_fraction),
            ("background_mention_fraction", self.background_mention_fraction),
            ("male_fraction", self.male_fraction),
            ("unknown_gender_fraction", self.unknown_gender_fraction),
            ("death_fraction", self.death_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return err(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        for (name, s) in [
            ("encounters_per_patient", self.encounters_per_patient),
            ("diagnoses_per_encounter", self.diagnoses_per_encounter),
            ("procedures_per_encounter", self.procedures_per_encounter),
            ("fragments_per_note", self.fragments_per_note),
            ("sentences_per_fragment", self.sentences_per_fragment),
        ] {
            if s.min > s.max {
                return err(format!("{name}: min {} exceeds max {}", s.min, s.max));
            }
        }
        if self.encounters_per_patient.min == 0 {
            return err("encounters_per_patient.min must be at least 1".into());
        }
        if self.fragments_per_note.min == 0 {
            return err("fragments_per_note.min must be at least 1".into());
        }
        if self.date_range.start > self.date_range.end {
            return err("date_range.start is after date_range.end".into());
        }
        let pc = &self.planted_cohort;
        if pc.n_qualifying > self.n_patients {
            return err(format!(
                "planted_cohort.n_qualifying {} exceeds n_patients {}",
                pc.n_qualifying, self.n_patients
            ));
        }
        if pc.n_qualifying + pc.n_decoys > self.n_patients {
            return err("planted cohort and decoys exceed n_patients".into());
        }
        if pc.n_decoys > 0 && pc.inclusion_codes.is_empty() {
            return err("decoys need at least one inclusion code".into());
        }
        for (term, variants) in &self.planted_variants {
            for v in variants {
                if v.contains('\n') || v.contains('\r') {
                    return err(format!("variant {v:?} of {term:?} contains a line break"));
                }
                let trimmed_ok = v.chars().next().is_some_and(char::is_alphanumeric)
                    && v.chars().last().is_some_and(char::is_alphanumeric);
                if !trimmed_ok {
                    return err(format!("variant {v:?} must start and end with a letter or digit"));
                }
            }
        }
        Ok(())
    }
}

/// Raw tables as produced by the generator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawBundle {
    pub demographics: Vec<RawDemographics>,
    pub encounters: Vec<RawEncounter>,
    pub diagnoses: Vec<RawDiagnosis>,
    pub procedures: Vec<RawProcedure>,
    pub encounter_notes: Vec<RawNoteEntry>,
    pub procedure_notes: Vec<RawNoteEntry>,
}

impl RawBundle {
    pub fn counts(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            (RawDemographics::TABLE.to_string(), self.demographics.len() as u64),
            (RawEncounter::TABLE.to_string(), self.encounters.len() as u64),
            (RawDiagnosis::TABLE.to_string(), self.diagnoses.len() as u64),
            (RawProcedure::TABLE.to_string(), self.procedures.len() as u64),
            (ENCOUNTER_NOTES.to_string(), self.encounter_notes.len() as u64),
            (PROCEDURE_NOTES.to_string(), self.procedure_notes.len() as u64),
        ])
    }
}

/// A dictionary term placed in a note on purpose.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlantedSpan {
    pub parent_kind: NoteParentKind,
    pub parent_id: i64,
    pub patient_id: i64,
    /// Char offset into the merged note text.
    pub char_offset: usize,
    /// The verbatim text placed.
    pub term: String,
    pub concept_id: i64,
    pub negated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub seed: u64,
    pub expected_raw_counts: BTreeMap<String, u64>,
    pub expected_unmapped: BTreeMap<String, u64>,
    pub planted_cohort_subject_ids: BTreeSet<i64>,
    pub decoy_subject_ids: BTreeSet<i64>,
    /// Concept id → distinct variants planted.
    pub planted_variant_counts: BTreeMap<i64, u64>,
    pub planted_variants: BTreeMap<i64, Vec<String>>,
    /// Every dictionary term in the generated text, ordered by note and offset.
    pub planted_mention_spans: Vec<PlantedSpan>,
    /// Concept id → patients with at least one affirmed planted mention.
    pub affirmed_concept_patients: BTreeMap<i64, BTreeSet<i64>>,
    /// Concept id → patients with only negated mentions.
    pub negated_only_patients: BTreeMap<i64, BTreeSet<i64>>,
    pub gender_counts: BTreeMap<String, u64>,
}

impl GroundTruthManifest {
    /// All patients with any mention of the concept, negated or not.
    pub fn concept_patients(&self, concept_id: i64) -> BTreeSet<i64> {
        let mut out: BTreeSet<i64> = self
            .planted_mention_spans
            .iter()
            .filter(|s| s.concept_id == concept_id)
            .map(|s| s.patient_id)
            .collect();
        out.extend(self.negated_only_patients.get(&concept_id).into_iter().flatten());
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

const FILLER: &[&str] = &[
    "patient",
    "seen",
    "clinic",
    "today",
    "reports",
    "feeling",
    "well",
    "follow",
    "scheduled",
    "plan",
    "continue",
    "current",
    "medications",
    "reviewed",
    "vitals",
    "stable",
    "appetite",
    "good",
    "sleep",
    "adequate",
    "family",
    "present",
    "discussed",
    "goals",
    "home",
    "program",
    "tolerated",
    "session",
    "mild",
    "fatigue",
    "noted",
    "overall",
    "progress",
    "steady",
    "return",
    "weeks",
    "questions",
    "answered",
    "education",
    "provided",
    "consent",
    "obtained",
    "chart",
    "updated",
    "instructed",
    "caregiver",
    "agrees",
    "will",
    "monitor",
    "weekly",
    "exam",
    "unremarkable",
    "alert",
    "oriented",
    "pleasant",
    "cooperative",
    "appears",
    "comfortable",
    "independently",
    "assistance",
    "requires",
    "next",
    "appointment",
    "call",
    "needed",
    "as",
    "the",
    "was",
    "for",
    "in",
    "on",
    "at",
    "this",
    "recent",
    "prior",
    "since",
    "last",
    "month",
    "morning",
    "evening",
    "labs",
    "normal",
    "improved",
    "slowly",
    "signed",
    "by",
    "staff",
    "nurse",
    "physician",
    "team",
    "safety",
    "stairs",
    "vision",
    "hearing",
    "intact",
    "remains",
    "motivated",
    "engaged",
    "with",
    "is",
    "pending",
    "referral",
];

/// Filler words that share no token with `dict` and are not negation triggers.
fn safe_filler(dict: &crate::nlp::CompiledDictionary) -> Result<Vec<&'static str>> {
    let words: Vec<&'static str> = FILLER
        .iter()
        .copied()
        .filter(|w| !dict.has_token(w) && !NEGATION_TRIGGERS.contains(w))
        .collect();
    if words.len() < 20 {
        return Err(Error::Config(format!(
            "only {} filler words avoid the dictionary; need at least 20",
            words.len()
        )));
    }
    Ok(words)
}

/// Builds up to `target` distinct surface forms for a concept. The given
/// terms come first, unchanged; further forms vary the letter case of each
/// token core and the separators between tokens, so every form normalizes
/// to one of the terms.
pub fn expand_variants(terms: &[String], target: usize) -> Vec<String> {
    const SEPARATORS: [&str; 6] = [" ", "  ", " & ", "/ ", ", ", " - "];
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in terms {
        if out.len() == target {
            return out;
        }
        if seen.insert(t.clone()) {
            out.push(t.clone());
        }
    }
    let cores: Vec<Vec<String>> = terms
        .iter()
        .map(|t| {
            tokenize(t)
                .iter()
                .map(|tok| t[tok.byte_start..tok.byte_end].to_lowercase())
                .collect()
        })
        .collect();
    let cased = |core: &[String], style: usize| -> Vec<String> {
        core.iter()
            .enumerate()
            .map(|(i, w)| match style {
                0 => w.clone(),
                1 => w.to_uppercase(),
                2 => capitalize(w),
                _ if i == 0 => capitalize(w),
                _ => w.clone(),
            })
            .collect()
    };
    let forms_of = |core: &[String]| 4 * SEPARATORS.len().pow(core.len().saturating_sub(1) as u32);
    let max_forms = cores.iter().map(|c| forms_of(c)).max().unwrap_or(0);
    for level in 0..max_forms {
        for core in &cores {
            if out.len() == target {
                return out;
            }
            if level >= forms_of(core) {
                continue;
            }
            let style = level % 4;
            let mut code = level / 4;
            let words = cased(core, style);
            let mut s = words[0].clone();
            for w in &words[1..] {
                s.push_str(SEPARATORS[code % SEPARATORS.len()]);
                code /= SEPARATORS.len();
                s.push_str(w);
            }
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Mention {
    char_offset: usize,
    term: String,
    concept_id: i64,
    negated: bool,
}

#[derive(Default)]
struct Sentence {
    text: String,
    mentions: Vec<Mention>,
}

#[derive(Default)]
struct DraftNote {
    patient_id: i64,
    parent_kind: Option<NoteParentKind>,
    parent_id: i64,
    date: Option<NaiveDate>,
    fragments: Vec<Vec<Sentence>>,
}

struct TextGen {
    filler: Vec<&'static str>,
}

impl TextGen {
    fn words(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
        (0..n).map(|_| *self.filler.choose(rng).unwrap()).collect()
    }

    fn filler_sentence(&self, rng: &mut ChaCha8Rng) -> Sentence {
        let n = rng.gen_range(6..=12);
        let mut w: Vec<String> = self.words(rng, n).into_iter().map(str::to_owned).collect();
        w[0] = capitalize(&w[0]);
        Sentence {
            text: format!("{}.", w.join(" ")),
            mentions: Vec::new(),
        }
    }

    /// A sentence with `term` affirmed after a few filler words, or negated
    /// directly after a trigger word and followed by enough filler that the
    /// trigger cannot reach the next sentence.
    fn mention_sentence(&self, rng: &mut ChaCha8Rng, term: &str, concept_id: i64, negated: bool) -> Sentence {
        let mut prefix: Vec<String> = if negated {
            let mut p: Vec<String> = self.words(rng, 2).into_iter().map(str::to_owned).collect();
            p.push("denies".into());
            p
        } else {
            let n = rng.gen_range(2..=4);
            self.words(rng, n).into_iter().map(str::to_owned).collect()
        };
        prefix[0] = capitalize(&prefix[0]);
        let head = format!("{} ", prefix.join(" "));
        let tail_len = if negated { 10 } else { rng.gen_range(2..=6) };
        let tail = self.words(rng, tail_len).join(" ");
        Sentence {
            text: format!("{head}{term} {tail}."),
            mentions: vec![Mention {
                char_offset: head.chars().count(),
                term: term.to_owned(),
                concept_id,
                negated,
            }],
        }
    }
}

fn random_date(rng: &mut ChaCha8Rng, range: &DateRange) -> NaiveDate {
    let days = (range.end - range.start).num_days();
    range.start + Duration::days(rng.gen_range(0..=days))
}

/// Codes eligible for random draws, as (code, code_type, name).
fn code_pool(
    vocab: &VocabularyStore,
    vocabularies: &[&str],
    chain: impl Fn(&str) -> Vec<String>,
    excluded_concepts: &BTreeSet<i64>,
    excluded_codes: &BTreeSet<String>,
) -> Vec<(String, String, String)> {
    let mut pool: Vec<(String, String, String)> = vocab
        .concepts()
        .iter()
        .filter(|c| vocabularies.contains(&c.vocabulary_id.as_str()))
        .filter(|c| !excluded_codes.contains(&c.concept_code))
        .filter(|c| {
            let m = vocab.to_cdm(&c.concept_code, &chain(&c.vocabulary_id));
            m.status != MappingStatus::Unmapped
                && !excluded_concepts.contains(&m.standard_concept_id)
                && !excluded_concepts.contains(&m.source_concept_id)
        })
        .map(|c| (c.concept_code.clone(), c.vocabulary_id.clone(), c.concept_name.clone()))
        .collect();
    pool.sort();
    pool
}

/// Codes of the right shape that no chain resolves: CPT category III style
/// for procedures and unused ICD-10 style codes for diagnoses.
fn unknown_code(rng: &mut ChaCha8Rng, kind: CodeKind, vocab: &VocabularyStore, chain: &[String]) -> String {
    loop {
        let code = match kind {
            CodeKind::Procedure => format!("0{:03}T", rng.gen_range(0..1000)),
            CodeKind::Diagnosis => format!("U{:02}.{}", rng.gen_range(10..99), rng.gen_range(0..10)),
        };
        if vocab.to_cdm(&code, chain).status == MappingStatus::Unmapped {
            return code;
        }
    }
}

/// Generates from the fixture vocabulary and dictionary.
pub fn generate(cfg: &GenConfig) -> Result<(RawBundle, GroundTruthManifest)> {
    let vocab = fixtures::vocabulary();
    let mut dict = fixtures::dictionary_entries();
    dict.extend(fixtures::rehab_entries());
    generate_with(cfg, &vocab, &dict)
}

/// Generates against the given vocabulary and dictionary. Filler text avoids
/// every token of every dictionary term, so the only dictionary matches in
/// the output are the planted ones.
pub fn generate_with(
    cfg: &GenConfig,
    vocab: &VocabularyStore,
    dictionary: &[DictionaryEntry],
) -> Result<(RawBundle, GroundTruthManifest)> {
    cfg.validate()?;
    let compiled = compile_dictionary(dictionary.to_vec(), &ManualLinks::default(), None)?;
    let text = TextGen {
        filler: safe_filler(&compiled)?,
    };
    let etl = EtlConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // concepts named by dictionary terms
    let concept_of = |term: &str| -> Result<i64> {
        let n = normalize(term);
        dictionary
            .iter()
            .find(|e| normalize(&e.surface_term) == n)
            .map(|e| e.concept_id)
            .ok_or_else(|| Error::Config(format!("{term:?} is not a dictionary term")))
    };
    let terms_of = |concept: i64| -> Vec<String> {
        dictionary
            .iter()
            .filter(|e| e.concept_id == concept && e.category.as_deref().unwrap_or("").is_empty())
            .map(|e| e.surface_term.clone())
            .collect()
    };

    let mut variants: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    let mut keys: BTreeSet<&String> = cfg.planted_variants.keys().collect();
    keys.extend(cfg.variant_expansion.keys());
    for key in keys {
        let concept = concept_of(key)?;
        let accepted: BTreeSet<String> = terms_of(concept).iter().map(|t| normalize(t)).collect();
        let mut list: Vec<String> = cfg.planted_variants.get(key).cloned().unwrap_or_default();
        for v in &list {
            if !accepted.contains(&normalize(v)) {
                return Err(Error::Config(format!(
                    "variant {v:?} does not normalize to a dictionary term of {key:?}"
                )));
            }
        }
        if let Some(&target) = cfg.variant_expansion.get(key) {
            let mut seeds = list.clone();
            seeds.extend(terms_of(concept));
            list = expand_variants(&seeds, target.max(list.len()));
            if list.len() < target {
                return Err(Error::Config(format!(
                    "only {} distinct variants of {key:?} can be built, {target} requested",
                    list.len()
                )));
            }
        }
        let mut uniq = HashSet::new();
        list.retain(|v| uniq.insert(v.clone()));
        if !list.is_empty() {
            variants.entry(concept).or_default().extend(list);
        }
    }

    let cohort_codes: Vec<&PlantedCode> = std::iter::once(&cfg.planted_cohort.entry_code)
        .chain(&cfg.planted_cohort.inclusion_codes)
        .collect();
    let chain_for = |pc: &PlantedCode| -> Vec<String> {
        match pc.kind {
            CodeKind::Diagnosis => etl.dx_chain(&pc.code_type).to_vec(),
            CodeKind::Procedure => etl.px_chain(&pc.code_type).to_vec(),
        }
    };
    let mut cohort_concepts = BTreeSet::new();
    for pc in &cohort_codes {
        let m = vocab.to_cdm(&pc.code, &chain_for(pc));
        if m.status != MappingStatus::Mapped {
            return Err(Error::Config(format!(
                "planted cohort code {} ({}) has no standard concept",
                pc.code, pc.code_type
            )));
        }
        cohort_concepts.insert(m.standard_concept_id);
        cohort_concepts.insert(m.source_concept_id);
    }
    let cohort_code_set: BTreeSet<String> = cohort_codes.iter().map(|c| c.code.clone()).collect();
    let dx_pool = code_pool(
        vocab,
        &["ICD10CM", "ICD10", "ICD9CM"],
        |v| etl.dx_chain(v).to_vec(),
        &cohort_concepts,
        &cohort_code_set,
    );
    let px_pool = code_pool(
        vocab,
        &["CPT4"],
        |v| etl.px_chain(v).to_vec(),
        &cohort_concepts,
        &cohort_code_set,
    );
    if dx_pool.is_empty() || px_pool.is_empty() {
        return Err(Error::Config("vocabulary has no codes left for random draws".into()));
    }
    let mentioned_concepts: BTreeSet<i64> = variants
        .keys()
        .copied()
        .chain(
            cfg.mention_patients
                .keys()
                .chain(cfg.negated_patients.keys())
                .map(|k| concept_of(k))
                .collect::<Result<Vec<_>>>()?,
        )
        .collect();
    let background_terms: Vec<&DictionaryEntry> = dictionary
        .iter()
        .filter(|e| e.category.as_deref().unwrap_or("").is_empty())
        .filter(|e| e.concept_id != 0 && !mentioned_concepts.contains(&e.concept_id))
        .collect();

    // demographics
    let mut bundle = RawBundle::default();
    let first_id: i64 = 100_001;
    let patients: Vec<i64> = (0..cfg.n_patients as i64).map(|i| first_id + i).collect();
    const RACES: [(&str, u32); 6] = [
        ("WHITE", 70),
        ("BLACK OR AFRICAN AMERICAN", 15),
        ("ASIAN", 6),
        ("AMERICAN INDIAN OR ALASKA NATIVE", 2),
        ("NATIVE HAWAIIAN OR OTHER PACIFIC ISLANDER", 1),
        ("UNKNOWN", 6),
    ];
    const ETHNICITIES: [(&str, u32); 3] = [
        ("NOT HISPANIC OR LATINO", 90),
        ("HISPANIC OR LATINO", 7),
        ("UNKNOWN", 3),
    ];
    let weighted = |rng: &mut ChaCha8Rng, items: &[(&'static str, u32)]| -> &'static str {
        items.choose_weighted(rng, |x| x.1).unwrap().0
    };
    let mut gender_counts: BTreeMap<String, u64> = BTreeMap::new();
    for &pid in &patients {
        let g = if rng.gen_bool(cfg.unknown_gender_fraction) {
            "UNKNOWN"
        } else if rng.gen_bool(cfg.male_fraction) {
            "MALE"
        } else {
            "FEMALE"
        };
        *gender_counts.entry(g.into()).or_default() += 1;
        let birth =
            NaiveDate::from_ymd_opt(rng.gen_range(1930..=2000), rng.gen_range(1..=12), rng.gen_range(1..=28)).unwrap();
        let dies = rng.gen_bool(cfg.death_fraction);
        bundle.demographics.push(RawDemographics {
            patient_id: pid,
            birth_date: birth,
            death_date: dies.then_some(cfg.date_range.end),
            gender: g.into(),
            race: weighted(&mut rng, &RACES).into(),
            ethnicity: weighted(&mut rng, &ETHNICITIES).into(),
        });
    }

    // planted roles
    let mut shuffled = patients.clone();
    shuffled.shuffle(&mut rng);
    let pc = &cfg.planted_cohort;
    let qualifying: BTreeSet<i64> = shuffled[..pc.n_qualifying].iter().copied().collect();
    let decoys: Vec<i64> = shuffled[pc.n_qualifying..pc.n_qualifying + pc.n_decoys].to_vec();
    // decoy k receives a proper subset of the cohort codes
    let n_codes = cohort_codes.len();
    let subsets: Vec<Vec<usize>> = (1..(1usize << n_codes) - 1)
        .map(|mask| (0..n_codes).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    let mut planted_codes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &p in &qualifying {
        planted_codes.insert(p, (0..n_codes).collect());
    }
    for (k, &p) in decoys.iter().enumerate() {
        planted_codes.insert(p, subsets[k % subsets.len()].clone());
    }

    const ENC_TYPES: [(&str, u32); 11] = [
        ("OFFICE VISIT", 60),
        ("HOSPITAL ENCOUNTER", 8),
        ("EMERGENCY", 4),
        ("APPOINTMENT", 8),
        ("ABSTRACT", 2),
        ("ALLERGY MIXING", 1),
        ("ALLERGY SHOT", 2),
        ("AMBULATORY VISIT SUMMARY", 6),
        ("ANTICOAGULATION", 3),
        ("ANTICOAGULATION SCHEDULED", 2),
        ("TELEPHONE", 4),
    ];

    // encounters, diagnoses, procedures, draft notes
    let mut protected_dx = Vec::new();
    let mut protected_px = Vec::new();
    let mut drafts: Vec<DraftNote> = Vec::new();
    let mut drafts_by_patient: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut encounter_id: i64 = 5_000_000;
    let mut procedure_id: i64 = 7_000_000;
    for &pid in &patients {
        let n_enc = cfg.encounters_per_patient.sample(&mut rng);
        let mut dates: Vec<NaiveDate> = (0..n_enc).map(|_| random_date(&mut rng, &cfg.date_range)).collect();
        dates.sort();
        let mut encs = Vec::new();
        for date in dates {
            encounter_id += 1;
            let end = match rng.gen_range(0..4) {
                0 => None,
                1 => Some(date + Duration::days(rng.gen_range(1..=3))),
                _ => Some(date),
            };
            bundle.encounters.push(RawEncounter {
                patient_id: pid,
                encounter_id,
                enc_type: weighted(&mut rng, &ENC_TYPES).into(),
                enc_start_date: date,
                enc_end_date: end,
            });
            encs.push((encounter_id, date));
            for _ in 0..cfg.diagnoses_per_encounter.sample(&mut rng) {
                let (code, ty, name) = dx_pool.choose(&mut rng).unwrap().clone();
                bundle.diagnoses.push(RawDiagnosis {
                    patient_id: pid,
                    encounter_id: Some(encounter_id),
                    dx_code: code,
                    dx_code_type: ty,
                    dx_name: name,
                    dx_date: date,
                });
                protected_dx.push(false);
            }
            for _ in 0..cfg.procedures_per_encounter.sample(&mut rng) {
                let (code, ty, _) = px_pool.choose(&mut rng).unwrap().clone();
                procedure_id += 1;
                bundle.procedures.push(RawProcedure {
                    patient_id: pid,
                    encounter_id: Some(encounter_id),
                    procedure_id,
                    px_code: code,
                    px_code_type: ty,
                    px_date: date,
                });
                protected_px.push(false);
            }
            let n_frag = cfg.fragments_per_note.sample(&mut rng);
            let fragments = (0..n_frag)
                .map(|_| {
                    (0..cfg.sentences_per_fragment.sample(&mut rng))
                        .map(|_| text.filler_sentence(&mut rng))
                        .collect()
                })
                .collect();
            drafts_by_patient.entry(pid).or_default().push(drafts.len());
            drafts.push(DraftNote {
                patient_id: pid,
                parent_kind: Some(NoteParentKind::Encounter),
                parent_id: encounter_id,
                date: Some(date),
                fragments,
            });
        }
        if let Some(idx) = planted_codes.get(&pid) {
            for &i in idx {
                let pc = cohort_codes[i];
                let (eid, date) = *encs.choose(&mut rng).unwrap();
                match pc.kind {
                    CodeKind::Diagnosis => {
                        let name = vocab
                            .lookup(&pc.code_type, &pc.code)
                            .map(|c| c.concept_name.clone())
                            .unwrap_or_else(|| pc.code.clone());
                        bundle.diagnoses.push(RawDiagnosis {
                            patient_id: pid,
                            encounter_id: Some(eid),
                            dx_code: pc.code.clone(),
                            dx_code_type: pc.code_type.clone(),
                            dx_name: name,
                            dx_date: date,
                        });
                        protected_dx.push(true);
                    }
                    CodeKind::Procedure => {
                        procedure_id += 1;
                        bundle.procedures.push(RawProcedure {
                            patient_id: pid,
                            encounter_id: Some(eid),
                            procedure_id,
                            px_code: pc.code.clone(),
                            px_code_type: pc.code_type.clone(),
                            px_date: date,
                        });
                        protected_px.push(true);
                    }
                }
            }
        }
    }

    // procedure notes
    for px in &bundle.procedures {
        if rng.gen_bool(cfg.procedure_note_fraction) {
            drafts_by_patient.entry(px.patient_id).or_default().push(drafts.len());
            drafts.push(DraftNote {
                patient_id: px.patient_id,
                parent_kind: Some(NoteParentKind::Procedure),
                parent_id: px.procedure_id,
                date: Some(px.px_date),
                fragments: vec![(0..cfg.sentences_per_fragment.sample(&mut rng).max(1))
                    .map(|_| text.filler_sentence(&mut rng))
                    .collect()],
            });
        }
    }

    // exact unmappable counts over non-planted rows
    let mut expected_unmapped = BTreeMap::new();
    let procs_n = bundle.procedures.len();
    let target_px = (cfg.unmappable_procedure_fraction * procs_n as f64).round() as usize;
    let mut eligible: Vec<usize> = (0..procs_n).filter(|&i| !protected_px[i]).collect();
    if eligible.len() < target_px {
        return Err(Error::Config(
            "too few procedures to plant the unmappable fraction".into(),
        ));
    }
    eligible.shuffle(&mut rng);
    for &i in &eligible[..target_px] {
        let px = &mut bundle.procedures[i];
        px.px_code = unknown_code(&mut rng, CodeKind::Procedure, vocab, etl.px_chain(&px.px_code_type));
    }
    expected_unmapped.insert(RawProcedure::TABLE.to_string(), target_px as u64);
    let dx_n = bundle.diagnoses.len();
    let target_dx = (cfg.unmappable_diagnosis_fraction * dx_n as f64).round() as usize;
    let mut eligible: Vec<usize> = (0..dx_n).filter(|&i| !protected_dx[i]).collect();
    if eligible.len() < target_dx {
        return Err(Error::Config(
            "too few diagnoses to plant the unmappable fraction".into(),
        ));
    }
    eligible.shuffle(&mut rng);
    for &i in &eligible[..target_dx] {
        let dx = &mut bundle.diagnoses[i];
        dx.dx_code_type = "ICD10CM".into();
        dx.dx_code = unknown_code(&mut rng, CodeKind::Diagnosis, vocab, etl.dx_chain("ICD10CM"));
        dx.dx_name = "Unlisted diagnosis".into();
    }
    expected_unmapped.insert(RawDiagnosis::TABLE.to_string(), target_dx as u64);

    // concept mentions
    let encounter_drafts = |p: i64, drafts: &[DraftNote]| -> Vec<usize> {
        drafts_by_patient[&p]
            .iter()
            .copied()
            .filter(|&i| drafts[i].parent_kind == Some(NoteParentKind::Encounter))
            .collect()
    };
    let plant = |drafts: &mut Vec<DraftNote>, rng: &mut ChaCha8Rng, note: usize, s: Sentence| {
        let frags = &mut drafts[note].fragments;
        let f = rng.gen_range(0..frags.len());
        let pos = rng.gen_range(0..=frags[f].len());
        frags[f].insert(pos, s);
    };
    let mut affirmed_concept_patients: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut negated_only: BTreeMap<i64, BTreeSet<i64>> = BTreeMap::new();
    let mut concept_keys: BTreeSet<&String> = cfg.mention_patients.keys().collect();
    concept_keys.extend(cfg.negated_patients.keys());
    let mut taken: BTreeSet<i64> = BTreeSet::new();
    for key in concept_keys {
        let concept = concept_of(key)?;
        let forms = variants
            .get(&concept)
            .cloned()
            .filter(|v| !v.is_empty())
            .unwrap_or_else(|| vec![key.clone()]);
        let n_aff = cfg.mention_patients.get(key).copied().unwrap_or(0);
        let n_neg = cfg.negated_patients.get(key).copied().unwrap_or(0);
        let free: Vec<i64> = patients.iter().copied().filter(|p| !taken.contains(p)).collect();
        if n_aff + n_neg > free.len() {
            return Err(Error::Config(format!(
                "not enough patients to plant mentions of {key:?}"
            )));
        }
        let mut pick = free.clone();
        pick.shuffle(&mut rng);
        let mut affirmed: Vec<i64> = pick[..n_aff].to_vec();
        affirmed.sort();
        let mut negated: Vec<i64> = pick[n_aff..n_aff + n_neg].to_vec();
        negated.sort();
        taken.extend(&affirmed);
        taken.extend(&negated);
        if n_aff > 0 {
            for i in 0..forms.len().max(n_aff) {
                let p = affirmed[i % n_aff];
                let notes = encounter_drafts(p, &drafts);
                let note = *notes.choose(&mut rng).unwrap();
                let s = text.mention_sentence(&mut rng, &forms[i % forms.len()], concept, false);
                plant(&mut drafts, &mut rng, note, s);
            }
            affirmed_concept_patients.insert(concept, affirmed.into_iter().collect());
        } else if !forms.is_empty() && variants.contains_key(&concept) {
            return Err(Error::Config(format!("variants of {key:?} need mention_patients > 0")));
        }
        for &p in &negated {
            let notes = encounter_drafts(p, &drafts);
            let note = *notes.choose(&mut rng).unwrap();
            let s = text.mention_sentence(&mut rng, &forms[0], concept, true);
            plant(&mut drafts, &mut rng, note, s);
        }
        if !negated.is_empty() {
            negated_only.insert(concept, negated.into_iter().collect());
        }
    }
    if !background_terms.is_empty() {
        for note in 0..drafts.len() {
            if drafts[note].parent_kind == Some(NoteParentKind::Encounter)
                && rng.gen_bool(cfg.background_mention_fraction)
            {
                let e = *background_terms.choose(&mut rng).unwrap();
                let s = text.mention_sentence(&mut rng, &e.surface_term, e.concept_id, false);
                plant(&mut drafts, &mut rng, note, s);
            }
        }
    }

    // render notes and spans
    let mut spans = Vec::new();
    for d in &drafts {
        let kind = d.parent_kind.expect("set");
        let date = d.date.expect("set");
        let mut merged_offset = 0usize;
        for (seq, frag) in d.fragments.iter().enumerate() {
            let mut text_out = String::new();
            let mut local = 0usize;
            for (k, s) in frag.iter().enumerate() {
                if k > 0 {
                    text_out.push(' ');
                    local += 1;
                }
                for m in &s.mentions {
                    spans.push(PlantedSpan {
                        parent_kind: kind,
                        parent_id: d.parent_id,
                        patient_id: d.patient_id,
                        char_offset: merged_offset + local + m.char_offset,
                        term: m.term.clone(),
                        concept_id: m.concept_id,
                        negated: m.negated,
                    });
                }
                text_out.push_str(&s.text);
                local += s.text.chars().count();
            }
            merged_offset += local + 1;
            let entry = RawNoteEntry {
                patient_id: d.patient_id,
                parent_id: d.parent_id,
                parent_kind: kind,
                entry_seq: seq as i64 + 1,
                note_date: date,
                text_fragment: text_out,
            };
            match kind {
                NoteParentKind::Encounter => bundle.encounter_notes.push(entry),
                NoteParentKind::Procedure => bundle.procedure_notes.push(entry),
            }
        }
    }
    spans.sort();

    let planted_variant_counts = variants.iter().map(|(c, v)| (*c, v.len() as u64)).collect();
    let manifest = GroundTruthManifest {
        seed: cfg.seed,
        expected_raw_counts: bundle.counts(),
        expected_unmapped,
        planted_cohort_subject_ids: qualifying,
        decoy_subject_ids: decoys.into_iter().collect(),
        planted_variant_counts,
        planted_variants: variants,
        planted_mention_spans: spans,
        affirmed_concept_patients,
        negated_only_patients: negated_only,
        gender_counts,
    };
    Ok((bundle, manifest))
}

/// Replaces the raw namespace with the bundle. Returns rows per table.
pub fn write_raw(bundle: &RawBundle, mart: &mut Datamart) -> Result<BTreeMap<String, u64>> {
    mart.create_schemas()?;
    mart.clear_namespace(Namespace::Raw);
    mart.insert(bundle.demographics.iter().cloned())?;
    mart.insert(bundle.encounters.iter().cloned())?;
    mart.insert(bundle.diagnoses.iter().cloned())?;
    mart.insert(bundle.procedures.iter().cloned())?;
    mart.insert_into(Namespace::Raw, ENCOUNTER_NOTES, bundle.encounter_notes.iter().cloned())?;
    mart.insert_into(Namespace::Raw, PROCEDURE_NOTES, bundle.procedure_notes.iter().cloned())?;
    let mut counts = BTreeMap::new();
    for t in mart.registry().tables(Namespace::Raw) {
        counts.insert(t.name.to_string(), mart.row_count(Namespace::Raw, t.name)? as u64);
    }
    Ok(counts)
}

/// Writes the bundle as one CSV per raw table plus `manifest.json` into `dir`.
pub fn write_extract(bundle: &RawBundle, manifest: &GroundTruthManifest, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut mart = Datamart::in_memory();
    write_raw(bundle, &mut mart)?;
    for t in mart.registry().tables(Namespace::Raw) {
        mart.export_csv(Namespace::Raw, t.name, &dir.join(format!("{}.csv", t.name)))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads the raw CSVs written by [`write_extract`] into the raw namespace,
/// replacing its contents. Returns rows per table.
pub fn ingest_extract(mart: &mut Datamart, dir: &Path) -> Result<BTreeMap<String, u64>> {
    mart.create_schemas()?;
    mart.clear_namespace(Namespace::Raw);
    let names: Vec<&'static str> = mart.registry().tables(Namespace::Raw).map(|t| t.name).collect();
    let mut counts = BTreeMap::new();
    for name in names {
        let path = dir.join(format!("{name}.csv"));
        let n = mart.load_csv(Namespace::Raw, name, &path)?;
        counts.insert(name.to_string(), n as u64);
    }
    Ok(counts)
}
