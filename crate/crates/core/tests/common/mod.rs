#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use caremart::cohort::{
    CohortDefinition, ConceptSet, Criterion, CriterionGroup, Domain, EntryEvent, Exit, GroupMode, Limit, Occurrences,
    Op, Window,
};
use caremart::config::Config;
use caremart::pipeline::Pipeline;
use caremart::store::{
    ConditionOccurrence, Datamart, Note, NoteNlp, ObservationPeriod, Person, ProcedureOccurrence, VisitOccurrence,
};
use caremart::synth::{GenConfig, GroundTruthManifest};
use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn config_for(store: &Path, gen: GenConfig) -> Config {
    Config {
        store: store.to_owned(),
        generator: gen,
        ..Config::default()
    }
}

/// gen → ingest → etl → qa → nlp → characterize in `store`.
pub fn full_run(store: &Path, gen: GenConfig) -> (Pipeline, GroundTruthManifest) {
    let p = Pipeline::new(config_for(store, gen));
    let (_, manifest) = p.gen(None, None).expect("gen");
    p.ingest(None).expect("ingest");
    p.etl().expect("etl");
    p.qa(caremart::qa::ReportFormat::Text).expect("qa");
    p.nlp(None).expect("nlp");
    p.characterize().expect("characterize");
    (p, manifest)
}

/// Default generator settings with planting scaled to `n_patients`.
pub fn small_gen(n_patients: usize, seed: u64) -> GenConfig {
    let mut gen = GenConfig {
        n_patients,
        seed,
        ..GenConfig::default()
    };
    if n_patients < 400 {
        let fall = |n: usize| std::collections::BTreeMap::from([("fall".to_string(), n)]);
        gen.planted_cohort.n_qualifying = (n_patients / 10).max(1);
        gen.planted_cohort.n_decoys = n_patients / 10;
        gen.mention_patients = fall(n_patients / 5);
        gen.negated_patients = fall(n_patients / 20);
        gen.variant_expansion = fall(n_patients / 5 * 2);
    }
    gen
}

fn day(base: NaiveDate, offset: i64) -> NaiveDate {
    base + Duration::days(offset)
}

pub const CONCEPT_POOL: [i64; 6] = [11, 12, 13, 14, 15, 16];

/// A CDM with `n_persons`, one or two observation periods each, and events in
/// every cohort domain drawn from [`CONCEPT_POOL`]. Some events fall outside
/// any observation period.
pub fn random_cdm(rng: &mut ChaCha8Rng, n_persons: usize) -> Datamart {
    let base = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let mut mart = Datamart::in_memory();
    let (mut persons, mut periods, mut conds, mut procs, mut visits, mut notes, mut nlp) =
        (vec![], vec![], vec![], vec![], vec![], vec![], vec![]);
    let (mut period_id, mut event_id, mut note_id) = (1, 1, 1);
    for i in 0..n_persons {
        let pid = 1000 + i as i64;
        persons.push(Person {
            person_id: pid,
            gender_concept_id: 8507,
            year_of_birth: 1960,
            month_of_birth: 1,
            day_of_birth: 1,
            race_concept_id: 0,
            ethnicity_concept_id: 0,
            gender_source_value: "MALE".into(),
            race_source_value: String::new(),
            ethnicity_source_value: String::new(),
        });
        let mut start = rng.gen_range(0..200);
        for _ in 0..rng.gen_range(1..=2) {
            let end = start + rng.gen_range(0..600);
            periods.push(ObservationPeriod {
                observation_period_id: period_id,
                person_id: pid,
                observation_period_start_date: day(base, start),
                observation_period_end_date: day(base, end),
                period_type_concept_id: 32817,
            });
            period_id += 1;
            start = end + rng.gen_range(1..200);
        }
        let horizon = start + 100;
        for _ in 0..12 {
            let d = day(base, rng.gen_range(-50..horizon));
            let concept = *CONCEPT_POOL.choose(rng).unwrap();
            match rng.gen_range(0..4) {
                0 => conds.push(ConditionOccurrence {
                    condition_occurrence_id: event_id,
                    person_id: pid,
                    condition_concept_id: concept,
                    condition_start_date: d,
                    condition_type_concept_id: 32817,
                    condition_source_value: String::new(),
                    condition_source_concept_id: 0,
                    visit_occurrence_id: None,
                }),
                1 => procs.push(ProcedureOccurrence {
                    procedure_occurrence_id: event_id,
                    person_id: pid,
                    procedure_concept_id: concept,
                    procedure_date: d,
                    procedure_type_concept_id: 32817,
                    procedure_source_value: String::new(),
                    procedure_source_concept_id: 0,
                    visit_occurrence_id: None,
                }),
                2 => visits.push(VisitOccurrence {
                    visit_occurrence_id: event_id,
                    person_id: pid,
                    visit_concept_id: concept,
                    visit_start_date: d,
                    visit_end_date: d,
                    visit_type_concept_id: 32817,
                    visit_source_value: String::new(),
                }),
                _ => {
                    notes.push(Note {
                        note_id,
                        person_id: pid,
                        note_date: d,
                        note_type_concept_id: 44814640,
                        note_title: String::new(),
                        note_text: String::new(),
                        visit_occurrence_id: None,
                    });
                    for k in 0..rng.gen_range(1..=2) {
                        nlp.push(NoteNlp {
                            note_nlp_id: event_id * 10 + k,
                            note_id,
                            section_concept_id: 0,
                            snippet: String::new(),
                            offset: 0,
                            lexical_variant: String::new(),
                            note_nlp_concept_id: *CONCEPT_POOL.choose(rng).unwrap(),
                            note_nlp_source_concept_id: 0,
                            nlp_system: "test".into(),
                            nlp_date: d,
                            term_exists: rng.gen_bool(0.8),
                            term_temporal: None,
                            term_modifiers: None,
                        });
                    }
                    note_id += 1;
                }
            }
            event_id += 1;
        }
    }
    mart.insert(persons).unwrap();
    mart.insert(periods).unwrap();
    mart.insert(conds).unwrap();
    mart.insert(procs).unwrap();
    mart.insert(visits).unwrap();
    mart.insert(notes).unwrap();
    mart.insert(nlp).unwrap();
    mart
}

const DOMAINS: [Domain; 4] = [Domain::Condition, Domain::Procedure, Domain::Visit, Domain::NoteNlp];

fn random_window(rng: &mut ChaCha8Rng) -> Window {
    let bound = |rng: &mut ChaCha8Rng| rng.gen_bool(0.6).then(|| rng.gen_range(-300..300));
    let (mut a, mut b) = (bound(rng), bound(rng));
    if let (Some(x), Some(y)) = (a, b) {
        if x > y {
            (a, b) = (Some(y), Some(x));
        }
    }
    Window {
        start_offset_days: a,
        end_offset_days: b,
    }
}

/// A valid definition over [`CONCEPT_POOL`].
pub fn random_definition(rng: &mut ChaCha8Rng, id: i64) -> CohortDefinition {
    let n_sets = rng.gen_range(1..=3);
    let concept_sets: Vec<ConceptSet> = (1..=n_sets)
        .map(|sid| {
            let k = rng.gen_range(1..=3);
            let ids: BTreeSet<i64> = CONCEPT_POOL.choose_multiple(rng, k).copied().collect();
            ConceptSet {
                id: sid,
                name: format!("set {sid}"),
                concept_ids: ids,
            }
        })
        .collect();
    let limits = [Limit::Earliest, Limit::Latest, Limit::All];
    let obs = [0, 0, 30, 120];
    let entry = EntryEvent {
        domain: *DOMAINS.choose(rng).unwrap(),
        concept_set: rng.gen_range(1..=n_sets),
        limit: *limits.choose(rng).unwrap(),
        prior_obs_days: *obs.choose(rng).unwrap(),
        post_obs_days: *obs.choose(rng).unwrap(),
    };
    let ops = [Op::AtLeast, Op::AtMost, Op::Exactly];
    let inclusion = (0..rng.gen_range(0..=2))
        .map(|g| CriterionGroup {
            name: format!("group {g}"),
            mode: if rng.gen_bool(0.5) {
                GroupMode::All
            } else {
                GroupMode::Any
            },
            criteria: (0..rng.gen_range(1..=3))
                .map(|_| Criterion {
                    domain: *DOMAINS.choose(rng).unwrap(),
                    concept_set: rng.gen_range(1..=n_sets),
                    occurrences: Occurrences {
                        op: *ops.choose(rng).unwrap(),
                        count: rng.gen_range(0..=3),
                    },
                    window: random_window(rng),
                })
                .collect(),
        })
        .collect();
    CohortDefinition {
        id,
        name: format!("random {id}"),
        concept_sets,
        entry,
        inclusion,
        exit: Exit::EndOfObservation,
    }
}

/// Collects every CSV under `dir` as `(relative path, bytes)`, sorted.
pub fn csv_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// Recomputes every characterization figure straight from the stored CSV
/// rows, keyed by `(analysis, stratum_1)` → `(count, avg)`.
pub fn recount(mart: &Datamart) -> std::collections::BTreeMap<(String, Option<String>), (i64, Option<f64>)> {
    use caremart::store::Namespace;
    use std::collections::{BTreeMap, HashMap};
    let mut out = BTreeMap::new();
    for t in mart.registry().tables(Namespace::Cdm) {
        let n = mart.table(Namespace::Cdm, t.name).unwrap().rows().len() as i64;
        out.insert(("row_count".to_string(), Some(t.name.to_string())), (n, None));
    }
    let persons: Vec<Person> = mart.records().unwrap();
    let p = persons.len() as f64;
    let half_up = |total: usize| ((total as f64 / p) + 0.5).floor() as i64;
    let counts = [
        (
            "conditions_per_person",
            mart.records::<ConditionOccurrence>().unwrap().len(),
        ),
        ("visits_per_person", mart.records::<VisitOccurrence>().unwrap().len()),
        ("notes_per_person", mart.records::<Note>().unwrap().len()),
        (
            "procedures_per_person",
            mart.records::<ProcedureOccurrence>().unwrap().len(),
        ),
    ];
    for (name, total) in counts {
        out.insert((name.to_string(), None), (half_up(total), Some(total as f64 / p)));
    }
    let mut genders: BTreeMap<i64, i64> = BTreeMap::new();
    for person in &persons {
        *genders.entry(person.gender_concept_id).or_default() += 1;
    }
    for (g, n) in genders {
        out.insert(("person_by_gender".to_string(), Some(g.to_string())), (n, None));
    }
    let nlp: Vec<NoteNlp> = mart.records().unwrap();
    let notes: Vec<Note> = mart.records().unwrap();
    let owner: HashMap<i64, i64> = notes.iter().map(|n| (n.note_id, n.person_id)).collect();
    let concepts: BTreeSet<i64> = nlp.iter().map(|r| r.note_nlp_concept_id).collect();
    let pairs: BTreeSet<(i64, i64)> = nlp
        .iter()
        .filter_map(|r| owner.get(&r.note_id).map(|&p| (p, r.note_nlp_concept_id)))
        .collect();
    out.insert(("nlp_total_mentions".to_string(), None), (nlp.len() as i64, None));
    out.insert(
        ("nlp_distinct_concepts".to_string(), None),
        (concepts.len() as i64, None),
    );
    out.insert(
        ("nlp_mentions_per_person".to_string(), None),
        (half_up(nlp.len()), Some(nlp.len() as f64 / p)),
    );
    out.insert(
        ("nlp_distinct_concepts_per_person".to_string(), None),
        (half_up(pairs.len()), Some(pairs.len() as f64 / p)),
    );
    out
}

/// Compares stored stats with [`recount`]; returns mismatch descriptions.
pub fn recount_mismatches(mart: &Datamart) -> Vec<String> {
    use caremart::characterize::StatRecord;
    let stats: Vec<StatRecord> = mart.records().unwrap();
    let expected = recount(mart);
    let mut bad = Vec::new();
    if stats.len() != expected.len() {
        bad.push(format!("{} records, expected {}", stats.len(), expected.len()));
    }
    for s in &stats {
        let key = (s.analysis_name.clone(), s.stratum_1.clone());
        match expected.get(&key) {
            Some((count, avg)) => {
                let avg_ok = match (s.avg_value, avg) {
                    (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                    (None, None) => true,
                    _ => false,
                };
                if s.count_value != *count || !avg_ok {
                    bad.push(format!(
                        "{key:?}: {}/{:?} vs {count}/{avg:?}",
                        s.count_value, s.avg_value
                    ));
                }
            }
            None => bad.push(format!("unexpected {key:?}")),
        }
    }
    bad
}

/// Literal scan over the concept and relationship lists.
pub fn mapping_oracle(
    vocab: &caremart::vocab::VocabularyStore,
    code: &str,
    order: &[&str],
) -> (i64, i64, caremart::vocab::MappingStatus) {
    for v in order {
        let Some(src) = vocab
            .concepts()
            .iter()
            .find(|c| c.vocabulary_id == *v && c.concept_code == code)
        else {
            continue;
        };
        if src.is_standard() {
            return (src.concept_id, src.concept_id, caremart::vocab::MappingStatus::Mapped);
        }
        let target = vocab
            .relationships()
            .iter()
            .filter(|r| r.concept_id_1 == src.concept_id && r.relationship_id == caremart::vocab::MAPS_TO)
            .filter(|r| {
                vocab
                    .concepts()
                    .iter()
                    .any(|c| c.concept_id == r.concept_id_2 && c.is_standard())
            })
            .map(|r| r.concept_id_2)
            .min();
        return match target {
            Some(t) => (src.concept_id, t, caremart::vocab::MappingStatus::Mapped),
            None => (src.concept_id, 0, caremart::vocab::MappingStatus::SourceOnly),
        };
    }
    (0, 0, caremart::vocab::MappingStatus::Unmapped)
}
