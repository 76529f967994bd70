use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::definition::{CohortDefinition, Criterion, CriterionGroup, Domain, GroupMode, Limit};
use crate::error::Result;
use crate::store::{
    CohortRow, ConditionOccurrence, Datamart, Note, NoteNlp, ObservationPeriod, ProcedureOccurrence, VisitOccurrence,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateOptions {
    /// Count note_nlp mentions whose `term_exists` is false.
    pub include_negated: bool,
}

/// One dated clinical event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub person_id: i64,
    pub date: NaiveDate,
    pub concept_id: i64,
}

/// Events of every domain plus observation periods, read from a datamart.
#[derive(Debug, Clone, Default)]
pub struct CohortData {
    pub events: BTreeMap<Domain, Vec<Event>>,
    pub periods: Vec<ObservationPeriod>,
}

impl CohortData {
    pub fn from_mart(mart: &Datamart, opts: &GenerateOptions) -> Result<Self> {
        let mut events = BTreeMap::new();
        let conds: Vec<ConditionOccurrence> = mart.records()?;
        events.insert(
            Domain::Condition,
            conds
                .iter()
                .map(|c| Event {
                    person_id: c.person_id,
                    date: c.condition_start_date,
                    concept_id: c.condition_concept_id,
                })
                .collect(),
        );
        let procs: Vec<ProcedureOccurrence> = mart.records()?;
        events.insert(
            Domain::Procedure,
            procs
                .iter()
                .map(|p| Event {
                    person_id: p.person_id,
                    date: p.procedure_date,
                    concept_id: p.procedure_concept_id,
                })
                .collect(),
        );
        let visits: Vec<VisitOccurrence> = mart.records()?;
        events.insert(
            Domain::Visit,
            visits
                .iter()
                .map(|v| Event {
                    person_id: v.person_id,
                    date: v.visit_start_date,
                    concept_id: v.visit_concept_id,
                })
                .collect(),
        );
        let notes: Vec<Note> = mart.records()?;
        let by_note: HashMap<i64, (i64, NaiveDate)> =
            notes.iter().map(|n| (n.note_id, (n.person_id, n.note_date))).collect();
        let nlp: Vec<NoteNlp> = mart.records()?;
        events.insert(
            Domain::NoteNlp,
            nlp.iter()
                .filter(|m| opts.include_negated || m.term_exists)
                .filter_map(|m| {
                    by_note.get(&m.note_id).map(|&(person_id, date)| Event {
                        person_id,
                        date,
                        concept_id: m.note_nlp_concept_id,
                    })
                })
                .collect(),
        );
        Ok(CohortData {
            events,
            periods: mart.records()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttritionStep {
    pub name: String,
    pub persons: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttritionReport {
    /// Entry events left after the observation check and limit.
    pub initial_events: u64,
    pub initial_persons: u64,
    /// Persons remaining after each inclusion group, in order.
    pub after_rules: Vec<AttritionStep>,
    pub final_subjects: u64,
}

impl AttritionReport {
    /// Person counts from `initial_persons` through `final_subjects`.
    pub fn person_sequence(&self) -> Vec<u64> {
        let mut seq = vec![self.initial_persons];
        seq.extend(self.after_rules.iter().map(|s| s.persons));
        seq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortResult {
    pub rows: Vec<CohortRow>,
    pub attrition: AttritionReport,
}

impl CohortResult {
    pub fn subjects(&self) -> Vec<i64> {
        self.rows.iter().map(|r| r.subject_id).collect()
    }
}

/// Per person, sorted dates of events matching one (domain, concept set).
type DateIndex = HashMap<i64, Vec<NaiveDate>>;

struct Index<'a> {
    def: &'a CohortDefinition,
    data: &'a CohortData,
    sets: HashMap<(Domain, i64), DateIndex>,
    periods: HashMap<i64, Vec<(NaiveDate, NaiveDate)>>,
}

impl<'a> Index<'a> {
    fn new(def: &'a CohortDefinition, data: &'a CohortData) -> Self {
        let mut periods: HashMap<i64, Vec<(NaiveDate, NaiveDate)>> = HashMap::new();
        for p in &data.periods {
            periods
                .entry(p.person_id)
                .or_default()
                .push((p.observation_period_start_date, p.observation_period_end_date));
        }
        for v in periods.values_mut() {
            v.sort();
        }
        let mut idx = Index {
            def,
            data,
            sets: HashMap::new(),
            periods,
        };
        idx.build(def.entry.domain, def.entry.concept_set);
        for g in &def.inclusion {
            for c in &g.criteria {
                idx.build(c.domain, c.concept_set);
            }
        }
        idx
    }

    fn build(&mut self, domain: Domain, set_id: i64) {
        if self.sets.contains_key(&(domain, set_id)) {
            return;
        }
        let set = &self.def.concept_set(set_id).expect("validated").concept_ids;
        let mut map: DateIndex = HashMap::new();
        for e in self.data.events.get(&domain).into_iter().flatten() {
            if set.contains(&e.concept_id) {
                map.entry(e.person_id).or_default().push(e.date);
            }
        }
        for v in map.values_mut() {
            v.sort();
        }
        self.sets.insert((domain, set_id), map);
    }

    fn dates(&self, domain: Domain, set_id: i64, person: i64) -> &[NaiveDate] {
        self.sets[&(domain, set_id)].get(&person).map_or(&[], |v| v.as_slice())
    }

    /// The observation period covering `[date - prior, date + post]`.
    fn period_for(&self, person: i64, date: NaiveDate, prior: i64, post: i64) -> Option<(NaiveDate, NaiveDate)> {
        let lo = date - chrono::Duration::days(prior);
        let hi = date + chrono::Duration::days(post);
        self.periods
            .get(&person)?
            .iter()
            .copied()
            .find(|&(s, e)| s <= lo && hi <= e)
    }

    fn count(&self, c: &Criterion, person: i64, index: NaiveDate, period: (NaiveDate, NaiveDate)) -> u64 {
        let dates = self.dates(c.domain, c.concept_set, person);
        let mut lo = period.0;
        let mut hi = period.1;
        if let Some(s) = c.window.start_offset_days {
            lo = lo.max(index + chrono::Duration::days(s));
        }
        if let Some(e) = c.window.end_offset_days {
            hi = hi.min(index + chrono::Duration::days(e));
        }
        if lo > hi {
            return 0;
        }
        let a = dates.partition_point(|d| *d < lo);
        let b = dates.partition_point(|d| *d <= hi);
        (b - a) as u64
    }

    fn group_holds(&self, g: &CriterionGroup, cand: &Candidate) -> bool {
        let check = |c: &Criterion| {
            c.occurrences
                .holds(self.count(c, cand.person_id, cand.index, cand.period))
        };
        match g.mode {
            GroupMode::All => g.criteria.iter().all(check),
            GroupMode::Any => g.criteria.iter().any(check),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    person_id: i64,
    index: NaiveDate,
    period: (NaiveDate, NaiveDate),
}

/// Evaluates a definition against prepared event data.
pub fn generate_from(def: &CohortDefinition, data: &CohortData) -> CohortResult {
    let idx = Index::new(def, data);
    let entry = &def.entry;
    let entry_map = &idx.sets[&(entry.domain, entry.concept_set)];
    let mut persons: Vec<i64> = entry_map.keys().copied().collect();
    persons.sort_unstable();

    let mut candidates = Vec::new();
    for &p in &persons {
        let qualifying: Vec<Candidate> = entry_map[&p]
            .iter()
            .filter_map(|&d| {
                idx.period_for(p, d, entry.prior_obs_days, entry.post_obs_days)
                    .map(|period| Candidate {
                        person_id: p,
                        index: d,
                        period,
                    })
            })
            .collect();
        match entry.limit {
            Limit::Earliest => candidates.extend(qualifying.first().copied()),
            Limit::Latest => candidates.extend(qualifying.last().copied()),
            Limit::All => candidates.extend(qualifying),
        }
    }

    let distinct = |c: &[Candidate]| {
        let mut n = 0u64;
        let mut last = None;
        for x in c {
            if last != Some(x.person_id) {
                n += 1;
                last = Some(x.person_id);
            }
        }
        n
    };
    let initial_events = candidates.len() as u64;
    let initial_persons = distinct(&candidates);
    let mut after_rules = Vec::with_capacity(def.inclusion.len());
    for g in &def.inclusion {
        candidates.retain(|c| idx.group_holds(g, c));
        after_rules.push(AttritionStep {
            name: g.name.clone(),
            persons: distinct(&candidates),
        });
    }

    let mut rows: Vec<CohortRow> = Vec::new();
    for c in &candidates {
        if rows.last().is_some_and(|r| r.subject_id == c.person_id) {
            continue;
        }
        rows.push(CohortRow {
            cohort_definition_id: def.id,
            subject_id: c.person_id,
            cohort_start_date: c.index,
            cohort_end_date: c.period.1,
        });
    }
    CohortResult {
        attrition: AttritionReport {
            initial_events,
            initial_persons,
            after_rules,
            final_subjects: rows.len() as u64,
        },
        rows,
    }
}

pub fn generate(def: &CohortDefinition, mart: &Datamart, opts: &GenerateOptions) -> Result<CohortResult> {
    def.validate()?;
    Ok(generate_from(def, &CohortData::from_mart(mart, opts)?))
}

/// Generates and stores the cohort, replacing earlier rows for the same
/// definition id.
pub fn run_cohort(def: &CohortDefinition, mart: &mut Datamart, opts: &GenerateOptions) -> Result<CohortResult> {
    let result = generate(def, mart, opts)?;
    let mut kept: Vec<CohortRow> = mart
        .records::<CohortRow>()?
        .into_iter()
        .filter(|r| r.cohort_definition_id != def.id)
        .collect();
    kept.extend(result.rows.iter().cloned());
    kept.sort_by_key(|r| (r.cohort_definition_id, r.subject_id));
    mart.replace(kept)?;
    Ok(result)
}
