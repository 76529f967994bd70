use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

use super::definition::{CohortDefinition, Domain, GroupMode, Limit};
use super::engine::GenerateOptions;
use crate::error::Result;
use crate::store::{
    ConditionOccurrence, Datamart, Note, NoteNlp, ObservationPeriod, Person, ProcedureOccurrence, VisitOccurrence,
};

/// Evaluates a definition by scanning every person's full event list.
/// Returns each subject with its cohort start date. Meant for small data.
pub fn brute_force_rows(
    def: &CohortDefinition,
    mart: &Datamart,
    opts: &GenerateOptions,
) -> Result<BTreeMap<i64, NaiveDate>> {
    def.validate()?;
    let persons: Vec<Person> = mart.records()?;
    let periods: Vec<ObservationPeriod> = mart.records()?;
    let conds: Vec<ConditionOccurrence> = mart.records()?;
    let procs: Vec<ProcedureOccurrence> = mart.records()?;
    let visits: Vec<VisitOccurrence> = mart.records()?;
    let notes: Vec<Note> = mart.records()?;
    let nlp: Vec<NoteNlp> = mart.records()?;

    let mut out = BTreeMap::new();
    for person in &persons {
        let pid = person.person_id;
        let mut events: Vec<(Domain, NaiveDate, i64)> = Vec::new();
        for c in conds.iter().filter(|c| c.person_id == pid) {
            events.push((Domain::Condition, c.condition_start_date, c.condition_concept_id));
        }
        for p in procs.iter().filter(|p| p.person_id == pid) {
            events.push((Domain::Procedure, p.procedure_date, p.procedure_concept_id));
        }
        for v in visits.iter().filter(|v| v.person_id == pid) {
            events.push((Domain::Visit, v.visit_start_date, v.visit_concept_id));
        }
        for m in &nlp {
            if !opts.include_negated && !m.term_exists {
                continue;
            }
            for n in notes.iter().filter(|n| n.note_id == m.note_id && n.person_id == pid) {
                events.push((Domain::NoteNlp, n.note_date, m.note_nlp_concept_id));
            }
        }
        let my_periods: Vec<&ObservationPeriod> = periods.iter().filter(|o| o.person_id == pid).collect();

        let in_set = |set: i64, concept: i64| def.concept_set(set).unwrap().concept_ids.contains(&concept);
        let covering = |lo: NaiveDate, hi: NaiveDate| {
            my_periods
                .iter()
                .filter(|o| o.observation_period_start_date <= lo && hi <= o.observation_period_end_date)
                .min_by_key(|o| o.observation_period_start_date)
                .map(|o| (o.observation_period_start_date, o.observation_period_end_date))
        };

        let mut entries: Vec<(NaiveDate, (NaiveDate, NaiveDate))> = Vec::new();
        for &(domain, date, concept) in &events {
            if domain != def.entry.domain || !in_set(def.entry.concept_set, concept) {
                continue;
            }
            let lo = date - chrono::Duration::days(def.entry.prior_obs_days);
            let hi = date + chrono::Duration::days(def.entry.post_obs_days);
            if let Some(period) = covering(lo, hi) {
                entries.push((date, period));
            }
        }
        entries.sort();
        let entries: Vec<_> = match def.entry.limit {
            Limit::Earliest => entries.into_iter().take(1).collect(),
            Limit::Latest => entries.into_iter().last().into_iter().collect(),
            Limit::All => entries,
        };

        let mut survivors = Vec::new();
        for (index, period) in entries {
            let mut ok = true;
            for group in &def.inclusion {
                let mut results = Vec::new();
                for crit in &group.criteria {
                    let mut n = 0u64;
                    for &(domain, date, concept) in &events {
                        let offset = (date - index).num_days();
                        if domain == crit.domain
                            && in_set(crit.concept_set, concept)
                            && period.0 <= date
                            && date <= period.1
                            && crit.window.start_offset_days.is_none_or(|s| offset >= s)
                            && crit.window.end_offset_days.is_none_or(|e| offset <= e)
                        {
                            n += 1;
                        }
                    }
                    results.push(crit.occurrences.holds(n));
                }
                let group_ok = match group.mode {
                    GroupMode::All => results.iter().all(|&r| r),
                    GroupMode::Any => results.iter().any(|&r| r),
                };
                if !group_ok {
                    ok = false;
                    break;
                }
            }
            if ok {
                survivors.push(index);
            }
        }
        if let Some(start) = survivors.into_iter().min() {
            out.insert(pid, start);
        }
    }
    Ok(out)
}

/// Subject ids that satisfy the definition, by exhaustive scan.
pub fn brute_force_oracle(def: &CohortDefinition, mart: &Datamart, opts: &GenerateOptions) -> Result<BTreeSet<i64>> {
    Ok(brute_force_rows(def, mart, opts)?.into_keys().collect())
}
