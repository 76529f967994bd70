use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Event source a criterion draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Condition,
    Procedure,
    Visit,
    NoteNlp,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Condition, Domain::Procedure, Domain::Visit, Domain::NoteNlp];
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Condition => "condition",
            Domain::Procedure => "procedure",
            Domain::Visit => "visit",
            Domain::NoteNlp => "note_nlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limit {
    #[default]
    Earliest,
    Latest,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSet {
    pub id: i64,
    #[serde(default)]
    pub name: String,
    pub concept_ids: BTreeSet<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryEvent {
    pub domain: Domain,
    pub concept_set: i64,
    #[serde(default)]
    pub limit: Limit,
    /// Days of observation required before the event.
    #[serde(default)]
    pub prior_obs_days: i64,
    /// Days of observation required after the event.
    #[serde(default)]
    pub post_obs_days: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "=")]
    Exactly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Occurrences {
    pub op: Op,
    pub count: u64,
}

impl Occurrences {
    pub const AT_LEAST_ONE: Occurrences = Occurrences {
        op: Op::AtLeast,
        count: 1,
    };

    pub fn holds(&self, n: u64) -> bool {
        match self.op {
            Op::AtLeast => n >= self.count,
            Op::AtMost => n <= self.count,
            Op::Exactly => n == self.count,
        }
    }
}

/// Day offsets relative to the index date, inclusive. `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    #[serde(default)]
    pub start_offset_days: Option<i64>,
    #[serde(default)]
    pub end_offset_days: Option<i64>,
}

impl Window {
    pub fn contains(&self, offset_days: i64) -> bool {
        self.start_offset_days.is_none_or(|s| offset_days >= s) && self.end_offset_days.is_none_or(|e| offset_days <= e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criterion {
    pub domain: Domain,
    pub concept_set: i64,
    #[serde(default = "at_least_one")]
    pub occurrences: Occurrences,
    #[serde(default)]
    pub window: Window,
}

fn at_least_one() -> Occurrences {
    Occurrences::AT_LEAST_ONE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    #[default]
    All,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionGroup {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: GroupMode,
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    #[default]
    EndOfObservation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortDefinition {
    /// Written to `cohort_definition_id`. Zero means not yet assigned.
    #[serde(default)]
    pub id: i64,
    pub name: String,
    pub concept_sets: Vec<ConceptSet>,
    pub entry: EntryEvent,
    #[serde(default)]
    pub inclusion: Vec<CriterionGroup>,
    #[serde(default)]
    pub exit: Exit,
}

impl CohortDefinition {
    /// Parses and validates a JSON definition.
    pub fn parse(text: &str) -> Result<Self> {
        let def: CohortDefinition =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("cohort definition: {e}")))?;
        def.validate()?;
        Ok(def)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("definition serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for cs in &self.concept_sets {
            if !ids.insert(cs.id) {
                return Err(Error::Validation(format!("duplicate concept set {}", cs.id)));
            }
            if cs.concept_ids.is_empty() {
                return Err(Error::Validation(format!("concept set {} is empty", cs.id)));
            }
        }
        let resolve = |id: i64, what: &str| {
            if ids.contains(&id) {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "{what} references undefined concept set {id}"
                )))
            }
        };
        resolve(self.entry.concept_set, "entry event")?;
        if self.entry.prior_obs_days < 0 || self.entry.post_obs_days < 0 {
            return Err(Error::Validation("observation window days must be non-negative".into()));
        }
        for (g, group) in self.inclusion.iter().enumerate() {
            if group.criteria.is_empty() {
                return Err(Error::Validation(format!("inclusion group {} has no criteria", g + 1)));
            }
            for c in &group.criteria {
                resolve(c.concept_set, &format!("inclusion group {}", g + 1))?;
                if let (Some(s), Some(e)) = (c.window.start_offset_days, c.window.end_offset_days) {
                    if s > e {
                        return Err(Error::Validation(format!(
                            "inclusion group {}: window [{s}, {e}] is empty",
                            g + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn concept_set(&self, id: i64) -> Option<&ConceptSet> {
        self.concept_sets.iter().find(|c| c.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_definitions_parse() {
        let d = fixtures::stroke_cohort();
        assert_eq!(d.entry.domain, Domain::Condition);
        assert_eq!(d.inclusion.len(), 2);
        assert!(d.concept_set(3).unwrap().concept_ids.contains(&2314284));
        let f = fixtures::fall_mentions_cohort();
        assert_eq!(f.entry.domain, Domain::NoteNlp);
        assert!(f.inclusion.is_empty());
    }

    #[test]
    fn dangling_set_is_named() {
        let text = r#"{"name":"x","concept_sets":[{"id":1,"concept_ids":[1]}],
            "entry":{"domain":"condition","concept_set":9}}"#;
        let err = CohortDefinition::parse(text).unwrap_err().to_string();
        assert!(err.contains("concept set 9"), "{err}");
    }

    #[test]
    fn unknown_domain_is_rejected() {
        let text = r#"{"name":"x","concept_sets":[{"id":1,"concept_ids":[1]}],
            "entry":{"domain":"drug","concept_set":1}}"#;
        assert!(matches!(CohortDefinition::parse(text), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_window_is_rejected() {
        let text = r#"{"name":"x","concept_sets":[{"id":1,"concept_ids":[1]}],
            "entry":{"domain":"condition","concept_set":1},
            "inclusion":[{"name":"g","mode":"any","criteria":[{"domain":"visit","concept_set":1,
              "occurrences":{"op":"<=","count":0},"window":{"start_offset_days":5,"end_offset_days":-5}}]}]}"#;
        assert!(CohortDefinition::parse(text).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let d = fixtures::stroke_cohort();
        assert_eq!(CohortDefinition::parse(&d.to_json()).unwrap(), d);
    }

    #[test]
    fn window_bounds_inclusive() {
        let w = Window {
            start_offset_days: Some(-30),
            end_offset_days: Some(0),
        };
        assert!(w.contains(-30) && w.contains(0) && !w.contains(1) && !w.contains(-31));
        assert!(Window::default().contains(i64::MIN));
    }
}
