//! Cohort definitions and generation.
//!
//! A definition names concept sets, an entry event and ordered inclusion
//! groups. Generation selects qualifying entry events per person, applies
//! each group in turn and writes one `cdm.cohort` row per subject, together
//! with an attrition report. [`brute_force_oracle`] evaluates the same
//! semantics by exhaustive scan and exists for verification.

mod definition;
mod engine;
mod oracle;

pub use definition::{
    CohortDefinition, ConceptSet, Criterion, CriterionGroup, Domain, EntryEvent, Exit, GroupMode, Limit, Occurrences,
    Op, Window,
};
pub use engine::{
    generate, generate_from, run_cohort, AttritionReport, AttritionStep, CohortData, CohortResult, Event,
    GenerateOptions,
};
pub use oracle::{brute_force_oracle, brute_force_rows};
