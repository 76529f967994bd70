//! A desk-scale clinical datamart.
//!
//! Raw EHR extracts are loaded into a `raw` namespace, transformed into
//! OMOP-style CDM tables, reconciled by record counts, mined for concept
//! mentions in free-text notes, summarized and queried with cohort
//! definitions. Everything lives in one [`store::Datamart`] persisted as CSV.

pub mod characterize;
pub mod cli;
pub mod cohort;
pub mod config;
pub mod error;
pub mod etl;
pub mod fixtures;
pub mod nlp;
pub mod pipeline;
pub mod qa;
pub mod service;
pub mod status;
pub mod store;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
