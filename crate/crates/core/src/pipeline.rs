//! Stage runners shared by the CLI and tests. Each stage opens the datamart
//! under the configured store root, checks stage order, does its work,
//! persists the namespaces it touched and records completion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::characterize::{self, StatRecord};
use crate::cohort::{self, CohortDefinition, CohortResult, GenerateOptions};
use crate::config::Config;
use crate::error::Result;
use crate::etl::{self, EtlReport};
use crate::nlp::{self, NlpOutput, NlpRunConfig};
use crate::qa::{self, QaReport, QaRow, ReportFormat, ThresholdOutcome};
use crate::status::{PipelineStatus, Stage};
use crate::store::{Datamart, Namespace};
use crate::synth::{self, GenConfig, GroundTruthManifest};
use crate::vocab::VocabularyStore;

#[derive(Debug, Clone)]
pub struct QaOutcome {
    pub report: QaReport,
    pub thresholds: ThresholdOutcome,
    pub rendered: String,
}

/// Runs pipeline stages against one configuration.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: Config,
}

impl Pipeline {
    pub fn new(config: Config) -> Self {
        Pipeline { config }
    }

    pub fn store(&self) -> &Path {
        &self.config.store
    }

    pub fn open(&self) -> Result<Datamart> {
        Datamart::open(self.store())
    }

    pub fn status(&self) -> Result<PipelineStatus> {
        PipelineStatus::load(self.store())
    }

    fn stage<T>(&self, stage: Stage, work: impl FnOnce() -> Result<(T, serde_json::Value)>) -> Result<T> {
        let mut status = self.status()?;
        status.check(stage)?;
        status.begin(stage);
        status.save(self.store())?;
        let outcome = work();
        // reload: a stage may not clobber bookkeeping it did not touch
        let mut status = self.status()?;
        match outcome {
            Ok((value, metrics)) => {
                status.finish(stage, metrics);
                status.save(self.store())?;
                Ok(value)
            }
            Err(e) => {
                status.stage = Default::default();
                status.save(self.store())?;
                Err(e)
            }
        }
    }

    /// Writes a synthetic extract and its manifest to `out` (default: the
    /// configured extract directory).
    pub fn gen(&self, gen: Option<&GenConfig>, out: Option<&Path>) -> Result<(PathBuf, GroundTruthManifest)> {
        let gen = gen.unwrap_or(&self.config.generator).clone();
        let dir = out.map(Path::to_owned).unwrap_or_else(|| self.config.extract_dir());
        self.stage(Stage::Gen, || {
            let (bundle, manifest) = synth::generate(&gen)?;
            synth::write_extract(&bundle, &manifest, &dir)?;
            let metrics = json!({ "dir": dir, "raw_counts": manifest.expected_raw_counts });
            Ok(((dir.clone(), manifest), metrics))
        })
    }

    /// Loads raw CSVs and the vocabulary into the store.
    pub fn ingest(&self, from: Option<&Path>) -> Result<BTreeMap<String, u64>> {
        let dir = from.map(Path::to_owned).unwrap_or_else(|| self.config.extract_dir());
        self.stage(Stage::Ingest, || {
            let mut mart = self.open()?;
            let counts = synth::ingest_extract(&mut mart, &dir)?;
            let vocab = self.config.vocabulary()?;
            vocab.write_to(&mut mart)?;
            mart.save_namespace(Namespace::Raw)?;
            mart.save_namespace(Namespace::Cdm)?;
            let metrics = json!({ "raw_counts": counts, "concepts": vocab.len() });
            Ok((counts, metrics))
        })
    }

    fn vocabulary(&self, mart: &Datamart) -> Result<VocabularyStore> {
        let v = VocabularyStore::from_datamart(mart)?;
        if v.is_empty() {
            self.config.vocabulary()
        } else {
            Ok(v)
        }
    }

    pub fn etl(&self) -> Result<EtlReport> {
        self.stage(Stage::Etl, || {
            let mut mart = self.open()?;
            let vocab = self.vocabulary(&mart)?;
            let rules = self.config.etl_rules()?;
            let report = etl::run_etl(&mut mart, &vocab, &rules, &self.config.etl)?;
            mart.save_namespace(Namespace::Cdm)?;
            mart.save_namespace(Namespace::Results)?;
            let counts: BTreeMap<&str, usize> = report
                .transforms
                .iter()
                .map(|t| (t.cdm_table.as_str(), t.cdm_count))
                .collect();
            Ok((
                report.clone(),
                json!({ "cdm_counts": counts, "derived": report.derived }),
            ))
        })
    }

    pub fn qa(&self, format: ReportFormat) -> Result<QaOutcome> {
        self.stage(Stage::Qa, || {
            let mut mart = self.open()?;
            let report = qa::reconcile(&mart, &self.config.qa_pairs())?;
            let thresholds = qa::assert_thresholds(&report, &self.config.qa.limits);
            mart.replace::<QaRow>(report.rows.iter().cloned())?;
            mart.save_table(Namespace::Results, "qa_report")?;
            let rendered = qa::render_report(&report, format)?;
            let metrics = json!({ "passed": thresholds.passed, "violations": thresholds.violations });
            Ok((
                QaOutcome {
                    report,
                    thresholds,
                    rendered,
                },
                metrics,
            ))
        })
    }

    pub fn nlp(&self, run: Option<&NlpRunConfig>) -> Result<NlpOutput> {
        let run = run.unwrap_or(&self.config.nlp).clone();
        self.stage(Stage::Nlp, || {
            let mut mart = self.open()?;
            let vocab = self.vocabulary(&mart)?;
            let dict = self.config.dictionary(&vocab)?;
            let out = nlp::run_nlp(&mut mart, &dict, &run)?;
            if out.complete {
                mart.save_table(Namespace::Cdm, "note_nlp")?;
            } else {
                return Err(crate::Error::Checkpoint(format!(
                    "run stopped after {} notes; rerun to resume",
                    out.metrics.notes_processed
                )));
            }
            let metrics = serde_json::to_value(&out.metrics)?;
            Ok((out, metrics))
        })
    }

    pub fn characterize(&self) -> Result<Vec<StatRecord>> {
        self.stage(Stage::Characterize, || {
            let mut mart = self.open()?;
            let stats = characterize::characterize(&mut mart)?;
            mart.save_table(Namespace::Results, "stat_record")?;
            let n = stats.len();
            Ok((stats, json!({ "records": n })))
        })
    }

    /// Generates a cohort and stores its rows. A definition without an id is
    /// stored as cohort 1.
    pub fn cohort_run(&self, def: &CohortDefinition, opts: Option<&GenerateOptions>) -> Result<CohortResult> {
        let opts = opts.unwrap_or(&self.config.cohort);
        let mut def = def.clone();
        if def.id == 0 {
            def.id = 1;
        }
        self.stage(Stage::Cohort, || {
            let mut mart = self.open()?;
            let result = cohort::run_cohort(&def, &mut mart, opts)?;
            mart.save_table(Namespace::Cdm, "cohort")?;
            let metrics = json!({ "cohort_definition_id": def.id, "subjects": result.rows.len() });
            Ok((result, metrics))
        })
    }
}
