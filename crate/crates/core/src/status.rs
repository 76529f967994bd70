//! Pipeline stage bookkeeping kept in `<store>/pipeline.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATUS_FILE: &str = "pipeline.json";

/// A CLI stage that can complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Gen,
    Ingest,
    Etl,
    Qa,
    Nlp,
    Characterize,
    Cohort,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Ingest => "ingest",
            Stage::Etl => "etl",
            Stage::Qa => "qa",
            Stage::Nlp => "nlp",
            Stage::Characterize => "characterize",
            Stage::Cohort => "cohort",
        }
    }

    /// The stage that must have completed first.
    pub fn requires(self) -> Option<Stage> {
        match self {
            Stage::Gen | Stage::Ingest => None,
            Stage::Etl => Some(Stage::Ingest),
            Stage::Qa | Stage::Nlp | Stage::Characterize | Stage::Cohort => Some(Stage::Etl),
        }
    }

    /// Stages whose output a rerun of `self` invalidates.
    fn downstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[Stage::Etl, Stage::Qa, Stage::Nlp, Stage::Characterize, Stage::Cohort],
            Stage::Etl => &[Stage::Qa, Stage::Nlp, Stage::Characterize, Stage::Cohort],
            // row counts include note_nlp and cohort
            Stage::Nlp | Stage::Cohort => &[Stage::Characterize],
            _ => &[],
        }
    }

    fn phase(self) -> Phase {
        match self {
            Stage::Gen => Phase::Generating,
            Stage::Ingest => Phase::Ingesting,
            Stage::Etl => Phase::Etl,
            Stage::Qa => Phase::Qa,
            Stage::Nlp => Phase::Nlp,
            Stage::Characterize => Phase::Characterizing,
            Stage::Cohort => Phase::Cohort,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the pipeline is doing right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Idle,
    Generating,
    Ingesting,
    Etl,
    Qa,
    Nlp,
    Characterizing,
    Cohort,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineStatus {
    pub stage: Phase,
    /// Fraction of the current stage done, in [0, 1].
    pub progress: f64,
    pub completed: BTreeSet<Stage>,
    /// Latest summary figures reported by each stage.
    pub metrics: BTreeMap<String, serde_json::Value>,
}

impl PipelineStatus {
    pub fn path(store: &Path) -> PathBuf {
        store.join(STATUS_FILE)
    }

    pub fn load(store: &Path) -> Result<Self> {
        let path = Self::path(store);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn save(&self, store: &Path) -> Result<()> {
        fs::create_dir_all(store).map_err(|e| Error::io(store, e))?;
        let path = Self::path(store);
        let tmp = store.join(format!("{STATUS_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Fails with a stage-order error when the prerequisite has not completed.
    pub fn check(&self, stage: Stage) -> Result<()> {
        match stage.requires() {
            Some(req) if !self.completed.contains(&req) => Err(Error::StageOrder {
                stage: stage.to_string(),
                requires: req.to_string(),
            }),
            _ => Ok(()),
        }
    }

    pub fn begin(&mut self, stage: Stage) {
        self.stage = stage.phase();
        self.progress = 0.0;
    }

    pub fn finish(&mut self, stage: Stage, metrics: serde_json::Value) {
        for s in stage.downstream() {
            self.completed.remove(s);
        }
        self.completed.insert(stage);
        self.metrics.insert(stage.to_string(), metrics);
        self.stage = Phase::Idle;
        self.progress = 1.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_enforced() {
        let mut s = PipelineStatus::default();
        let err = s.check(Stage::Cohort).unwrap_err().to_string();
        assert_eq!(err, "stage cohort requires etl");
        assert!(s.check(Stage::Ingest).is_ok());
        s.finish(Stage::Ingest, serde_json::json!({}));
        assert!(s.check(Stage::Etl).is_ok());
        assert!(s.check(Stage::Nlp).is_err());
    }

    #[test]
    fn rerun_invalidates_downstream() {
        let mut s = PipelineStatus::default();
        for st in [Stage::Ingest, Stage::Etl, Stage::Qa] {
            s.finish(st, serde_json::Value::Null);
        }
        s.finish(Stage::Ingest, serde_json::Value::Null);
        assert!(!s.completed.contains(&Stage::Etl));
        assert!(!s.completed.contains(&Stage::Qa));
    }

    #[test]
    fn persists() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = PipelineStatus::default();
        s.finish(Stage::Gen, serde_json::json!({"patients": 3}));
        s.save(dir.path()).unwrap();
        assert_eq!(PipelineStatus::load(dir.path()).unwrap(), s);
    }
}
