//! Single JSON configuration for every stage.
//!
//! Values resolve in order: command-line flags, `CAREMART_*` environment
//! variables, the config file, then built-in defaults. Unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::GenerateOptions;
use crate::error::{Error, Result};
use crate::etl::{EtlConfig, EtlRules};
use crate::fixtures;
use crate::nlp::{self, CompiledDictionary, ManualLinks, NlpRunConfig};
use crate::qa::QaPair;
use crate::synth::GenConfig;
use crate::vocab::{RuleSet, VocabularyStore};

pub const DEFAULT_CONFIG_FILE: &str = "caremart.json";
pub const DEFAULT_PORT: u16 = 8017;
pub const ENV_PREFIX: &str = "CAREMART_";

/// Vocabulary CSVs. The bundled fixture is used when both are unset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabPaths {
    pub concept: Option<PathBuf>,
    pub concept_relationship: Option<PathBuf>,
}

/// Manual-mapping rule files. Unset entries use the bundled rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulePaths {
    pub gender: Option<PathBuf>,
    pub race: Option<PathBuf>,
    pub ethnicity: Option<PathBuf>,
    pub enc_type: Option<PathBuf>,
    pub note_type: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryPaths {
    /// `surface_term,cui,concept_id,category` CSV; bundled dictionary when unset.
    pub terms: Option<PathBuf>,
    /// `cui,concept_id` sidecar for terms without a concept id.
    pub manual_links: Option<PathBuf>,
    /// Extra categorized terms merged into the dictionary.
    pub custom_categories: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    /// Allowed loss in percent per comparison label; others use the default limit.
    pub limits: BTreeMap<String, f64>,
    /// Comparisons to run; the standard set when unset.
    pub pairs: Option<Vec<QaPair>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Datamart root directory.
    pub store: PathBuf,
    /// Where `gen` writes and `ingest` reads raw CSVs. Defaults to `<store>/extract`.
    pub extract_dir: Option<PathBuf>,
    pub port: u16,
    pub generator: GenConfig,
    pub vocab: VocabPaths,
    pub rules: RulePaths,
    pub etl: EtlConfig,
    pub dictionary: DictionaryPaths,
    pub nlp: NlpRunConfig,
    pub qa: QaConfig,
    pub cohort: GenerateOptions,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store: PathBuf::from("caremart-store"),
            extract_dir: None,
            port: DEFAULT_PORT,
            generator: GenConfig::default(),
            vocab: VocabPaths::default(),
            rules: RulePaths::default(),
            etl: EtlConfig::default(),
            dictionary: DictionaryPaths::default(),
            nlp: NlpRunConfig::default(),
            qa: QaConfig::default(),
            cohort: GenerateOptions::default(),
        }
    }
}

/// Values given on the command line; they win over everything else.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub port: Option<u16>,
    pub seed: Option<u64>,
}

impl Config {
    /// Strictly parses a config document. Errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("key `{path}`: {}", e.inner()))
        })
    }

    /// Reads the file if it exists. A missing default file yields defaults; a
    /// missing explicit file is an error.
    pub fn load_file(path: Option<&Path>) -> Result<Self> {
        let (path, explicit) = match path {
            Some(p) => (p.to_owned(), true),
            None => (PathBuf::from(DEFAULT_CONFIG_FILE), false),
        };
        match fs::read_to_string(&path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if !explicit && e.kind() == std::io::ErrorKind::NotFound => Ok(Config::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Applies `CAREMART_STORE`, `CAREMART_PORT` and `CAREMART_SEED` from `env`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<()> {
        let var = |k: &str| env(&format!("{ENV_PREFIX}{k}"));
        if let Some(s) = var("STORE") {
            self.store = PathBuf::from(s);
        }
        if let Some(p) = var("PORT") {
            self.port = p
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_PREFIX}PORT: {p:?} is not a port number")))?;
        }
        if let Some(s) = var("SEED") {
            self.generator.seed = s
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_PREFIX}SEED: {s:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(s) = &o.store {
            self.store = s.clone();
        }
        if let Some(p) = o.port {
            self.port = p;
        }
        if let Some(s) = o.seed {
            self.generator.seed = s;
        }
    }

    /// File, then process environment, then flags.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = Self::load_file(path)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.apply_overrides(overrides);
        cfg.nlp.validate()?;
        Ok(cfg)
    }

    pub fn extract_dir(&self) -> PathBuf {
        self.extract_dir.clone().unwrap_or_else(|| self.store.join("extract"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn vocabulary(&self) -> Result<VocabularyStore> {
        match (&self.vocab.concept, &self.vocab.concept_relationship) {
            (None, None) => Ok(fixtures::vocabulary()),
            (Some(c), Some(r)) => VocabularyStore::load(c, r),
            _ => Err(Error::Config(
                "vocab.concept and vocab.concept_relationship must be set together".into(),
            )),
        }
    }

    pub fn etl_rules(&self) -> Result<EtlRules> {
        let pick = |path: &Option<PathBuf>, field: &str| -> Result<RuleSet> {
            match path {
                Some(p) => RuleSet::load(p),
                None => Ok(fixtures::rule_set(field)),
            }
        };
        Ok(EtlRules {
            gender: pick(&self.rules.gender, "gender")?,
            race: pick(&self.rules.race, "race")?,
            ethnicity: pick(&self.rules.ethnicity, "ethnicity")?,
            enc_type: pick(&self.rules.enc_type, "enc_type")?,
            note_type: pick(&self.rules.note_type, "parent_kind")?,
        })
    }

    /// Compiles the dictionary with manual links and custom categories applied.
    pub fn dictionary(&self, vocab: &VocabularyStore) -> Result<CompiledDictionary> {
        let entries = match &self.dictionary.terms {
            Some(p) => nlp::load_dictionary(p)?,
            None => fixtures::dictionary_entries(),
        };
        let links = match &self.dictionary.manual_links {
            Some(p) => ManualLinks::load(p)?,
            None => ManualLinks::default(),
        };
        let mut dict = nlp::compile_dictionary(entries, &links, Some(vocab))?;
        if let Some(p) = &self.dictionary.custom_categories {
            let ext = nlp::load_custom_categories(p)?;
            dict.extend(ext.entries, Some(vocab))?;
        }
        Ok(dict)
    }

    pub fn qa_pairs(&self) -> Vec<QaPair> {
        self.qa.pairs.clone().unwrap_or_else(QaPair::defaults)
    }
}
