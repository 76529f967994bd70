use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dictionary::{CompiledDictionary, Mention};
use crate::error::{Error, Result};
use crate::store::{Datamart, Namespace, Note, NoteNlp, Record};

/// How many characters of context the snippet keeps on each side of a match.
pub const SNIPPET_RADIUS: usize = 40;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SPOOL_FILE: &str = "note_nlp.spool.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlpRunConfig {
    /// Notes per batch; at least 1.
    pub batch_size: usize,
    pub worker_count: usize,
    /// Upper bound on note text held by in-flight batches.
    pub memory_budget_mb: usize,
    /// Write a checkpoint after this many completed batches.
    pub checkpoint_every: usize,
    pub nlp_system: String,
    /// Run the negation pass that sets `term_exists`.
    pub negation: bool,
    /// Defaults to the latest note date so reruns are byte-identical.
    pub nlp_date: Option<NaiveDate>,
    /// Directory for checkpoint and spool files. No checkpointing when unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Discard an unreadable checkpoint and start over instead of failing.
    pub clean_restart: bool,
    /// Stop after this many batches of the current invocation, as if killed.
    #[serde(skip)]
    pub stop_after_batches: Option<usize>,
}

impl Default for NlpRunConfig {
    fn default() -> Self {
        NlpRunConfig {
            batch_size: 500,
            worker_count: 4,
            memory_budget_mb: 512,
            checkpoint_every: 4,
            nlp_system: "caremart-dict 0.1".into(),
            negation: true,
            nlp_date: None,
            checkpoint_dir: None,
            clean_restart: false,
            stop_after_batches: None,
        }
    }
}

impl NlpRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("nlp.batch_size must be at least 1".into()));
        }
        if self.worker_count == 0 {
            return Err(Error::Config("nlp.worker_count must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("nlp.checkpoint_every must be at least 1".into()));
        }
        if self.memory_budget_mb == 0 {
            return Err(Error::Config("nlp.memory_budget_mb must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpMetrics {
    pub notes_processed: u64,
    pub concepts_emitted: u64,
    pub elapsed_seconds: f64,
    pub notes_per_second: f64,
    /// Index of the last batch covered by a checkpoint.
    pub last_checkpoint: Option<u64>,
}

/// On-disk resume marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Zero-based index of the last fully spooled batch.
    pub last_completed_batch: u64,
    /// Rows in the spool that belong to completed batches.
    pub row_watermark: u64,
}

#[derive(Debug, Clone)]
pub struct NlpOutput {
    /// All rows, including those recovered from a checkpoint spool.
    pub rows: Vec<NoteNlp>,
    pub metrics: NlpMetrics,
    /// False when the run stopped early through `stop_after_batches`.
    pub complete: bool,
}

fn snippet(text: &str, m: &Mention) -> String {
    let start = text[..m.byte_start]
        .char_indices()
        .rev()
        .nth(SNIPPET_RADIUS - 1)
        .map_or(0, |(b, _)| b);
    let end = text[m.byte_end..]
        .char_indices()
        .nth(SNIPPET_RADIUS)
        .map_or(text.len(), |(b, _)| m.byte_end + b);
    text[start..end].to_owned()
}

/// Rows for one note, with `note_nlp_id` left at 0.
fn process_note(note: &Note, dict: &CompiledDictionary, cfg: &NlpRunConfig, nlp_date: NaiveDate) -> Vec<NoteNlp> {
    dict.extract(&note.note_text)
        .into_iter()
        .map(|m| {
            let entry = dict.entry(m.entry);
            NoteNlp {
                note_nlp_id: 0,
                note_id: note.note_id,
                section_concept_id: 0,
                snippet: snippet(&note.note_text, &m),
                offset: m.char_offset as i64,
                lexical_variant: m.matched_text.clone(),
                note_nlp_concept_id: entry.concept_id,
                note_nlp_source_concept_id: 0,
                nlp_system: cfg.nlp_system.clone(),
                nlp_date,
                term_exists: !(cfg.negation && m.negated),
                term_temporal: None,
                term_modifiers: entry.category.clone().filter(|c| !c.is_empty()),
            }
        })
        .collect()
}

fn checkpoint_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(CHECKPOINT_FILE), dir.join(SPOOL_FILE))
}

fn read_checkpoint(dir: &Path) -> Result<Option<Checkpoint>> {
    let (cp, _) = checkpoint_paths(dir);
    match fs::read_to_string(&cp) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Checkpoint(format!("{} is corrupt: {e}", cp.display()))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(cp, e)),
    }
}

fn write_checkpoint(dir: &Path, cp: &Checkpoint) -> Result<()> {
    let (path, _) = checkpoint_paths(dir);
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec(cp)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn read_spool(path: &Path) -> Result<Vec<NoteNlp>> {
    let mut mart = Datamart::in_memory();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    mart.load_csv_from(Namespace::Cdm, NoteNlp::TABLE, file)?;
    mart.records()
}

struct Spool {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Spool {
    /// Creates a fresh spool holding `rows`.
    fn create(path: &Path, rows: &[NoteNlp]) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(file);
        writer.write_record(NoteNlp::columns().iter().map(|c| c.name))?;
        let mut spool = Spool {
            path: path.to_owned(),
            writer,
        };
        spool.append(rows)?;
        spool.flush()?;
        Ok(spool)
    }

    fn append(&mut self, rows: &[NoteNlp]) -> Result<()> {
        for r in rows {
            let row = r.to_row();
            self.writer.write_record(row.iter().map(|v| v.render().into_owned()))?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.writer.get_ref().sync_data().map_err(|e| Error::io(&self.path, e))
    }
}

/// Recovers completed rows from a checkpoint directory. Returns the next batch
/// to run and the rows already emitted.
fn resume(dir: &Path, clean_restart: bool, total_batches: usize) -> Result<(usize, Vec<NoteNlp>, Option<u64>)> {
    let (_, spool_path) = checkpoint_paths(dir);
    let cp = match read_checkpoint(dir) {
        Ok(cp) => cp,
        Err(Error::Checkpoint(msg)) if clean_restart => {
            log::warn!("{msg}; restarting from scratch");
            None
        }
        Err(e) => return Err(e),
    };
    let Some(cp) = cp else {
        return Ok((0, Vec::new(), None));
    };
    let recovered = read_spool(&spool_path).and_then(|mut rows| {
        let watermark = cp.row_watermark as usize;
        if rows.len() < watermark || cp.last_completed_batch as usize >= total_batches {
            return Err(Error::Checkpoint(format!(
                "checkpoint at batch {} with {} rows does not match the spool ({} rows) or the note table ({} batches)",
                cp.last_completed_batch,
                watermark,
                rows.len(),
                total_batches
            )));
        }
        rows.truncate(watermark);
        Ok(rows)
    });
    match recovered {
        Ok(rows) => Ok((
            cp.last_completed_batch as usize + 1,
            rows,
            Some(cp.last_completed_batch),
        )),
        Err(e) if clean_restart => {
            log::warn!("{e}; restarting from scratch");
            Ok((0, Vec::new(), None))
        }
        Err(Error::Checkpoint(m)) => Err(Error::Checkpoint(m)),
        Err(e) => Err(Error::Checkpoint(format!("spool unreadable: {e}"))),
    }
}

/// How many batches may be in flight at once given the memory budget.
fn wave_size(batches: &[&[Note]], cfg: &NlpRunConfig) -> usize {
    let budget = cfg.memory_budget_mb.saturating_mul(1 << 20);
    let largest = batches
        .iter()
        .map(|b| b.iter().map(|n| n.note_text.len()).sum::<usize>())
        .max()
        .unwrap_or(0);
    // text plus extracted rows, tokens and snippets
    let per_batch = largest.saturating_mul(8).max(1);
    (budget / per_batch).clamp(1, cfg.worker_count * 2)
}

/// Runs extraction over `notes`. Output is ordered by note id, then offset,
/// then dictionary order, and is identical for every worker count.
pub fn run_pipeline(notes: &[Note], dict: &CompiledDictionary, cfg: &NlpRunConfig) -> Result<NlpOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let mut sorted: Vec<&Note> = notes.iter().collect();
    sorted.sort_by_key(|n| n.note_id);
    let owned: Vec<Note> = sorted.into_iter().cloned().collect();
    let batches: Vec<&[Note]> = owned.chunks(cfg.batch_size).collect();
    let nlp_date = cfg
        .nlp_date
        .or_else(|| notes.iter().map(|n| n.note_date).max())
        .unwrap_or_default();

    let (mut next_batch, mut rows, mut last_checkpoint) = match &cfg.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            resume(dir, cfg.clean_restart, batches.len())?
        }
        None => (0, Vec::new(), None),
    };
    let first_batch = next_batch;
    let mut spool = match &cfg.checkpoint_dir {
        Some(dir) => Some(Spool::create(&checkpoint_paths(dir).1, &rows)?),
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| Error::Config(format!("cannot start NLP workers: {e}")))?;
    let wave = wave_size(&batches, cfg);
    let stop_at = cfg
        .stop_after_batches
        .map(|n| (first_batch + n).min(batches.len()))
        .unwrap_or(batches.len());
    let mut notes_processed: u64 = 0;

    while next_batch < stop_at {
        // waves never straddle a checkpoint boundary
        let to_boundary = cfg.checkpoint_every - (next_batch % cfg.checkpoint_every);
        let end = (next_batch + wave.min(to_boundary)).min(stop_at);
        let produced: Vec<Vec<NoteNlp>> = pool.install(|| {
            batches[next_batch..end]
                .par_iter()
                .map(|batch| {
                    batch
                        .iter()
                        .flat_map(|n| process_note(n, dict, cfg, nlp_date))
                        .collect()
                })
                .collect()
        });
        for (i, mut batch_rows) in produced.into_iter().enumerate() {
            for r in batch_rows.iter_mut() {
                r.note_nlp_id = rows.len() as i64 + 1;
                rows.push(r.clone());
            }
            if let Some(s) = spool.as_mut() {
                s.append(&batch_rows)?;
            }
            notes_processed += batches[next_batch + i].len() as u64;
        }
        next_batch = end;
        if let (Some(dir), Some(s)) = (&cfg.checkpoint_dir, spool.as_mut()) {
            if next_batch % cfg.checkpoint_every == 0 || next_batch == batches.len() {
                s.flush()?;
                let cp = Checkpoint {
                    last_completed_batch: next_batch as u64 - 1,
                    row_watermark: rows.len() as u64,
                };
                write_checkpoint(dir, &cp)?;
                last_checkpoint = Some(cp.last_completed_batch);
            }
        }
        log::info!("nlp: {}/{} batches, {} rows", next_batch, batches.len(), rows.len());
    }
    if let Some(s) = spool.as_mut() {
        s.flush()?;
    }

    let elapsed = started.elapsed().as_secs_f64();
    let metrics = NlpMetrics {
        notes_processed,
        concepts_emitted: rows.len() as u64,
        elapsed_seconds: elapsed,
        notes_per_second: if elapsed > 0.0 {
            notes_processed as f64 / elapsed
        } else {
            0.0
        },
        last_checkpoint,
    };
    Ok(NlpOutput {
        rows,
        metrics,
        complete: next_batch == batches.len(),
    })
}

/// Runs the pipeline over `cdm.note` and replaces `cdm.note_nlp` when the run
/// completes. A partial run leaves the table untouched.
pub fn run_nlp(mart: &mut Datamart, dict: &CompiledDictionary, cfg: &NlpRunConfig) -> Result<NlpOutput> {
    let notes: Vec<Note> = mart.records()?;
    let out = run_pipeline(&notes, dict, cfg)?;
    if out.complete {
        mart.replace(out.rows.iter().cloned())?;
    }
    Ok(out)
}

/// Distinct lexical variants of a concept with their mention counts, sorted
/// by variant. Comparison is case-sensitive.
pub fn distinct_variants_in(rows: &[NoteNlp], concept_id: i64) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.note_nlp_concept_id == concept_id) {
        *counts.entry(r.lexical_variant.as_str()).or_default() += 1;
    }
    counts.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

pub fn distinct_variants(mart: &Datamart, concept_id: i64) -> Result<Vec<(String, u64)>> {
    Ok(distinct_variants_in(&mart.records()?, concept_id))
}

/// Persons with at least one mention of the concept, negated or not.
pub fn patients_with_concept_in(rows: &[NoteNlp], notes: &[Note], concept_id: i64) -> BTreeSet<i64> {
    let owner: HashMap<i64, i64> = notes.iter().map(|n| (n.note_id, n.person_id)).collect();
    rows.iter()
        .filter(|r| r.note_nlp_concept_id == concept_id)
        .filter_map(|r| owner.get(&r.note_id).copied())
        .collect()
}

pub fn patients_with_concept(mart: &Datamart, concept_id: i64) -> Result<BTreeSet<i64>> {
    let rows: Vec<NoteNlp> = mart.records()?;
    let notes: Vec<Note> = mart.records()?;
    Ok(patients_with_concept_in(&rows, &notes, concept_id))
}

/// Writes the metrics as one JSON line.
pub fn write_metrics(out: &mut impl Write, metrics: &NlpMetrics) -> Result<()> {
    serde_json::to_writer(&mut *out, metrics)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{compile_dictionary, DictionaryEntry, ManualLinks};

    fn dict() -> CompiledDictionary {
        let e = |t: &str, id| DictionaryEntry {
            surface_term: t.into(),
            cui: "C1".into(),
            concept_id: id,
            category: None,
        };
        compile_dictionary(vec![e("fall", 436583), e("stroke", 1)], &ManualLinks::default(), None).unwrap()
    }

    fn note(id: i64, person: i64, text: &str) -> Note {
        Note {
            note_id: id,
            person_id: person,
            note_date: NaiveDate::from_ymd_opt(2020, 1, id as u32 % 28 + 1).unwrap(),
            note_type_concept_id: 44814640,
            note_title: "t".into(),
            note_text: text.into(),
            visit_occurrence_id: None,
        }
    }

    fn corpus(n: i64) -> Vec<Note> {
        (1..=n)
            .rev()
            .map(|i| {
                let t = match i % 3 {
                    0 => "Fall at home. No stroke.",
                    1 => "Routine visit",
                    _ => "History of stroke then a fall",
                };
                note(i, i % 7, t)
            })
            .collect()
    }

    #[test]
    fn rows_are_ordered_and_numbered() {
        let out = run_pipeline(
            &corpus(30),
            &dict(),
            &NlpRunConfig {
                batch_size: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.complete);
        let keys: Vec<(i64, i64)> = out.rows.iter().map(|r| (r.note_id, r.offset)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(out.rows.iter().enumerate().all(|(i, r)| r.note_nlp_id == i as i64 + 1));
        assert_eq!(out.metrics.notes_processed, 30);
    }

    #[test]
    fn negation_sets_term_exists() {
        let out = run_pipeline(
            &[note(1, 1, "Fall at home. No stroke.")],
            &dict(),
            &NlpRunConfig::default(),
        )
        .unwrap();
        assert!(out.rows[0].term_exists);
        assert!(!out.rows[1].term_exists);
        let cfg = NlpRunConfig {
            negation: false,
            ..Default::default()
        };
        let out = run_pipeline(&[note(1, 1, "Fall at home. No stroke.")], &dict(), &cfg).unwrap();
        assert!(out.rows[1].term_exists);
    }

    #[test]
    fn snippet_is_bounded() {
        let text = format!("{}fall{}", "x ".repeat(50), " y".repeat(50));
        let out = run_pipeline(&[note(1, 1, &text)], &dict(), &NlpRunConfig::default()).unwrap();
        let s = &out.rows[0].snippet;
        assert_eq!(s.chars().count(), 40 + 4 + 40);
        assert!(s.contains("fall"));
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let notes = corpus(101);
        let base = run_pipeline(
            &notes,
            &dict(),
            &NlpRunConfig {
                batch_size: 3,
                worker_count: 1,
                ..Default::default()
            },
        )
        .unwrap();
        for w in [2, 4, 8] {
            let cfg = NlpRunConfig {
                batch_size: 3,
                worker_count: w,
                ..Default::default()
            };
            assert_eq!(run_pipeline(&notes, &dict(), &cfg).unwrap().rows, base.rows);
        }
    }

    #[test]
    fn kill_and_resume_reproduces_rows() {
        let notes = corpus(50);
        let full = run_pipeline(
            &notes,
            &dict(),
            &NlpRunConfig {
                batch_size: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = NlpRunConfig {
            batch_size: 3,
            checkpoint_every: 2,
            checkpoint_dir: Some(dir.path().to_owned()),
            stop_after_batches: Some(5),
            ..Default::default()
        };
        let partial = run_pipeline(&notes, &dict(), &cfg).unwrap();
        assert!(!partial.complete);
        assert_eq!(partial.metrics.last_checkpoint, Some(3));
        let resumed = run_pipeline(
            &notes,
            &dict(),
            &NlpRunConfig {
                stop_after_batches: None,
                ..cfg
            },
        )
        .unwrap();
        assert!(resumed.complete);
        assert_eq!(resumed.rows, full.rows);
    }

    #[test]
    fn corrupt_checkpoint_requires_clean_restart() {
        let notes = corpus(10);
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(CHECKPOINT_FILE), "{not json").unwrap();
        let cfg = NlpRunConfig {
            checkpoint_dir: Some(dir.path().to_owned()),
            ..Default::default()
        };
        assert!(matches!(run_pipeline(&notes, &dict(), &cfg), Err(Error::Checkpoint(_))));
        let out = run_pipeline(
            &notes,
            &dict(),
            &NlpRunConfig {
                clean_restart: true,
                ..cfg
            },
        )
        .unwrap();
        assert!(out.complete);
    }

    #[test]
    fn variant_and_patient_queries() {
        let notes = vec![
            note(1, 10, "fall and Fall"),
            note(2, 11, "no fall"),
            note(3, 12, "stroke"),
        ];
        let out = run_pipeline(&notes, &dict(), &NlpRunConfig::default()).unwrap();
        assert_eq!(
            distinct_variants_in(&out.rows, 436583),
            vec![("Fall".to_string(), 1), ("fall".to_string(), 2)]
        );
        assert!(distinct_variants_in(&out.rows, 999).is_empty());
        let p = patients_with_concept_in(&out.rows, &notes, 436583);
        assert_eq!(p.into_iter().collect::<Vec<_>>(), vec![10, 11]);
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let cfg = NlpRunConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(run_pipeline(&[], &dict(), &cfg).is_err());
    }
}
