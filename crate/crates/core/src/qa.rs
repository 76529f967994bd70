//! Record-count reconciliation between the raw and cdm namespaces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etl::MERGED_NOTES;
use crate::store::{record, Datamart, Namespace, NoteParentKind, RawNoteEntry};

pub const DEFAULT_LIMIT_PCT: f64 = 10.0;

record! {
    /// One comparison line: `difference = raw - cdm`, loss as a percentage of raw.
    pub struct QaRow in Results."qa_report" {
        pub comparison: String,
        pub raw_count: i64,
        pub cdm_count: i64,
        pub difference: i64,
        pub raw_lost_pct: f64,
    }
}

impl QaRow {
    pub fn new(comparison: impl Into<String>, raw_count: u64, cdm_count: u64) -> Result<Self> {
        let comparison = comparison.into();
        if cdm_count > raw_count {
            return Err(Error::Integrity(format!(
                "{comparison}: cdm has {cdm_count} rows but raw only {raw_count}"
            )));
        }
        let difference = raw_count - cdm_count;
        Ok(QaRow {
            comparison,
            raw_count: raw_count as i64,
            cdm_count: cdm_count as i64,
            difference: difference as i64,
            raw_lost_pct: lost_milli_pct(difference, raw_count) as f64 / 1000.0,
        })
    }

    /// The loss percentage formatted with exactly three decimals.
    pub fn lost_pct_display(&self) -> String {
        format_milli(lost_milli_pct(self.difference as u64, self.raw_count as u64))
    }
}

/// `100 * difference / raw` in thousandths of a percent, truncated.
pub fn lost_milli_pct(difference: u64, raw: u64) -> u64 {
    if raw == 0 {
        return 0;
    }
    (100_000u128 * difference as u128 / raw as u128) as u64
}

fn format_milli(milli: u64) -> String {
    format!("{}.{:03}", milli / 1000, milli % 1000)
}

/// A raw table compared against the cdm table it feeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub raw: String,
    pub cdm: String,
}

impl QaPair {
    pub fn new(raw: &str, cdm: &str) -> Self {
        QaPair {
            raw: raw.into(),
            cdm: cdm.into(),
        }
    }

    pub fn comparison(&self) -> String {
        format!("RAW.{} vs CDM.{}", self.raw, self.cdm)
    }

    /// The four table pairs of the reconciliation report, followed by notes
    /// (distinct raw note parents vs cdm note rows).
    pub fn defaults() -> Vec<QaPair> {
        vec![
            QaPair::new("demographics", "person"),
            QaPair::new("diagnoses", "condition_occurrence"),
            QaPair::new("encounters", "visit_occurrence"),
            QaPair::new("procedures", "procedure_occurrence"),
            QaPair::new(MERGED_NOTES, "note"),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub rows: Vec<QaRow>,
}

impl QaReport {
    pub fn row(&self, comparison: &str) -> Option<&QaRow> {
        self.rows.iter().find(|r| r.comparison == comparison)
    }
}

/// Raw-side count. `merged_notes` counts distinct `(parent_kind, parent_id)`
/// across both raw note tables.
fn raw_count(mart: &Datamart, table: &str) -> Result<u64> {
    if table == MERGED_NOTES {
        let mut parents = BTreeSet::new();
        for kind in [NoteParentKind::Encounter, NoteParentKind::Procedure] {
            for e in mart.records_from::<RawNoteEntry>(Namespace::Raw, kind.raw_table())? {
                parents.insert((e.parent_kind, e.parent_id));
            }
        }
        return Ok(parents.len() as u64);
    }
    Ok(mart.row_count(Namespace::Raw, table)? as u64)
}

/// Counts both sides of every pair.
pub fn reconcile(mart: &Datamart, pairs: &[QaPair]) -> Result<QaReport> {
    let rows = pairs
        .iter()
        .map(|p| {
            let raw = raw_count(mart, &p.raw)?;
            let cdm = mart.row_count(Namespace::Cdm, &p.cdm)? as u64;
            QaRow::new(p.comparison(), raw, cdm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QaReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub comparison: String,
    pub raw_lost_pct: f64,
    pub limit_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Checks every row against its limit (`DEFAULT_LIMIT_PCT` when unlisted).
pub fn assert_thresholds(report: &QaReport, limits: &BTreeMap<String, f64>) -> ThresholdOutcome {
    let violations: Vec<Violation> = report
        .rows
        .iter()
        .filter_map(|r| {
            let limit = limits.get(&r.comparison).copied().unwrap_or(DEFAULT_LIMIT_PCT);
            (r.raw_lost_pct > limit).then(|| Violation {
                comparison: r.comparison.clone(),
                raw_lost_pct: r.raw_lost_pct,
                limit_pct: limit,
            })
        })
        .collect();
    ThresholdOutcome {
        passed: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub const TEXT_HEADER: &str = "Comparison | RAW | CDM | Difference | RAW Lost (%)";

fn thousands(n: i64) -> String {
    let digits = n.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    if n < 0 {
        out.insert(0, '-');
    }
    out
}

pub fn render_report(report: &QaReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Text => {
            let mut out = String::new();
            writeln!(out, "{TEXT_HEADER}").unwrap();
            for r in &report.rows {
                writeln!(
                    out,
                    "{} | {} | {} | {} | {}",
                    r.comparison,
                    thousands(r.raw_count),
                    thousands(r.cdm_count),
                    thousands(r.difference),
                    r.lost_pct_display()
                )
                .unwrap();
            }
            Ok(out)
        }
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::CRLF)
                .from_writer(Vec::new());
            w.write_record(["Comparison", "RAW", "CDM", "Difference", "RAW Lost (%)"])?;
            for r in &report.rows {
                w.write_record([
                    r.comparison.clone(),
                    r.raw_count.to_string(),
                    r.cdm_count.to_string(),
                    r.difference.to_string(),
                    r.lost_pct_display(),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Counts published in the reconciliation table being reproduced.
    fn published() -> QaReport {
        QaReport {
            rows: vec![
                QaRow::new("RAW.demographics vs CDM.person", 13_604, 13_604).unwrap(),
                QaRow::new("RAW.diagnoses vs CDM.condition_occurrence", 1_911_650, 1_909_175).unwrap(),
                QaRow::new("RAW.encounters vs CDM.visit_occurrence", 1_987_791, 1_987_791).unwrap(),
                QaRow::new("RAW.procedures vs CDM.procedure_occurrence", 1_343_759, 1_214_388).unwrap(),
            ],
        }
    }

    #[test]
    fn procedure_loss_matches_published() {
        let r = QaRow::new("p", 1_343_759, 1_214_388).unwrap();
        assert_eq!(r.difference, 129_371);
        assert_eq!(r.lost_pct_display(), "9.627");
        assert!((r.raw_lost_pct - 9.627).abs() < 1e-12);
    }

    #[test]
    fn diagnosis_loss_matches_published() {
        let r = QaRow::new("d", 1_911_650, 1_909_175).unwrap();
        assert_eq!(r.difference, 2_475);
        assert_eq!(r.lost_pct_display(), "0.129");
    }

    #[test]
    fn lossless_and_degenerate_rows() {
        let r = QaRow::new("x", 13_604, 13_604).unwrap();
        assert_eq!((r.difference, r.lost_pct_display().as_str()), (0, "0.000"));
        let z = QaRow::new("z", 0, 0).unwrap();
        assert_eq!((z.difference, z.raw_lost_pct), (0, 0.0));
    }

    #[test]
    fn invented_rows_are_integrity_errors() {
        assert!(matches!(QaRow::new("x", 5, 6), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncates_to_three_decimals() {
        assert_eq!(lost_milli_pct(1, 800), 125);
        assert_eq!(lost_milli_pct(1, 1600), 62);
        assert_eq!(lost_milli_pct(2, 3), 66_666);
    }

    #[test]
    fn published_report_passes_default_limits() {
        let out = assert_thresholds(&published(), &BTreeMap::new());
        assert!(out.passed);
    }

    #[test]
    fn tight_limit_names_violating_row() {
        let mut limits = BTreeMap::new();
        limits.insert("RAW.procedures vs CDM.procedure_occurrence".to_string(), 5.0);
        let out = assert_thresholds(&published(), &limits);
        assert!(!out.passed);
        assert_eq!(out.violations.len(), 1);
        assert_eq!(
            out.violations[0].comparison,
            "RAW.procedures vs CDM.procedure_occurrence"
        );
    }

    #[test]
    fn empty_report_passes() {
        assert!(assert_thresholds(&QaReport::default(), &BTreeMap::new()).passed);
    }

    #[test]
    fn text_layout() {
        let text = render_report(&published(), ReportFormat::Text).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TEXT_HEADER);
        let cols: Vec<&str> = lines[0].split(" | ").collect();
        assert_eq!(cols, ["Comparison", "RAW", "CDM", "Difference", "RAW Lost (%)"]);
        assert_eq!(
            lines[4],
            "RAW.procedures vs CDM.procedure_occurrence | 1,343,759 | 1,214,388 | 129,371 | 9.627"
        );
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn json_round_trip() {
        let json = render_report(&published(), ReportFormat::Json).unwrap();
        let back: QaReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, published());
    }

    #[test]
    fn csv_header() {
        let csv = render_report(&published(), ReportFormat::Csv).unwrap();
        assert!(csv.starts_with("Comparison,RAW,CDM,Difference,RAW Lost (%)\r\n"));
        assert!(csv.contains(",129371,9.627"));
    }

    #[test]
    fn thousands_grouping() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(1_987_791), "1,987,791");
    }
}
