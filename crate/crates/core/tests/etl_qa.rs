mod common;

use std::collections::{BTreeMap, BTreeSet};

use caremart::etl::{self, EtlConfig, EtlRules};
use caremart::fixtures;
use caremart::qa::{self, QaPair, ReportFormat, TEXT_HEADER};
use caremart::store::{Datamart, Person, ProcedureOccurrence, RawDemographics};
use caremart::synth::{self, GenConfig};
use proptest::prelude::*;

fn etl_mart(gen: &GenConfig) -> (Datamart, etl::EtlReport) {
    let (bundle, _) = synth::generate(gen).unwrap();
    let mut mart = Datamart::in_memory();
    synth::write_raw(&bundle, &mut mart).unwrap();
    let report = etl::run_etl(
        &mut mart,
        &fixtures::vocabulary(),
        &EtlRules::fixture(),
        &EtlConfig::default(),
    )
    .unwrap();
    (mart, report)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_raw_row_is_loaded_or_excluded(seed in any::<u64>(), n in 20usize..80) {
        let (mart, report) = etl_mart(&common::small_gen(n, seed));
        for t in &report.transforms {
            prop_assert!(t.conserves(), "{}: {} != {} + {}", t.cdm_table, t.raw_count, t.cdm_count, t.excluded.len());
        }
        prop_assert!(mart.orphaned_events().unwrap().is_empty());
        let raw: BTreeSet<i64> = mart.records::<RawDemographics>().unwrap().iter().map(|d| d.patient_id).collect();
        let cdm: BTreeSet<i64> = mart.records::<Person>().unwrap().iter().map(|p| p.person_id).collect();
        prop_assert_eq!(raw, cdm);
    }

    #[test]
    fn qa_loss_tracks_configured_fraction(seed in any::<u64>(), f in 0.0f64..0.3) {
        let gen = GenConfig { unmappable_procedure_fraction: f, ..common::small_gen(60, seed) };
        let (mart, _) = etl_mart(&gen);
        let report = qa::reconcile(&mart, &QaPair::defaults()).unwrap();
        let row = report.row("RAW.procedures vs CDM.procedure_occurrence").unwrap();
        let n = row.raw_count as f64;
        prop_assert!((row.raw_lost_pct / 100.0 - f).abs() <= 1.0 / n, "{} vs {f}", row.raw_lost_pct);
        for r in &report.rows {
            prop_assert_eq!(r.difference, r.raw_count - r.cdm_count);
        }
    }

    #[test]
    fn losing_more_rows_never_lowers_reported_loss(seed in any::<u64>(), drop_a in 0usize..40, extra in 0usize..40) {
        let (mut mart, _) = etl_mart(&common::small_gen(40, seed));
        let procs: Vec<ProcedureOccurrence> = mart.records().unwrap();
        let label = "RAW.procedures vs CDM.procedure_occurrence";
        let mut loss = |keep: usize| {
            mart.replace(procs.iter().take(keep).cloned()).unwrap();
            qa::reconcile(&mart, &QaPair::defaults()).unwrap().row(label).unwrap().raw_lost_pct
        };
        let a = procs.len().saturating_sub(drop_a);
        let b = a.saturating_sub(extra);
        prop_assert!(loss(b) >= loss(a));
    }

    #[test]
    fn raising_a_limit_never_adds_violations(seed in any::<u64>(), lo in 0.0f64..20.0, bump in 0.0f64..20.0) {
        let (mart, _) = etl_mart(&common::small_gen(40, seed));
        let report = qa::reconcile(&mart, &QaPair::defaults()).unwrap();
        let limits = |pct: f64| -> BTreeMap<String, f64> {
            report.rows.iter().map(|r| (r.comparison.clone(), pct)).collect()
        };
        let strict = qa::assert_thresholds(&report, &limits(lo));
        let loose = qa::assert_thresholds(&report, &limits(lo + bump));
        prop_assert!(loose.violations.len() <= strict.violations.len());
        prop_assert!(!strict.passed || loose.passed);
    }
}

#[test]
fn default_extract_qa_report() {
    let (mart, _) = etl_mart(&GenConfig::default());
    let report = qa::reconcile(&mart, &QaPair::defaults()).unwrap();
    let text = qa::render_report(&report, ReportFormat::Text).unwrap();
    assert_eq!(text.lines().next().unwrap(), TEXT_HEADER);
    assert_eq!(report.row("RAW.demographics vs CDM.person").unwrap().difference, 0);
    assert_eq!(
        report.row("RAW.encounters vs CDM.visit_occurrence").unwrap().difference,
        0
    );
    let json = qa::render_report(&report, ReportFormat::Json).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(parsed.is_array() || parsed.is_object());
    let csv = qa::render_report(&report, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
}

#[test]
fn published_loss_renders_with_three_decimals() {
    let row = qa::QaRow::new("RAW.procedures vs CDM.procedure_occurrence", 1_343_759, 1_214_388).unwrap();
    assert_eq!(row.difference, 129_371);
    assert_eq!(row.lost_pct_display(), "9.627");
    let row = qa::QaRow::new("RAW.diagnoses vs CDM.condition_occurrence", 1_911_650, 1_909_175).unwrap();
    assert_eq!(row.lost_pct_display(), "0.129");
}

#[test]
fn encounter_for_unknown_patient_is_rejected() {
    let (mut bundle, _) = synth::generate(&common::small_gen(10, 1)).unwrap();
    bundle.encounters[0].patient_id = 1;
    let mut mart = Datamart::in_memory();
    synth::write_raw(&bundle, &mut mart).unwrap();
    let err = etl::run_etl(
        &mut mart,
        &fixtures::vocabulary(),
        &EtlRules::fixture(),
        &EtlConfig::default(),
    );
    assert!(err.is_err());
}
