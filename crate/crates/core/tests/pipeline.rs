use std::collections::HashSet;

use survcal::audit::{
    audit_csv_rows, build_fold_curves, emit_audit, finalize, run_audit, run_recalibration, split_fold, synthetic, AuditOptions,
    Format, Metadata,
};
use survcal::audit::ingest::{DatasetBundle, FoldPredictions, Payload, PredictionKind, PredictionRow};
use survcal::controls::permute_predictions;
use survcal::metrics::benjamini_hochberg;
use survcal::recalibrate::{PlattWeighting, RecalMethod};
use survcal::synth::{generate, inject_miscalibration, GeneratorConfig};

fn cohort(n: usize, seed: u64) -> survcal::synth::SyntheticCohort {
    generate(&GeneratorConfig { n_patients: n, seed, ..GeneratorConfig::default() }).unwrap()
}

#[test]
fn permutation_golden_seed_42() {
    assert_eq!(permute_predictions(&[0usize, 1, 2, 3, 4], 42), vec![2, 1, 0, 4, 3]);
}

#[test]
fn folds_are_disjoint_and_training_excludes_validation() {
    let c = cohort(600, 1);
    let b = synthetic::risk_bundle(&c, "d", "m");
    let mut seen = HashSet::new();
    for f in b.predictions.folds() {
        let (val, train) = split_fold(&b, f);
        let val_ids: HashSet<&str> = val.iter().map(|(r, _)| r.patient_id.as_str()).collect();
        assert!(train.iter().all(|r| !val_ids.contains(r.patient_id.as_str())));
        assert_eq!(val.len() + train.len(), b.records.len());
        for id in val_ids {
            assert!(seen.insert(id.to_string()));
        }
    }
    assert_eq!(seen.len(), b.records.len());
}

#[test]
fn other_folds_predictions_do_not_leak() {
    let c = cohort(800, 2);
    let b = synthetic::risk_bundle(&c, "d", "m");
    let mut changed = b.clone();
    for row in changed.predictions.rows.iter_mut().filter(|r| r.fold == 1) {
        if let Payload::Risk(x) = &mut row.payload {
            *x = -3.0 * *x + 1.0;
        }
    }
    let opts = AuditOptions { bh_family: survcal::audit::BhFamily::ModelDataset, ..AuditOptions::default() };
    let a = run_audit(&[b], &opts).unwrap();
    let z = run_audit(&[changed], &opts).unwrap();
    for (x, y) in a.rows.iter().zip(&z.rows).filter(|(x, _)| x.fold != 1) {
        assert_eq!(x.p_raw(), y.p_raw());
        assert_eq!(x.c_index, y.c_index);
        assert_eq!(x.ibs, y.ibs);
    }
}

#[test]
fn explicit_curves_reproduce_risk_path_exactly() {
    let c = cohort(700, 3);
    let risk = synthetic::risk_bundle(&c, "d", "m");
    let opts = AuditOptions::default();
    let mut rows = Vec::new();
    for f in risk.predictions.folds() {
        let fc = build_fold_curves(&risk, f, &opts).unwrap();
        rows.extend(fc.curves.iter().map(|cv| PredictionRow {
            patient_id: cv.patient_id.clone(),
            fold: f,
            payload: Payload::Curve { grid: cv.grid().to_vec(), probs: cv.probs().to_vec() },
        }));
    }
    let explicit = DatasetBundle {
        dataset: "d".into(),
        records: risk.records.clone(),
        predictions: FoldPredictions { model_name: "m".into(), kind: PredictionKind::ExplicitCurve, rows },
    };
    let a = run_audit(&[risk], &opts).unwrap();
    let b = run_audit(&[explicit], &opts).unwrap();
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.p_raw(), y.p_raw());
        assert_eq!(x.ibs, y.ibs);
        assert_eq!(x.c_index, y.c_index);
        assert_eq!(x.d_cal, y.d_cal);
    }
}

#[test]
fn bh_decisions_replay_from_reported_p_values() {
    let c = cohort(1200, 4);
    let bad = inject_miscalibration(&c.true_curves, 2.5).unwrap();
    let bundles = [synthetic::risk_bundle(&c, "d", "good"), synthetic::curve_bundle(&c, &bad, "d", "bad")];
    let opts = AuditOptions::default();
    let rep = run_audit(&bundles, &opts).unwrap();
    let tested: Vec<_> = rep.rows.iter().filter(|r| r.p_raw().is_some()).collect();
    let p: Vec<f64> = tested.iter().map(|r| r.p_raw().unwrap()).collect();
    let replay = benjamini_hochberg(&p, opts.fdr).unwrap();
    for (r, &rej) in tested.iter().zip(&replay.rejected) {
        assert_eq!(r.bh_rejected, Some(rej));
    }
    assert_eq!(rep.bh.len(), 1);
    assert_eq!(rep.bh[0].decision.rejected, replay.rejected);
}

#[test]
fn csv_has_one_row_per_test() {
    let c = cohort(500, 5);
    let rep = run_audit(&[synthetic::risk_bundle(&c, "d", "m")], &AuditOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_audit(&rep, dir.path(), &[Format::Csv, Format::Json]).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("audit_report.csv")).unwrap();
    assert_eq!(rdr.records().count(), rep.rows.len());
    assert_eq!(audit_csv_rows(&rep.rows).len(), rep.rows.len());
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit_report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), rep.rows.len());
    assert_eq!(json["schema_version"], "survcal.audit/1");
}

#[test]
fn empty_report_is_valid_json() {
    let opts = AuditOptions::default();
    let rep = finalize(Vec::new(), &opts, Metadata::from_options(&opts)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_audit(&rep, dir.path(), &[Format::Json, Format::Csv]).unwrap();
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("audit_report.json")).unwrap()).unwrap();
    assert!(json["rows"].as_array().unwrap().is_empty());
    let mut rdr = csv::Reader::from_path(dir.path().join("audit_report.csv")).unwrap();
    assert_eq!(rdr.records().count(), 0);
}

#[test]
fn recalibration_never_fits_on_evaluated_patients() {
    let c = cohort(900, 6);
    let bad = inject_miscalibration(&c.true_curves, 2.0).unwrap();
    let b = synthetic::curve_bundle(&c, &bad, "d", "m");
    for method in [RecalMethod::Platt, RecalMethod::Isotonic] {
        for w in [PlattWeighting::ExcludeCensored, PlattWeighting::Ipcw] {
            let rep = run_recalibration(&b, method, w, &AuditOptions::default()).unwrap();
            assert!(rep.rows.iter().all(|r| r.leakage_free && r.n_fit > 0));
        }
    }
}

#[test]
fn recalibration_none_is_identity() {
    let c = cohort(900, 7);
    let b = synthetic::risk_bundle(&c, "d", "m");
    let rep = run_recalibration(&b, RecalMethod::None, PlattWeighting::ExcludeCensored, &AuditOptions::default()).unwrap();
    for r in &rep.rows {
        assert_eq!(r.p_before.map(f64::to_bits), r.p_after.map(f64::to_bits));
        assert_eq!(r.ibs_before.map(f64::to_bits), r.ibs_after.map(f64::to_bits));
        assert_eq!(r.c_index_before.map(f64::to_bits), r.c_index_after.map(f64::to_bits));
    }
    assert_eq!(rep.failures_before, rep.failures_after);
}
