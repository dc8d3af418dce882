use fallsense::evaluation::{
    confusion, rates, render_report, rmse_by_group, ConfusionCounts, ReportBundle, SegmentPrediction,
    TrajectoryTrace, TrialOutcome,
};
use fallsense::sisfall::{SubjectId, TrialId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counts every (decision, label) combination directly.
fn brute_force(d: &[bool], l: &[bool], m: &[bool]) -> (f64, f64, usize) {
    let count = |pd: bool, pl: bool| (0..d.len()).filter(|&i| m[i] && d[i] == pd && l[i] == pl).count();
    let (tp, fp, tn, fnn) = (count(true, true), count(true, false), count(false, false), count(false, true));
    let tpr = if tp + fnn == 0 { f64::NAN } else { tp as f64 / (tp + fnn) as f64 };
    let tnr = if tn + fp == 0 { f64::NAN } else { tn as f64 / (tn + fp) as f64 };
    (tpr, tnr, tp + fp + tn + fnn)
}

fn same(a: Option<f64>, b: f64) -> bool {
    match a {
        None => b.is_nan(),
        Some(v) => v == b,
    }
}

#[test]
fn rates_match_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.random_range(0..200);
        let p_fall = rng.random_range(0.0..1.0);
        let l: Vec<bool> = (0..n).map(|_| rng.random_bool(p_fall)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.9)).collect();
        let c = confusion(&d, &l, Some(&m)).unwrap();
        let r = rates(&c);
        let (tpr, tnr, total) = brute_force(&d, &l, &m);
        assert_eq!(c.total() as usize, total);
        assert!(same(r.tpr, tpr) && same(r.tnr, tnr));
    }
}

proptest! {
    #[test]
    fn confusion_total_counts_unmasked(v in proptest::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 0..300)) {
        let d: Vec<bool> = v.iter().map(|x| x.0).collect();
        let l: Vec<bool> = v.iter().map(|x| x.1).collect();
        let m: Vec<bool> = v.iter().map(|x| x.2).collect();
        let c = confusion(&d, &l, Some(&m)).unwrap();
        prop_assert_eq!(c.total() as usize, m.iter().filter(|x| **x).count());
        let r = rates(&c);
        for x in [r.tpr, r.tnr].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn heatmap_global_equals_pooled_rmse(
        groups in proptest::collection::vec((1u8..=15, 1u8..=5, proptest::collection::vec(-50.0..50.0f64, 1..40)), 1..12)
    ) {
        let preds: Vec<SegmentPrediction> = groups
            .iter()
            .map(|(code, subj, errs)| SegmentPrediction {
                id: TrialId::from_filename(&format!("F{code:02}_SA{subj:02}_R01")).unwrap(),
                targets: (0..errs.len()).rev().map(|k| k as f64 * 5.0).collect(),
                predicted: errs.iter().enumerate().map(|(k, e)| (errs.len() - 1 - k) as f64 * 5.0 + e).collect(),
            })
            .collect();
        let h = rmse_by_group(&[], &preds).unwrap();
        let all: Vec<f64> = groups.iter().flat_map(|g| g.2.iter().copied()).collect();
        let direct = (all.iter().map(|e| e * e).sum::<f64>() / all.len() as f64).sqrt();
        prop_assert!((h.global_rmse.unwrap() - direct).abs() <= 1e-9 * direct.max(1.0));
        prop_assert!(h.cells.iter().flatten().flatten().all(|c| *c >= 0.0));
    }
}

fn sample_bundle() -> ReportBundle {
    let id = |s: &str| TrialId::from_filename(s).unwrap();
    ReportBundle {
        subjects: ["SA01", "SA02", "SE01"].iter().map(|s| SubjectId::new(s).unwrap()).collect(),
        outcomes: vec![
            TrialOutcome {
                id: id("F01_SA01_R01"),
                counts: ConfusionCounts { tp: 80, fp: 2, tn: 900, fn_: 20 },
            },
            TrialOutcome {
                id: id("F05_SA02_R03"),
                counts: ConfusionCounts { tp: 50, fp: 0, tn: 500, fn_: 0 },
            },
            TrialOutcome {
                id: id("D07_SE01_R01"),
                counts: ConfusionCounts { tp: 0, fp: 30, tn: 970, fn_: 0 },
            },
        ],
        impact: vec![SegmentPrediction {
            id: id("F01_SA01_R05"),
            predicted: vec![300.0, 200.0, 150.0, 140.0],
            targets: vec![15.0, 10.0, 5.0, 0.0].iter().map(|v| v * 20.0).collect(),
        }],
        trajectories: vec![TrajectoryTrace {
            id: id("F01_SA01_R05"),
            t_ms: vec![0.0, 5.0, 10.0, 15.0],
            truth_ms: vec![15.0, 10.0, 5.0, 0.0],
            predicted_ms: vec![14.0, 9.0, 7.0, 3.0],
        }],
    }
}

#[test]
fn report_files_summary_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let written = render_report(&sample_bundle(), dir.path()).unwrap();
    let names: Vec<String> = written
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for want in [
        "fall_tpr.csv",
        "fall_tnr.csv",
        "adl_tnr.csv",
        "rmse_heatmap.csv",
        "trajectory_F01_SA01_R05.csv",
        "summary.json",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
    for p in written.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")) {
        let text = std::fs::read_to_string(p).unwrap();
        roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    for key in ["fall_tpr_avg", "fall_tnr_avg", "adl_tnr_avg", "tti_rmse_ms"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(summary["fall_tpr_avg"], serde_json::json!(0.9));
    assert_eq!(summary["adl_tnr_avg"], serde_json::json!(0.97));

    let tpr = std::fs::read_to_string(dir.path().join("fall_tpr.csv")).unwrap();
    let se01 = tpr.lines().find(|l| l.starts_with("SE01")).unwrap();
    assert!(se01.split(',').skip(1).all(|c| c.is_empty()), "elderly fall row must be blank: {se01}");
}

#[test]
fn empty_bundle_gives_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    render_report(&ReportBundle::default(), dir.path()).unwrap();
    for f in ["fall_tpr.csv", "fall_tnr.csv", "adl_tnr.csv", "rmse_heatmap.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
        assert!(text.starts_with("subject,"));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["fall_tpr_avg"].is_null() && summary["tti_rmse_ms"].is_null());
}

#[test]
fn report_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let wa = render_report(&sample_bundle(), a.path()).unwrap();
    render_report(&sample_bundle(), b.path()).unwrap();
    for p in wa {
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}
