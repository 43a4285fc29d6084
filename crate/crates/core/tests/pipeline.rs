//! End-to-end use of the library on synthetic overconfident predictions.

use confcal_core::calibration::{fit_novelty_percentiles, fit_novelty_scaling, fit_temperature};
use confcal_core::ensemble::ensemble_of_calibrated;
use confcal_core::metrics::{evaluate, evaluate_by_group};
use confcal_core::predictions::FileFormat;
use confcal_core::report::{build_report, Metric};
use confcal_core::{Calibrator, GroupTag, PredictionRecord, PredictionSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Margin-6 logits everywhere; accuracy 90% on familiar rows and 60% on
/// novel ones, with novelty scores to match. Labels depend only on
/// `label_seed`, so sets sharing it describe the same rows.
fn member(label_seed: u64, seed: u64) -> PredictionSet {
    let mut labels = ChaCha8Rng::seed_from_u64(label_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let groups = [
        (GroupTag::Train, 300),
        (GroupTag::Val, 300),
        (GroupTag::FamiliarTest, 400),
        (GroupTag::NovelTest, 400),
    ];
    for (group, n) in groups {
        for i in 0..n {
            // val mixes both regimes so that novelty scaling has signal
            let novel = group == GroupTag::NovelTest || (group == GroupTag::Val && i % 2 == 1);
            let accuracy = if novel { 0.6 } else { 0.9 };
            let label = labels.random_range(0..3);
            let predicted = if rng.random_bool(accuracy) {
                label
            } else {
                (label + rng.random_range(1..3)) % 3
            };
            let mut logits = vec![0.0; 3];
            logits[predicted] = 6.0;
            let base = if novel { 0.8 } else { 0.2 };
            records.push(PredictionRecord {
                id: format!("{}-{i}", group.as_str()),
                logits,
                label: Some(label),
                group,
                novelty: Some(base + rng.random_range(-0.1..0.1)),
            });
        }
    }
    PredictionSet::new(3, records).unwrap()
}

fn overconfident(seed: u64) -> PredictionSet {
    member(seed, seed)
}

fn group_nll(set: &PredictionSet, cal: &Calibrator, group: GroupTag) -> f64 {
    evaluate(&cal.apply(&set.filter_by_group(group)).unwrap()).unwrap().nll
}

#[test]
fn temperature_scaling_softens_an_overconfident_model() {
    let set = overconfident(1);
    let cal = fit_temperature(&set.filter_by_group(GroupTag::Val)).unwrap();
    let Calibrator::Fixed { t } = cal else { panic!("expected a fixed temperature") };
    assert!(t > 1.0, "fitted T = {t}");
    let identity = Calibrator::fixed(1.0).unwrap();
    for group in [GroupTag::FamiliarTest, GroupTag::NovelTest] {
        assert!(group_nll(&set, &cal, group) < group_nll(&set, &identity, group));
    }
}

#[test]
fn novelty_scaling_raises_temperature_on_novel_rows() {
    let set = overconfident(2);
    let train: Vec<f64> = set
        .filter_by_group(GroupTag::Train)
        .records()
        .iter()
        .filter_map(|r| r.novelty)
        .collect();
    let percentiles = fit_novelty_percentiles(&train).unwrap();
    let cal = fit_novelty_scaling(&set.filter_by_group(GroupTag::Val), percentiles).unwrap();
    let Calibrator::NoveltyLinear { t1, .. } = cal else { panic!("expected novelty scaling") };
    assert!(t1 > 0.0);
    assert!(cal.temperature(Some(0.8)).unwrap() > cal.temperature(Some(0.2)).unwrap());

    let fixed = fit_temperature(&set.filter_by_group(GroupTag::Val)).unwrap();
    assert!(group_nll(&set, &cal, GroupTag::NovelTest) < group_nll(&set, &fixed, GroupTag::NovelTest));
}

#[test]
fn ensemble_and_report_tie_together() {
    let members: Vec<(PredictionSet, PredictionSet)> = (10..13)
        .map(|seed| {
            let set = member(0, seed);
            let val = set.filter_by_group(GroupTag::Val);
            let test = set.filter(|r| matches!(r.group, GroupTag::FamiliarTest | GroupTag::NovelTest));
            (test, val)
        })
        .collect();
    let (probs, cals) = ensemble_of_calibrated(&members).unwrap();
    assert_eq!(cals.len(), 3);
    assert_eq!(probs.len(), 800);

    let baseline = evaluate_by_group(&members[0].0.to_probabilities()).unwrap();
    let ensemble = evaluate_by_group(&probs).unwrap();
    let table = build_report("Single", &baseline, &[("Ensemble".to_string(), ensemble)]).unwrap();
    for group in [GroupTag::FamiliarTest, GroupTag::NovelTest] {
        let r = table.rounded("Ensemble", group, Metric::Nll).unwrap();
        assert!(r > 0, "{group:?} NLL reduction {r}");
    }
    assert!(table.to_markdown().contains("| Ensemble |"));
}

#[test]
fn saved_predictions_evaluate_identically() {
    let set = overconfident(3);
    let dir = tempfile::TempDir::new().unwrap();
    for (name, format) in [("p.csv", FileFormat::Csv), ("p.json", FileFormat::Json)] {
        let path = dir.path().join(name);
        set.save(&path, format).unwrap();
        let back = PredictionSet::load(&path, format).unwrap();
        assert_eq!(
            evaluate_by_group(&back.to_probabilities()).unwrap(),
            evaluate_by_group(&set.to_probabilities()).unwrap()
        );
    }
}
