mod common;

use idsnet::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use idsnet::experiments::{ablation_csv, run_ablation, run_sensitivity, Ablation, Factor};
use idsnet::pipeline::{prepare_source, prepare_target, pretrain};
use idsnet::train::evaluate_model;
use idsnet::transfer::{probe_and_decide, run_transfer};
use idsnet::Error;

#[test]
fn transfer_reports_every_variant() {
    let cfg = common::tiny_config();
    let (candidates, target) = common::stations(1);
    let run = run_transfer(&candidates, &target, &cfg).unwrap();
    assert_eq!(run.report.source, "near");
    assert_eq!(run.report.mmd.len(), 2);
    assert!(run.report.direct.is_some() && run.report.fine_tuned.is_some());
    let d = run.report.decision;
    assert_eq!(d.fine_tune, d.probe_mae > d.threshold);
    let again = probe_and_decide(&run.pretrained.model, &run.target, &cfg.transfer).unwrap();
    assert_eq!(again, d);
    assert_eq!(run.report.to_csv().lines().count(), 4);
    // The target keeps the source's selected feature columns.
    assert_eq!(run.target.feature_names(), run.source.feature_names());
}

#[test]
fn probe_len_beyond_the_test_split_is_rejected() {
    let mut cfg = common::tiny_config();
    cfg.transfer.probe_len = 101;
    let (candidates, target) = common::stations(1);
    let err = run_transfer(&candidates, &target, &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn checkpoint_round_trip() {
    let cfg = common::tiny_config();
    let (candidates, _) = common::stations(2);
    let source = prepare_source(&candidates[0], &cfg).unwrap();
    let fit = pretrain(&source, &cfg).unwrap();
    let (before, _) = evaluate_model(&fit.model, &source.windows.test, &source.norm).unwrap();
    let ckpt = Checkpoint {
        config: cfg.clone(),
        model: fit.model.clone(),
        station: source.series.station_id.clone(),
        feature_names: source.feature_names().to_vec(),
        normalizer: source.norm.clone(),
        split: cfg.data.large_split,
        history: fit.history.clone(),
        digest: Some(before),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());

    let after = loaded.evaluate(&candidates[0]).unwrap();
    for (a, b) in [
        (after.mse, before.mse),
        (after.mae, before.mae),
        (after.rmse, before.rmse),
        (after.r2, before.r2),
    ] {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    let bytes = ckpt.to_bytes();
    let err = Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(_)) && err.exit_code() == 3,
        "{err}"
    );
    let marker = format!("\"version\":{CHECKPOINT_VERSION}");
    let at = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .expect("metadata names its version");
    let mut bumped = bytes.clone();
    bumped[at + marker.len() - 1] = b'9';
    let err = Checkpoint::from_bytes(&bumped).unwrap_err();
    assert!(err.to_string().contains("version 9"), "{err}");
}

#[test]
fn target_features_must_exist() {
    let cfg = common::tiny_config();
    let (_, target) = common::stations(1);
    let err = prepare_target(&target, &["wind_speed".to_string()], &cfg).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("wind_speed"));
}

#[test]
fn ablation_table_has_five_finite_rows() {
    let cfg = common::tiny_config();
    let (candidates, target) = common::stations(1);
    let rows = run_ablation(&candidates, &target, &cfg).unwrap();
    let variants: Vec<Ablation> = rows.iter().map(|r| r.variant).collect();
    assert_eq!(variants, Ablation::ALL);
    for r in &rows {
        assert!(r.best_val_loss.is_some_and(f64::is_finite));
        assert!([r.large.mse, r.large.r2, r.small.mse, r.small.r2]
            .iter()
            .all(|v| v.is_finite()));
    }
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().last().unwrap().starts_with("IDS-Net,"));
}

#[test]
fn sensitivity_reports_one_spread_per_factor() {
    let cfg = common::tiny_config();
    let (candidates, target) = common::stations(1);
    let report = run_sensitivity(&candidates, &target, &cfg).unwrap();
    assert_eq!(report.runs.len(), 6);
    assert_eq!(report.std.keys().copied().collect::<Vec<_>>(), Factor::ALL);
    assert!(report
        .std
        .values()
        .flatten()
        .all(|s| s.is_finite() && *s >= 0.0));
    // The base setting appears in every sweep and is trained once.
    let base: Vec<_> = report
        .runs
        .iter()
        .filter(|r| match r.factor {
            Factor::MaxEpoch => r.value == 2,
            Factor::LookBack => r.value == 8,
            Factor::BatchSize => r.value == 64,
        })
        .map(|r| r.metrics)
        .collect();
    assert_eq!(base.len(), 3);
    assert!(base.iter().all(|m| *m == base[0]));
    assert_eq!(report.to_csv().lines().next(), Some("metric,ME,LW,BS"));
}
