mod common;

use idsnet::model::IdsNetModel;
use idsnet::pipeline::{model_spec, prepare_source};
use idsnet::train::{evaluate_loss, fit, history_csv, TrainConfig};
use idsnet::Error;

fn setup() -> (
    idsnet::config::RunConfig,
    idsnet::pipeline::PreparedStation,
    IdsNetModel,
) {
    let cfg = common::tiny_config();
    let (candidates, _) = common::stations(1);
    let station = prepare_source(&candidates[0], &cfg).unwrap();
    let model = IdsNetModel::new(model_spec(&cfg, station.series.n_features()), 4).unwrap();
    (cfg, station, model)
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let (cfg, station, model) = setup();
    let train = TrainConfig {
        max_epoch: 0,
        ..cfg.train.clone()
    };
    let out = fit(&model, station.train_data(), station.val_data(), &train).unwrap();
    assert_eq!(out.model, model);
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, None);
}

#[test]
fn same_seed_same_parameters() {
    let (cfg, station, model) = setup();
    let a = fit(&model, station.train_data(), station.val_data(), &cfg.train).unwrap();
    let b = fit(&model, station.train_data(), station.val_data(), &cfg.train).unwrap();
    assert_eq!(a.model, b.model);
    let mut other = cfg.train.clone();
    other.seed ^= 1;
    let c = fit(&model, station.train_data(), station.val_data(), &other).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn kept_model_is_the_best_validation_epoch() {
    let (mut cfg, station, model) = setup();
    cfg.train.max_epoch = 4;
    let out = fit(&model, station.train_data(), station.val_data(), &cfg.train).unwrap();
    let best = out
        .history
        .iter()
        .filter_map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    let last = out.history.last().unwrap().val_loss.unwrap();
    let kept = evaluate_loss(&out.model, station.val_data().unwrap()).unwrap();
    assert_eq!(kept, best);
    assert!(kept <= last);
    assert_eq!(out.history[out.best_epoch.unwrap()].val_loss, Some(best));
    let csv = history_csv(&out.history);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("epoch,train_loss,val_loss\n"));
}

#[test]
fn patience_stops_early() {
    let (mut cfg, station, model) = setup();
    cfg.train.max_epoch = 50;
    // Updates this small vanish in rounding, so validation never improves.
    cfg.train.lr = 1e-30;
    cfg.train.patience = Some(1);
    let out = fit(&model, station.train_data(), station.val_data(), &cfg.train).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.best_epoch, Some(0));
}

#[test]
fn training_reduces_the_loss() {
    let (mut cfg, station, model) = setup();
    cfg.train.max_epoch = 40;
    let before = evaluate_loss(&model, station.train_data()).unwrap();
    let out = fit(&model, station.train_data(), None, &cfg.train).unwrap();
    let after = evaluate_loss(&out.model, station.train_data()).unwrap();
    assert!(after < 0.1 * before, "{before} -> {after}");
}

#[test]
fn divergence_is_a_numeric_error() {
    let (mut cfg, station, model) = setup();
    cfg.train.lr = 1e200;
    cfg.train.max_epoch = 3;
    let err = fit(&model, station.train_data(), None, &cfg.train).unwrap_err();
    assert!(
        matches!(err, Error::NonFiniteLoss { .. } | Error::Numeric(_)),
        "{err}"
    );
    assert_eq!(err.exit_code(), 4);
}
