//! Saves a trained model, loads it back and re-evaluates it.

mod common;

use idsnet::checkpoint::Checkpoint;
use idsnet::pipeline::{prepare_source, pretrain};
use idsnet::train::evaluate_model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, _) = common::stations(4);
    let cfg = common::small_config();
    let source = prepare_source(&candidates[0], &cfg)?;
    let fit = pretrain(&source, &cfg)?;
    let (metrics, _) = evaluate_model(&fit.model, &source.windows.test, &source.norm)?;

    let ckpt = Checkpoint {
        config: cfg.clone(),
        model: fit.model,
        station: source.series.station_id.clone(),
        feature_names: source.feature_names().to_vec(),
        normalizer: source.norm.clone(),
        split: cfg.data.large_split,
        history: fit.history,
        digest: Some(metrics),
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path)?;
    println!("wrote {} bytes", std::fs::metadata(&path)?.len());

    let again = Checkpoint::load(&path)?.evaluate(&candidates[0])?;
    println!("saved  r2 {:.12}", metrics.r2);
    println!("loaded r2 {:.12}", again.r2);
    Ok(())
}
