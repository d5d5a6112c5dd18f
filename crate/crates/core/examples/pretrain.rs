//! Trains the full model on one source station and reports test metrics.

mod common;

use idsnet::pipeline::{prepare_source, pretrain};
use idsnet::train::evaluate_model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, _) = common::stations(2);
    let cfg = common::small_config();
    let source = prepare_source(&candidates[0], &cfg)?;
    let fit = pretrain(&source, &cfg)?;
    for e in &fit.history {
        println!(
            "epoch {:>2}  train {:.5}  val {:.5}  ({:.1}s)",
            e.epoch,
            e.train_loss,
            e.val_loss.unwrap_or(f64::NAN),
            e.wall_secs
        );
    }
    let (m, _) = evaluate_model(&fit.model, &source.windows.test, &source.norm)?;
    println!("kept epoch {:?}", fit.best_epoch);
    println!(
        "test: mse {:.4} mae {:.4} rmse {:.4} r2 {:.4}",
        m.mse, m.mae, m.rmse, m.r2
    );
    Ok(())
}
