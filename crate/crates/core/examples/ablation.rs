//! Trains each ablated variant next to the full model.

mod common;

use idsnet::experiments::{ablation_csv, run_ablation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, target) = common::stations(1);
    let mut cfg = common::small_config();
    cfg.train.max_epoch = 2;
    cfg.transfer.finetune_max_epoch = 2;
    let rows = run_ablation(&candidates, &target, &cfg)?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
