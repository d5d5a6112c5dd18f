//! Full few-shot run: pick a source, pretrain, probe the target and compare
//! transfer, fine-tuning and training on the target alone.

mod common;

use idsnet::transfer::run_transfer;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, target) = common::stations(1);
    let cfg = common::small_config();
    let run = run_transfer(&candidates, &target, &cfg)?;
    let d = run.report.decision;
    println!("source: {}", run.report.source);
    println!(
        "probe MAE {:.4} vs threshold {:.2}: {}",
        d.probe_mae,
        d.threshold,
        if d.fine_tune {
            "fine-tune"
        } else {
            "transfer as is"
        }
    );
    print!("{}", run.report.to_csv());
    Ok(())
}
