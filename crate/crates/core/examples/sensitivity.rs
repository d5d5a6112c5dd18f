//! Sweeps epochs, look-back and batch size one at a time and reports how much
//! each moves the target metrics.

mod common;

use idsnet::experiments::run_sensitivity;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, target) = common::stations(1);
    let cfg = common::small_config();
    let report = run_sensitivity(&candidates, &target, &cfg)?;
    print!("{}", report.runs_csv());
    println!();
    println!("standard deviation across each sweep:");
    print!("{}", report.to_csv());
    Ok(())
}
