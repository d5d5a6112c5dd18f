//! Ranks candidate source stations by MMD² to the target's daily profiles.

mod common;

use idsnet::preprocess::select_source;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, target) = common::stations(11);
    let cfg = common::small_config();
    let sel = select_source(&candidates, &target, &cfg.mmd)?;
    println!("kernel bandwidths: {:?}", sel.bandwidths);
    for (id, mmd2) in &sel.table {
        let mark = if *id == sel.selected {
            "  <- selected"
        } else {
            ""
        };
        println!("{id:<12} mmd² = {mmd2:.6}{mark}");
    }
    Ok(())
}
