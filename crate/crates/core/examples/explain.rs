//! Prints the learned extractor weights, gate openings and fusion balance.

mod common;

use idsnet::pipeline::{prepare_source, pretrain};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (candidates, _) = common::stations(6);
    let cfg = common::small_config();
    let source = prepare_source(&candidates[0], &cfg)?;
    let fit = pretrain(&source, &cfg)?;
    print!("{}", fit.model.explain()?.to_text());
    Ok(())
}
