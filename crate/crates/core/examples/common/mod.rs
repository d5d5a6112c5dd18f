//! Small stations and a small model so every example finishes in seconds.

#![allow(dead_code)]

use idsnet::config::RunConfig;
use idsnet::data::{SplitSpec, StationSeries};
use idsnet::synth::{midnight, synth_generate, SynthProfile};

/// Two 30-day candidates, one close to the target's weather and one far
/// from it, and a four-day target starting a month later.
pub fn stations(seed: u64) -> (Vec<StationSeries>, StationSeries) {
    let candidates = [
        SynthProfile::new("clear_site", 12.0, 0.3, 10.0),
        SynthProfile::new("cloudy_site", 12.0, 0.9, 14.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, p)| synth_generate(seed + i as u64 + 1, 30, p).expect("synthetic station"))
    .collect();
    let target = SynthProfile::new("new_plant", 11.0, 0.3, 10.0).starting(midnight(2018, 7, 1));
    (
        candidates,
        synth_generate(seed + 50, 4, &target).expect("synthetic station"),
    )
}

pub fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.data.large_split = SplitSpec {
        train_len: 2200,
        val_len: 300,
        test_len: 300,
    };
    cfg.pool.hidden_size = 8;
    cfg.pool.heads = 2;
    cfg.ensemble.channel_hidden = 8;
    cfg.model.head_hidden = 16;
    cfg.train.look_back = 12;
    cfg.train.max_epoch = 4;
    cfg.train.batch_size = 64;
    cfg.transfer.finetune_max_epoch = 4;
    cfg.sensitivity.max_epoch = vec![2, 4];
    cfg.sensitivity.look_back = vec![6, 12];
    cfg.sensitivity.batch_size = vec![64, 128];
    cfg
}
