//! Small stations and a small model shared by the pipeline tests.

#![allow(dead_code)]

use idsnet::config::RunConfig;
use idsnet::data::{SplitSpec, StationSeries};
use idsnet::synth::{midnight, synth_generate, SynthProfile};

/// Ten-day candidates and a four-day target.
pub fn stations(seed: u64) -> (Vec<StationSeries>, StationSeries) {
    let profiles = [
        SynthProfile::new("near", 12.0, 0.3, 10.0),
        SynthProfile::new("far", 12.0, 0.9, 14.0),
    ];
    let candidates = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| synth_generate(seed + i as u64 + 1, 10, p).unwrap())
        .collect();
    let target = SynthProfile::new("target", 11.0, 0.3, 10.0).starting(midnight(2018, 7, 1));
    (candidates, synth_generate(seed + 50, 4, &target).unwrap())
}

pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.data.large_split = SplitSpec {
        train_len: 760,
        val_len: 100,
        test_len: 100,
    };
    cfg.pool.hidden_size = 4;
    cfg.pool.heads = 2;
    cfg.ensemble.channel_hidden = 4;
    cfg.model.head_hidden = 8;
    cfg.relieff.k_neighbors = 5;
    cfg.train.look_back = 8;
    cfg.train.max_epoch = 2;
    cfg.train.batch_size = 64;
    cfg.train.lr = 1e-3;
    cfg.transfer.finetune_max_epoch = 2;
    cfg.sensitivity.max_epoch = vec![1, 2];
    cfg.sensitivity.look_back = vec![4, 8];
    cfg.sensitivity.batch_size = vec![64, 128];
    cfg
}
