#![allow(dead_code)]

use spectraforge_core::simulate::{synth_sample, SynthConfig};
use spectraforge_tensornet::network::mirrored_skips;
use spectraforge_tensornet::{Activation, NetworkConfig};
use spectraforge_training::*;

/// 32×32×8 inputs paired with 8×8×12 ground truth.
pub fn small_synth() -> SynthConfig {
    SynthConfig {
        input_size: 32,
        gt_bands: 12,
        ..SynthConfig::tiny()
    }
}

pub fn small_network() -> NetworkConfig {
    NetworkConfig {
        input: [32, 32, 8],
        output: [8, 8, 12],
        encoder_levels: 3,
        encoder_channels: vec![8, 8, 16, 16],
        decoder_levels: 2,
        decoder_channels: vec![16, 16, 12],
        skip_map: mirrored_skips(2),
        activation: Activation::LeakyRelu,
        output_activation: Activation::Sigmoid,
    }
}

pub fn small_config(stage: Stage) -> TrainConfig {
    TrainConfig {
        network: small_network(),
        epochs: 3,
        seed: 11,
        ..TrainConfig::tiny(stage)
    }
}

pub fn small_dataset(n: usize) -> Dataset {
    let cfg = small_synth();
    let samples = (0..n)
        .map(|i| {
            let s = synth_sample(&cfg, 500 + i as u64).unwrap();
            Sample {
                id: format!("s{i:03}"),
                input: s.input,
                gt: s.gt,
                seg: Some(s.roots),
            }
        })
        .collect();
    Dataset::new(samples).unwrap()
}

pub fn ids(data: &Dataset) -> Vec<String> {
    data.samples().iter().map(|s| s.id.clone()).collect()
}
