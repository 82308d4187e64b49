#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skd_core::data::{synthetic_gaussian, LabeledImageDataset};
use skd_core::optim::LrSchedule;
use skd_core::train::{build_network, Method, Trainer, TrainingConfig};

pub const MODEL: &str = "micro-resnet-3block";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_logits(rng: &mut ChaCha8Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Small 4-class synthetic set on 8x8 images.
pub fn small_data(seed: u64) -> LabeledImageDataset {
    synthetic_gaussian(4, 64, 32, 8, seed)
}

/// Short constant-rate run on the micro model.
pub fn small_config(method: Method, epochs: usize) -> TrainingConfig {
    let mut c = TrainingConfig::desk(method);
    c.epochs = epochs;
    c.schedule = LrSchedule::constant(0.05);
    c.batch.batch_size = 16;
    c.batch.shuffle_seed = 3;
    c.seed = 11;
    c
}

pub fn trainer(config: TrainingConfig, num_classes: usize) -> Trainer {
    let net = build_network(MODEL, num_classes, 3, &config).unwrap();
    Trainer::new(net, config).unwrap()
}
