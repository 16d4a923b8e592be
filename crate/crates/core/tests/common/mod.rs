//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::sync::OnceLock;

use haarscan::boosting::{Label, Sample};
use haarscan::cascade::{train_cascade, Cascade, CascadeTrainConfig};
use haarscan::dataset::{synth_dataset, SynthConfig, SynthDataset};
use haarscan::features::BaseWindow;
use haarscan::imaging::GrayImage;

pub const TRAIN_SEED: u64 = 7;

pub fn positives(images: &[GrayImage]) -> Vec<Sample<f64>> {
    images
        .iter()
        .map(|p| Sample::from_crop(p, BaseWindow::default(), Label::Positive, 1.0).unwrap())
        .collect()
}

pub fn training_data() -> &'static SynthDataset {
    static DATA: OnceLock<SynthDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        synth_dataset(&SynthConfig {
            seed: TRAIN_SEED,
            scenes: 0,
            ..Default::default()
        })
    })
}

/// Held-out data from an unrelated seed.
pub fn held_out() -> &'static SynthDataset {
    static DATA: OnceLock<SynthDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        synth_dataset(&SynthConfig {
            seed: TRAIN_SEED + 1000,
            ..Default::default()
        })
    })
}

/// Cascade trained on the synthetic task with default settings.
pub fn default_cascade() -> &'static Cascade<f64> {
    static C: OnceLock<Cascade<f64>> = OnceLock::new();
    C.get_or_init(|| {
        let data = training_data();
        let cfg = CascadeTrainConfig {
            seed: TRAIN_SEED,
            ..Default::default()
        };
        train_cascade(&positives(&data.positives), &data.negatives, &cfg).unwrap()
    })
}

/// Dark textured ground with a little pixel noise.
pub fn plain_ground(w: usize, h: usize, seed: u64) -> GrayImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(w, h, |_, _| rng.gen_range(40..60))
}
