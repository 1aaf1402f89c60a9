//! Fixtures shared by the benchmarks.

use ntml_core::synth::{apply_noise, generate};
use ntml_core::{GeneratorConfig, LabelNoiseMode, MultimodalDataset, NoiseConfig, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[rows, cols], 1.0, &mut rng)
}

/// Random labels in `0..classes`, drawn deterministically.
pub fn random_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let m = random_matrix(n, 1, seed);
    m.data()
        .iter()
        .map(|x| ((x.abs() * 1e6) as usize) % classes)
        .collect()
}

/// The standard noisy benchmark scaled down to `per_class` samples per
/// class.
pub fn noisy_benchmark(per_class: usize) -> MultimodalDataset {
    let mut data = generate(&GeneratorConfig {
        per_class,
        ..Default::default()
    })
    .expect("default generator config is valid");
    apply_noise(
        &mut data.train,
        &NoiseConfig {
            label_mode: LabelNoiseMode::Symmetric,
            label_rate: 0.6,
            correspondence_rate: 0.4,
            ..Default::default()
        },
    )
    .expect("rates are in range");
    data
}
