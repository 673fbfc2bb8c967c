//! Shared inputs for the criterion benchmarks under `benches/`.

use recogtrf::synth::{generate, SynthConfig, SynthDataset};

/// A synthetic study of `duration_s` seconds at 128 Hz with two subjects.
pub fn study(duration_s: f64) -> SynthDataset {
    generate(&SynthConfig {
        seed: 1,
        n_subjects: 2,
        n_sensors: 8,
        duration_s,
        ..SynthConfig::default()
    })
    .expect("benchmark study")
}
