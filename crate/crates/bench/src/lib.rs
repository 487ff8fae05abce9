//! Fixtures shared by the kernel benchmarks.

use sembcs::synth::{generate, SynthConfig};
use sembcs::{ImageTensor, RunConfig};

/// Desk-sized synthetic image.
pub fn desk_image(seed: u64) -> ImageTensor {
    generate(&SynthConfig::default(), 1, seed)
        .expect("default synth config is valid")
        .remove(0)
        .image
}

pub fn desk_config() -> RunConfig {
    RunConfig::desk()
}
