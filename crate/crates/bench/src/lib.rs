//! Shared inputs for the stage benchmarks.

use mrnr::{generate, Experiment, GroundTruth, SynthConfig};

/// The default synthetic experiment used by every benchmark.
pub fn default_experiment() -> (Experiment, GroundTruth) {
    generate(&SynthConfig::default()).expect("default synthetic config is valid")
}
