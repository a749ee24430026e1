//! Shared inputs for the criterion benchmarks in `benches/`.

use checkerlight_core::color::LinearImage;
use checkerlight_core::synth::textured_scene;

/// Square textured scene of side `n`.
pub fn scene(n: usize) -> LinearImage {
    textured_scene(n, n, 0.05, 0.8, 7)
}

/// Deterministic error vector in `[0, 20)` degrees.
pub fn errors(n: usize) -> Vec<f64> {
    let mut s = 0x9e37_79b9_7f4a_7c15u64;
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            20.0 * (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}
