//! Deterministic inputs shared by the benchmarks.

use segan::dataset::{mix_at_snr, synth_clean, synth_noise, CleanKind, NoiseKind};
use segan::tensor::kernels::ConvGeometry;
use segan::tensor::Tensor;
use segan::{GeneratorConfig, Waveform};

/// One strided convolution layer: geometry plus long-side input, short-side
/// input and weights, all in f32.
pub struct ConvCase {
    pub geometry: ConvGeometry,
    pub long: Vec<f32>,
    pub short: Vec<f32>,
    pub weight: Vec<f32>,
}

impl ConvCase {
    pub fn new(batch: usize, long_len: usize, c_long: usize, c_short: usize) -> Self {
        let geometry = ConvGeometry::new(batch, long_len, c_long, c_short, 31, 2);
        Self {
            long: Tensor::<f32>::randn(&[batch * long_len * c_long], 1.0, 1).into_data(),
            short: Tensor::<f32>::randn(&[batch * geometry.short_len * c_short], 1.0, 2).into_data(),
            weight: Tensor::<f32>::randn(&[geometry.weight_len()], 0.02, 3).into_data(),
            geometry,
        }
    }
}

/// Representative layers of the reduced model at batch 16.
pub fn reduced_layers() -> Vec<(&'static str, ConvCase)> {
    vec![
        ("enc1_1024x1_to_16", ConvCase::new(16, 1024, 1, 16)),
        ("enc3_256x32_to_64", ConvCase::new(16, 256, 32, 64)),
        ("enc4_128x64_to_128", ConvCase::new(16, 128, 64, 128)),
    ]
}

/// Noisy and clean batches for a generator forward pass.
pub fn generator_batch(cfg: &GeneratorConfig, batch: usize) -> (Tensor<f32>, Tensor<f32>) {
    let noisy = Tensor::randn(&[batch, cfg.window, 1], 0.3, 4);
    let z = Tensor::randn(&[batch, cfg.bottleneck_len(), cfg.z_channels], 1.0, 5);
    (noisy, z)
}

/// Harmonic signal and its mixture with white noise at 5 dB.
pub fn noisy_utterance(seconds: f64) -> (Waveform, Waveform) {
    let clean = synth_clean(CleanKind::Vowel, 1, seconds, 16000).expect("valid duration");
    let noise = synth_noise(NoiseKind::White, 2, seconds, 16000).expect("valid duration");
    let noisy = mix_at_snr(&clean, &noise, 5.0).expect("equal lengths");
    (clean, noisy)
}
