//! Fixtures shared by the benchmarks.

use modfuse_core::config::RunConfig;
use modfuse_core::encoders::{ModalityEncoder, UnimodalClassifier};
use modfuse_core::nn::ParamRegistry;
use modfuse_core::{Modality, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: impl Into<Vec<usize>>, seed: u64) -> Tensor {
    Tensor::normal(shape, 0.0, 1.0, &mut rng(seed)).expect("valid shape")
}

/// Small model over moderately sized inputs.
pub fn config() -> RunConfig {
    RunConfig::from_pairs([
        ("data.eeg_channels", "30"),
        ("data.eeg_samples", "500"),
        ("data.frames", "4"),
        ("data.height", "32"),
        ("data.width", "32"),
        ("data.mel_bins", "32"),
        ("data.time_frames", "64"),
        ("model.d_model", "32"),
        ("model.blocks", "2"),
        ("model.heads", "4"),
        ("model.d_ff", "64"),
        ("vision.patch", "8"),
        ("audio.patch_freq", "8"),
        ("audio.patch_time", "8"),
        ("eeg.kernel", "25"),
        ("eeg.stride", "25"),
    ])
    .expect("valid bench config")
}

pub fn input_shape(cfg: &RunConfig, m: Modality) -> Vec<usize> {
    let d = cfg.dims();
    match m {
        Modality::Vision => vec![d.frames, d.height, d.width],
        Modality::Audio => vec![d.mel_bins, d.time_frames],
        Modality::Eeg => vec![d.eeg_channels, d.eeg_samples],
    }
}

/// An initialized encoder plus one random input for it.
pub struct EncoderFixture {
    pub encoder: ModalityEncoder,
    pub registry: ParamRegistry,
    pub input: Tensor,
}

pub fn encoder(m: Modality) -> EncoderFixture {
    let cfg = config();
    let encoder = cfg.encoder(m).expect("valid encoder");
    let mut registry = ParamRegistry::new();
    UnimodalClassifier::new(encoder.clone())
        .init(&mut registry, &mut rng(1))
        .expect("init");
    let input = random(input_shape(&cfg, m), 2);
    EncoderFixture {
        encoder,
        registry,
        input,
    }
}
