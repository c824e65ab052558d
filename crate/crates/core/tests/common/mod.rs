#![allow(dead_code)]

pub mod gradients;
pub mod invariants;

use modfuse_core::config::RunConfig;
use modfuse_core::data::{generate_trials, subject_split, SignalLayout, SubjectSplit};
use modfuse_core::Trial;

/// Small enough that a full pretrain or finetune takes well under a second.
pub const TINY: &str = "
synth.subjects = 1
synth.trials_per_subject = 100
data.eeg_channels = 8
data.eeg_samples = 100
data.frames = 2
data.height = 16
data.width = 16
data.mel_bins = 8
data.time_frames = 16
model.d_model = 16
model.blocks = 1
model.heads = 2
model.d_ff = 32
vision.patch = 8
audio.patch_freq = 4
audio.patch_time = 8
eeg.kernel = 11
eeg.stride = 10
fusion.d_fuse = 16
fusion.heads = 2
fusion.hidden = 32
pretrain.epochs = 10
finetune.epochs = 10
";

pub fn tiny() -> RunConfig {
    RunConfig::parse(TINY, "tiny").unwrap()
}

/// Every modality carries a disjoint part of the label.
pub fn partitioned(trials: u32, informativeness: f32, seed: u64) -> RunConfig {
    let mut c = tiny().with_seed(seed);
    c.synth.trials_per_subject = trials;
    c.synth.layout = SignalLayout::Partitioned;
    c.synth.informativeness = [informativeness; 3];
    c
}

pub fn dataset(cfg: &RunConfig, require_all: bool) -> (Vec<Trial>, SubjectSplit) {
    let trials = generate_trials(&cfg.synth_config()).unwrap();
    let split = subject_split(&trials, cfg.test_fraction, cfg.split_seed(), require_all)
        .unwrap()
        .remove(&1)
        .unwrap();
    (trials, split)
}
