//! Trials, synthetic generation, on-disk manifests and subject-wise splits.

mod manifest;
mod split;
mod synth;
mod trial;

pub use manifest::{
    load_dataset, DatasetManifest, DeclaredShapes, Provenance, TrialRecord, MANIFEST_FILE,
};
pub use split::{subject_split, SubjectSplit, DEFAULT_TEST_FRACTION};
pub use synth::{
    generate_synthetic, generate_trials, shuffle_labels, trial_plan, DataDims, SignalLayout,
    SynthConfig, SyntheticGenerator, MAX_NOISE,
};
pub use trial::{Trial, MAX_SUBJECTS};
