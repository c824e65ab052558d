//! Per-modality feature extractors and the stage-1 classification head.
//!
//! Every encoder tokenizes its input, prepends a learned class token, runs a
//! pre-norm transformer stack and returns the final class-token state as the
//! pooled feature.

mod audio;
mod backbone;
mod eeg;
mod patch;
mod vision;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use audio::{AudioEncoder, AudioEncoderConfig};
pub(crate) use backbone::embedding as backbone_embedding;
pub use backbone::TransformerConfig;
pub use eeg::{EegEncoder, EegEncoderConfig};
pub use patch::{patch_index, patchify, unpatchify};
pub use vision::{VisionEncoder, VisionEncoderConfig};

use crate::autodiff::{Tape, Var};
use crate::data::Trial;
use crate::error::{Error, Result};
use crate::modality::{Modality, NUM_CLASSES};
use crate::nn::{BoundParams, Linear, ParamRegistry};
use crate::tensor::Tensor;

/// Output of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct ModalityFeature {
    pub modality: Modality,
    /// `[d_model]`
    pub pooled: Var,
    /// `[tokens, d_model]`, class token first.
    pub tokens: Var,
}

#[derive(Clone, Debug)]
pub enum ModalityEncoder {
    Vision(VisionEncoder),
    Audio(AudioEncoder),
    Eeg(EegEncoder),
}

impl ModalityEncoder {
    pub fn modality(&self) -> Modality {
        match self {
            ModalityEncoder::Vision(_) => Modality::Vision,
            ModalityEncoder::Audio(_) => Modality::Audio,
            ModalityEncoder::Eeg(_) => Modality::Eeg,
        }
    }

    pub fn d_model(&self) -> usize {
        self.transformer().d_model
    }

    pub fn transformer(&self) -> &TransformerConfig {
        match self {
            ModalityEncoder::Vision(e) => &e.config().transformer,
            ModalityEncoder::Audio(e) => &e.config().transformer,
            ModalityEncoder::Eeg(e) => &e.config().transformer,
        }
    }

    pub fn token_count(&self) -> usize {
        match self {
            ModalityEncoder::Vision(e) => e.config().token_count(),
            ModalityEncoder::Audio(e) => e.config().token_count(),
            ModalityEncoder::Eeg(e) => e.config().token_count(),
        }
    }

    /// Parameter-name prefix shared by all of this encoder's entries.
    pub fn prefix(&self) -> String {
        format!("{}.", self.modality())
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        match self {
            ModalityEncoder::Vision(e) => e.init(reg, rng),
            ModalityEncoder::Audio(e) => e.init(reg, rng),
            ModalityEncoder::Eeg(e) => e.init(reg, rng),
        }
    }

    /// The tensor this encoder reads from a trial.
    pub fn input<'t>(&self, trial: &'t Trial) -> Result<&'t Tensor> {
        match self {
            ModalityEncoder::Vision(_) => Ok(&trial.frames),
            ModalityEncoder::Eeg(_) => Ok(&trial.eeg),
            ModalityEncoder::Audio(_) => trial.spectrogram.as_ref().ok_or_else(|| {
                Error::Data(format!(
                    "subject {} trial {} has no spectrogram",
                    trial.subject_id, trial.trial_id
                ))
            }),
        }
    }

    pub fn encode(&self, tape: &Tape, p: &BoundParams, input: &Tensor) -> Result<ModalityFeature> {
        match self {
            ModalityEncoder::Vision(e) => e.encode(tape, p, input),
            ModalityEncoder::Audio(e) => e.encode(tape, p, input),
            ModalityEncoder::Eeg(e) => e.encode(tape, p, input),
        }
    }

    pub fn encode_var(&self, tape: &Tape, p: &BoundParams, input: Var) -> Result<ModalityFeature> {
        match self {
            ModalityEncoder::Vision(e) => e.encode_var(tape, p, input),
            ModalityEncoder::Audio(e) => e.encode_var(tape, p, input),
            ModalityEncoder::Eeg(e) => e.encode_var(tape, p, input),
        }
    }

    pub fn encode_trial(
        &self,
        tape: &Tape,
        p: &BoundParams,
        trial: &Trial,
    ) -> Result<ModalityFeature> {
        self.encode(tape, p, self.input(trial)?)
    }

    /// Checks every parameter this encoder reads is present with the shape a
    /// fresh initialization would give.
    pub fn check_params(&self, reg: &ParamRegistry) -> Result<()> {
        let mut fresh = ParamRegistry::new();
        self.init(&mut fresh, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, e) in fresh.iter() {
            let have = reg
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if have.shape() != e.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, encoder config expects {:?}",
                    have.shape(),
                    e.value.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Stage-1 linear head on a pooled feature: `d_model → classes`.
#[derive(Clone, Debug)]
pub struct UnimodalHead {
    pub linear: Linear,
}

impl UnimodalHead {
    pub fn new(modality: Modality, d_model: usize, classes: usize) -> Self {
        Self {
            linear: Linear::new(&format!("head.{modality}"), d_model, classes),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        self.linear.init(reg, rng)
    }

    /// Logits `[classes]` from `feature.pooled`.
    pub fn attach(&self, tape: &Tape, p: &BoundParams, feature: &ModalityFeature) -> Result<Var> {
        let shape = tape.shape(feature.pooled)?;
        if shape != [self.linear.d_in] {
            return Err(Error::shape("unimodal_head", &shape, &[self.linear.d_in]));
        }
        let row = tape.reshape(feature.pooled, vec![1, self.linear.d_in])?;
        let logits = self.linear.forward(tape, p, row)?;
        tape.reshape(logits, vec![self.linear.d_out])
    }
}

/// Encoder plus head, trained together in stage 1.
#[derive(Clone, Debug)]
pub struct UnimodalClassifier {
    pub encoder: ModalityEncoder,
    pub head: UnimodalHead,
}

impl UnimodalClassifier {
    pub fn new(encoder: ModalityEncoder) -> Self {
        let head = UnimodalHead::new(encoder.modality(), encoder.d_model(), NUM_CLASSES);
        Self { encoder, head }
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        self.encoder.init(reg, rng)?;
        self.head.init(reg, rng)
    }

    pub fn logits(&self, tape: &Tape, p: &BoundParams, trial: &Trial) -> Result<Var> {
        let feature = self.encoder.encode_trial(tape, p, trial)?;
        self.head.attach(tape, p, &feature)
    }
}
