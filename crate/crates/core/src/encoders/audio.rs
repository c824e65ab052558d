use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{BoundParams, Linear, ParamRegistry};
use crate::tensor::Tensor;

use super::backbone::{Backbone, TransformerConfig};
use super::patch::patch_index;
use super::ModalityFeature;

/// Spectrogram `[mel_bins, time_frames]` cut into `patch_freq × patch_time`
/// patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AudioEncoderConfig {
    pub mel_bins: usize,
    pub time_frames: usize,
    pub patch_freq: usize,
    pub patch_time: usize,
    pub transformer: TransformerConfig,
}

impl Default for AudioEncoderConfig {
    fn default() -> Self {
        Self {
            mel_bins: 16,
            time_frames: 32,
            patch_freq: 8,
            patch_time: 8,
            transformer: TransformerConfig::default(),
        }
    }
}

impl AudioEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        patch_index(
            self.mel_bins,
            self.time_frames,
            self.patch_freq,
            self.patch_time,
        )?;
        self.transformer.validate()
    }

    /// `(F/P_f)·(T_a/P_t) + 1`
    pub fn token_count(&self) -> usize {
        (self.mel_bins / self.patch_freq) * (self.time_frames / self.patch_time) + 1
    }
}

#[derive(Clone, Debug)]
pub struct AudioEncoder {
    config: AudioEncoderConfig,
    embed: Linear,
    backbone: Backbone,
    gather: Vec<usize>,
}

impl AudioEncoder {
    pub fn new(config: AudioEncoderConfig) -> Result<Self> {
        config.validate()?;
        let prefix = Modality::Audio.as_str();
        let gather = patch_index(
            config.mel_bins,
            config.time_frames,
            config.patch_freq,
            config.patch_time,
        )?;
        Ok(Self {
            embed: Linear::new(
                &format!("{prefix}.patch_embed"),
                config.patch_freq * config.patch_time,
                config.transformer.d_model,
            ),
            backbone: Backbone::new(prefix, &config.transformer, config.token_count() - 1, true)?,
            gather,
            config,
        })
    }

    pub fn config(&self) -> &AudioEncoderConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        self.embed.init(reg, rng)?;
        self.backbone.init(reg, rng)
    }

    pub fn encode(
        &self,
        tape: &Tape,
        p: &BoundParams,
        spectrogram: &Tensor,
    ) -> Result<ModalityFeature> {
        let x = tape.constant(spectrogram.clone());
        self.encode_var(tape, p, x)
    }

    pub fn encode_var(
        &self,
        tape: &Tape,
        p: &BoundParams,
        spectrogram: Var,
    ) -> Result<ModalityFeature> {
        let c = &self.config;
        let shape = tape.shape(spectrogram)?;
        if shape != [c.mel_bins, c.time_frames] {
            return Err(Error::shape(
                "encode_audio",
                &shape,
                &[c.mel_bins, c.time_frames],
            ));
        }
        let n = c.token_count() - 1;
        let patches = tape.gather(
            spectrogram,
            vec![n, c.patch_freq * c.patch_time],
            self.gather.clone(),
        )?;
        let tokens = self.embed.forward(tape, p, patches)?;
        let (pooled, sequence) = self.backbone.forward(tape, p, tokens)?;
        Ok(ModalityFeature {
            modality: Modality::Audio,
            pooled,
            tokens: sequence,
        })
    }
}
