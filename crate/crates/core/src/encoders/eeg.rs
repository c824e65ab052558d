use rand::Rng;

use crate::autodiff::{conv_output_len, Tape, Var};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{BoundParams, Linear, ParamRegistry};
use crate::tensor::Tensor;

use super::backbone::{Backbone, TransformerConfig};
use super::ModalityFeature;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EegEncoderConfig {
    pub channels: usize,
    pub samples: usize,
    pub kernel: usize,
    pub stride: usize,
    pub transformer: TransformerConfig,
}

impl Default for EegEncoderConfig {
    fn default() -> Self {
        Self {
            channels: 30,
            samples: 200,
            kernel: 11,
            stride: 10,
            transformer: TransformerConfig::default(),
        }
    }
}

impl EegEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("EEG needs at least one channel".into()));
        }
        conv_output_len(self.samples, self.kernel, self.stride)?;
        self.transformer.validate()
    }

    /// Conv output length `⌊(T − K)/S⌋ + 1`.
    pub fn time_tokens(&self) -> usize {
        (self.samples - self.kernel) / self.stride + 1
    }

    pub fn token_count(&self) -> usize {
        self.time_tokens() + 1
    }
}

/// Depthwise temporal convolution per channel, then each time step's
/// channel vector is projected to one token.
#[derive(Clone, Debug)]
pub struct EegEncoder {
    config: EegEncoderConfig,
    kernels: String,
    project: Linear,
    backbone: Backbone,
}

impl EegEncoder {
    pub fn new(config: EegEncoderConfig) -> Result<Self> {
        config.validate()?;
        let prefix = Modality::Eeg.as_str();
        Ok(Self {
            kernels: format!("{prefix}.conv.kernels"),
            project: Linear::new(
                &format!("{prefix}.project"),
                config.channels,
                config.transformer.d_model,
            ),
            backbone: Backbone::new(prefix, &config.transformer, config.time_tokens(), true)?,
            config,
        })
    }

    pub fn config(&self) -> &EegEncoderConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        let bound = 1.0 / (self.config.kernel as f32).sqrt();
        reg.insert(
            &self.kernels,
            Tensor::uniform(
                vec![self.config.channels, self.config.kernel],
                -bound,
                bound,
                rng,
            )?,
        )?;
        self.project.init(reg, rng)?;
        self.backbone.init(reg, rng)
    }

    pub fn encode(&self, tape: &Tape, p: &BoundParams, signal: &Tensor) -> Result<ModalityFeature> {
        let x = tape.constant(signal.clone());
        self.encode_var(tape, p, x)
    }

    /// Channel-wise feature map `[C, T']` before projection.
    pub fn conv_features(&self, tape: &Tape, p: &BoundParams, signal: Var) -> Result<Var> {
        let c = &self.config;
        let shape = tape.shape(signal)?;
        if shape != [c.channels, c.samples] {
            return Err(Error::shape("encode_eeg", &shape, &[c.channels, c.samples]));
        }
        tape.conv1d_depthwise(signal, p.get(&self.kernels)?, c.stride)
    }

    pub fn encode_var(&self, tape: &Tape, p: &BoundParams, signal: Var) -> Result<ModalityFeature> {
        let fmap = self.conv_features(tape, p, signal)?;
        let steps = tape.transpose(fmap)?;
        let tokens = self.project.forward(tape, p, steps)?;
        let (pooled, sequence) = self.backbone.forward(tape, p, tokens)?;
        Ok(ModalityFeature {
            modality: Modality::Eeg,
            pooled,
            tokens: sequence,
        })
    }
}
