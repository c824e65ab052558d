use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::{BoundParams, Linear, ParamRegistry};
use crate::tensor::Tensor;

use super::backbone::{embedding, Backbone, TransformerConfig};
use super::patch::patch_index;
use super::ModalityFeature;

/// Single-channel frame stack `[frames, height, width]` cut into square
/// patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VisionEncoderConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub transformer: TransformerConfig,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            height: 32,
            width: 32,
            patch: 8,
            transformer: TransformerConfig::default(),
        }
    }
}

impl VisionEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("vision needs at least one frame".into()));
        }
        patch_index(self.height, self.width, self.patch, self.patch)?;
        self.transformer.validate()
    }

    pub fn patches_per_frame(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// `N·(H/P)·(W/P) + 1`
    pub fn token_count(&self) -> usize {
        self.frames * self.patches_per_frame() + 1
    }
}

/// Patch tokens from every frame share one embedding; each token also gets a
/// learned within-frame position and a learned frame-index embedding before
/// the class token is prepended.
#[derive(Clone, Debug)]
pub struct VisionEncoder {
    config: VisionEncoderConfig,
    embed: Linear,
    patch_pos: String,
    frame_pos: String,
    backbone: Backbone,
    gather: Vec<usize>,
}

impl VisionEncoder {
    pub fn new(config: VisionEncoderConfig) -> Result<Self> {
        config.validate()?;
        let prefix = Modality::Vision.as_str();
        let p = config.patch;
        let per_frame = patch_index(config.height, config.width, p, p)?;
        let plane = config.height * config.width;
        let gather = (0..config.frames)
            .flat_map(|f| per_frame.iter().map(move |&i| f * plane + i))
            .collect();
        let d = config.transformer.d_model;
        Ok(Self {
            embed: Linear::new(&format!("{prefix}.patch_embed"), p * p, d),
            patch_pos: format!("{prefix}.patch_pos"),
            frame_pos: format!("{prefix}.frame_pos"),
            backbone: Backbone::new(prefix, &config.transformer, config.token_count() - 1, false)?,
            gather,
            config,
        })
    }

    pub fn config(&self) -> &VisionEncoderConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        let d = self.config.transformer.d_model;
        self.embed.init(reg, rng)?;
        reg.insert(
            &self.patch_pos,
            embedding(self.config.patches_per_frame(), d, rng)?,
        )?;
        reg.insert(&self.frame_pos, embedding(self.config.frames, d, rng)?)?;
        self.backbone.init(reg, rng)
    }

    pub fn encode(&self, tape: &Tape, p: &BoundParams, frames: &Tensor) -> Result<ModalityFeature> {
        let c = &self.config;
        let expect = [c.frames, c.height, c.width];
        if frames.shape() != expect {
            return Err(Error::shape("encode_vision", frames.shape(), &expect));
        }
        let x = tape.constant(frames.clone());
        self.encode_var(tape, p, x)
    }

    /// Like [`VisionEncoder::encode`] for an input already on the tape.
    pub fn encode_var(&self, tape: &Tape, p: &BoundParams, frames: Var) -> Result<ModalityFeature> {
        let c = &self.config;
        let d = c.transformer.d_model;
        let per_frame = c.patches_per_frame();
        let n = c.frames * per_frame;
        let patches = tape.gather(frames, vec![n, c.patch * c.patch], self.gather.clone())?;
        let tokens = self.embed.forward(tape, p, patches)?;

        // Broadcast the [per_frame, d] patch table and [frames, d] frame table
        // onto every token row.
        let patch_rows = (0..n).flat_map(|r| {
            let base = (r % per_frame) * d;
            base..base + d
        });
        let patch_pos = tape.gather(p.get(&self.patch_pos)?, vec![n, d], patch_rows.collect())?;
        let frame_rows = (0..n).flat_map(|r| {
            let base = (r / per_frame) * d;
            base..base + d
        });
        let frame_pos = tape.gather(p.get(&self.frame_pos)?, vec![n, d], frame_rows.collect())?;
        let tokens = tape.add(tape.add(tokens, patch_pos)?, frame_pos)?;

        let (pooled, sequence) = self.backbone.forward(tape, p, tokens)?;
        Ok(ModalityFeature {
            modality: Modality::Vision,
            pooled,
            tokens: sequence,
        })
    }
}
