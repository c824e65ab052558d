//! Stage-2 fusion: project the three pooled features to a shared width, add
//! modality tags, self-attend across the three tokens, flatten and classify.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::encoders::backbone_embedding;
use crate::error::{Error, Result};
use crate::modality::{Modality, NUM_CLASSES};
use crate::nn::{BoundParams, ClassifierMlp, LayerNorm, Linear, MultiHeadAttention, ParamRegistry};

pub const FUSION_PREFIX: &str = "fusion.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionConfig {
    /// Width of the incoming pooled features.
    pub d_model: usize,
    pub d_fuse: usize,
    pub heads: usize,
    pub hidden: usize,
    pub modality_embeddings: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_fuse: 64,
            heads: 4,
            hidden: 128,
            modality_embeddings: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_fuse < 2 || self.hidden == 0 {
            return Err(Error::Config(format!("invalid fusion sizes {self:?}")));
        }
        if self.heads == 0 || !self.d_fuse.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "fusion width {} not divisible by {} heads",
                self.d_fuse, self.heads
            )));
        }
        Ok(())
    }
}

/// Fused rows before flattening plus the per-head `3 × 3` attention maps.
#[derive(Clone, Debug)]
pub struct FusedTokens {
    /// `[3, d_fuse]`
    pub rows: Var,
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct FusionHead {
    config: FusionConfig,
    proj: [Linear; 3],
    embed: Option<[String; 3]>,
    attn: MultiHeadAttention,
    norm: LayerNorm,
    mlp: ClassifierMlp,
}

impl FusionHead {
    pub fn new(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let name = |m: Modality, what: &str| format!("fusion.{what}.{m}");
        let [v, a, e] = Modality::ALL;
        Ok(Self {
            proj: [v, a, e].map(|m| Linear::new(&name(m, "proj"), config.d_model, config.d_fuse)),
            embed: config
                .modality_embeddings
                .then(|| [v, a, e].map(|m| name(m, "embed"))),
            attn: MultiHeadAttention::new("fusion.attn", config.d_fuse, config.heads)?,
            norm: LayerNorm::new("fusion.norm", config.d_fuse),
            mlp: ClassifierMlp::new("fusion.mlp", 3 * config.d_fuse, config.hidden, NUM_CLASSES),
            config,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        for p in &self.proj {
            p.init(reg, rng)?;
        }
        if let Some(names) = &self.embed {
            for n in names {
                let row = backbone_embedding(1, self.config.d_fuse, rng)?;
                reg.insert(n, row.reshape(vec![self.config.d_fuse])?)?;
            }
        }
        self.attn.init(reg, rng)?;
        self.norm.init(reg)?;
        self.mlp.init(reg, rng)
    }

    pub fn projection(&self, modality: Modality) -> &Linear {
        &self.proj[modality.index()]
    }

    pub fn embedding_name(&self, modality: Modality) -> Option<&str> {
        self.embed.as_ref().map(|n| n[modality.index()].as_str())
    }

    /// `features` in vision, audio, eeg order, each `[d_model]` →
    /// `[3, d_fuse]`, row m = `proj_m(h_m) + embed_m`.
    pub fn stack_modalities(
        &self,
        tape: &Tape,
        p: &BoundParams,
        features: [Var; 3],
    ) -> Result<Var> {
        let d = self.config.d_model;
        let mut rows = Vec::with_capacity(3);
        for (m, h) in Modality::ALL.into_iter().zip(features) {
            let shape = tape.shape(h)?;
            if shape != [d] {
                return Err(Error::shape("stack_modalities", &shape, &[d]));
            }
            let row = self.proj[m.index()].forward(tape, p, tape.reshape(h, vec![1, d])?)?;
            let row = match self.embedding_name(m) {
                Some(name) => {
                    let e = tape.reshape(p.get(name)?, vec![1, self.config.d_fuse])?;
                    tape.add(row, e)?
                }
                None => row,
            };
            rows.push(row);
        }
        tape.concat(&rows, 0)
    }

    /// Post-norm self-attention over the three tokens:
    /// `LN(x + MHA(x, x, x))`.
    pub fn fuse_tokens(&self, tape: &Tape, p: &BoundParams, tokens: Var) -> Result<FusedTokens> {
        let shape = tape.shape(tokens)?;
        if shape != [3, self.config.d_fuse] {
            return Err(Error::shape("fuse", &shape, &[3, self.config.d_fuse]));
        }
        let a = self
            .attn
            .forward_with_weights(tape, p, tokens, tokens, tokens)?;
        let rows = self.norm.forward(tape, p, tape.add(tokens, a.output)?)?;
        Ok(FusedTokens {
            rows,
            weights: a.weights,
        })
    }

    /// `[3, d_fuse]` → `[3·d_fuse]`, rows flattened in modality order.
    pub fn fuse(&self, tape: &Tape, p: &BoundParams, tokens: Var) -> Result<Var> {
        let fused = self.fuse_tokens(tape, p, tokens)?;
        tape.reshape(fused.rows, vec![3 * self.config.d_fuse])
    }

    /// `[3·d_fuse]` → `[5]` logits.
    pub fn classify_fused(&self, tape: &Tape, p: &BoundParams, flat: Var) -> Result<Var> {
        let shape = tape.shape(flat)?;
        if shape != [3 * self.config.d_fuse] {
            return Err(Error::shape(
                "classify_fused",
                &shape,
                &[3 * self.config.d_fuse],
            ));
        }
        self.mlp.forward(tape, p, flat)
    }

    /// stack → fuse → classify.
    pub fn logits(&self, tape: &Tape, p: &BoundParams, features: [Var; 3]) -> Result<Var> {
        let tokens = self.stack_modalities(tape, p, features)?;
        let flat = self.fuse(tape, p, tokens)?;
        self.classify_fused(tape, p, flat)
    }
}
