use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BoundParams, LayerNorm, ParamRegistry, TransformerBlock};
use crate::tensor::Tensor;

const EMBED_INIT_STD: f32 = 0.02;

/// Sizes shared by every modality encoder's transformer stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_ff: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            blocks: 2,
            heads: 4,
            d_ff: 128,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model < 2 || self.blocks == 0 || self.d_ff == 0 {
            return Err(Error::Config(format!("invalid transformer sizes {self:?}")));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Class token, learned positions, transformer blocks and a final norm.
#[derive(Clone, Debug)]
pub(crate) struct Backbone {
    cls: String,
    /// `[tokens + 1, d]` learned positions, when the caller does not supply
    /// its own.
    pos: Option<String>,
    blocks: Vec<TransformerBlock>,
    norm: LayerNorm,
    d_model: usize,
    /// Content tokens, excluding the class token.
    tokens: usize,
}

impl Backbone {
    pub fn new(
        prefix: &str,
        cfg: &TransformerConfig,
        tokens: usize,
        positions: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                TransformerBlock::new(
                    &format!("{prefix}.block{i}"),
                    cfg.d_model,
                    cfg.heads,
                    cfg.d_ff,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cls: format!("{prefix}.cls"),
            pos: positions.then(|| format!("{prefix}.pos")),
            blocks,
            norm: LayerNorm::new(&format!("{prefix}.norm"), cfg.d_model),
            d_model: cfg.d_model,
            tokens,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        reg.insert(&self.cls, embedding(1, self.d_model, rng)?)?;
        if let Some(pos) = &self.pos {
            reg.insert(pos, embedding(self.tokens + 1, self.d_model, rng)?)?;
        }
        for b in &self.blocks {
            b.init(reg, rng)?;
        }
        self.norm.init(reg)
    }

    /// `tokens: [n, d]` → (pooled `[d]`, full sequence `[n + 1, d]`).
    pub fn forward(&self, tape: &Tape, p: &BoundParams, tokens: Var) -> Result<(Var, Var)> {
        let shape = tape.shape(tokens)?;
        if shape != [self.tokens, self.d_model] {
            return Err(Error::shape(
                "encoder tokens",
                &shape,
                &[self.tokens, self.d_model],
            ));
        }
        let seq = tape.concat(&[p.get(&self.cls)?, tokens], 0)?;
        let mut x = match &self.pos {
            Some(pos) => tape.add(seq, p.get(pos)?)?,
            None => seq,
        };
        for b in &self.blocks {
            x = b.forward(tape, p, x)?;
        }
        let x = self.norm.forward(tape, p, x)?;
        let cls = tape.slice(x, 0, 0, 1)?;
        let pooled = tape.reshape(cls, vec![self.d_model])?;
        Ok((pooled, x))
    }
}

pub(crate) fn embedding<R: Rng + ?Sized>(rows: usize, d: usize, rng: &mut R) -> Result<Tensor> {
    Tensor::normal(vec![rows, d], 0.0, EMBED_INIT_STD, rng)
}
