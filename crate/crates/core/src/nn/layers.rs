//! Transformer building blocks over the autodiff tape.
//!
//! Each layer struct only stores parameter names and sizes; values live in a
//! [`ParamRegistry`] and are looked up through [`BoundParams`] on every
//! forward pass.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::params::{BoundParams, ParamRegistry};

pub const LAYER_NORM_EPS: f32 = 1e-5;

/// `x·W + b` for `x: [n, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
pub fn linear(tape: &Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let n = tape.shape(xw)?[0];
    let bias = tape.expand_rows(b, n)?;
    tape.add(xw, bias)
}

/// Row-wise layer normalization with affine `γ`, `β` of length `d`.
pub fn layer_norm(tape: &Tape, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
    let shape = tape.shape(x)?;
    let (n, d) = match shape.as_slice() {
        &[n, d] => (n, d),
        other => return Err(Error::shape("layer_norm", other, &[0, 0])),
    };
    if d < 2 {
        return Err(Error::Config(format!("layer_norm needs d >= 2, got {d}")));
    }
    let y = tape.normalize_rows(x, eps)?;
    let g = tape.expand_rows(gamma, n)?;
    let b = tape.expand_rows(beta, n)?;
    let scaled = tape.mul(y, g)?;
    tape.add(scaled, b)
}

/// Mean negative log-likelihood over rows of `logits: [n, c]`.
pub fn cross_entropy(tape: &Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

fn uniform_init<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Result<Tensor> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            d_in,
            d_out,
        }
    }

    /// Weights and bias ~ U(±1/√d_in).
    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        reg.insert(
            &self.w,
            uniform_init(vec![self.d_in, self.d_out], self.d_in, rng)?,
        )?;
        reg.insert(&self.b, uniform_init(vec![self.d_out], self.d_in, rng)?)
    }

    pub fn forward(&self, tape: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        linear(tape, x, p.get(&self.w)?, p.get(&self.b)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            dim,
        }
    }

    pub fn init(&self, reg: &mut ParamRegistry) -> Result<()> {
        reg.insert(&self.gamma, Tensor::ones(vec![self.dim])?)?;
        reg.insert(&self.beta, Tensor::zeros(vec![self.dim])?)
    }

    pub fn forward(&self, tape: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        layer_norm(
            tape,
            x,
            p.get(&self.gamma)?,
            p.get(&self.beta)?,
            LAYER_NORM_EPS,
        )
    }
}

/// Result of [`MultiHeadAttention::forward_with_weights`].
pub struct AttentionOutput {
    pub output: Var,
    /// One `[n_q, n_k]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {dim} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(&format!("{prefix}.q"), dim, dim),
            k: Linear::new(&format!("{prefix}.k"), dim, dim),
            v: Linear::new(&format!("{prefix}.v"), dim, dim),
            o: Linear::new(&format!("{prefix}.o"), dim, dim),
            heads,
            dim,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.init(reg, rng)?;
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &Tape,
        p: &BoundParams,
        q_in: Var,
        k_in: Var,
        v_in: Var,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(tape, p, q_in, k_in, v_in)?.output)
    }

    /// Per head: `softmax(Q_h K_hᵀ / √d_head) V_h`; heads concatenated and
    /// output-projected.
    pub fn forward_with_weights(
        &self,
        tape: &Tape,
        p: &BoundParams,
        q_in: Var,
        k_in: Var,
        v_in: Var,
    ) -> Result<AttentionOutput> {
        let (kshape, vshape) = (tape.shape(k_in)?, tape.shape(v_in)?);
        if kshape != vshape {
            return Err(Error::shape("multi_head_attention", &kshape, &vshape));
        }
        let q = self.q.forward(tape, p, q_in)?;
        let k = self.k.forward(tape, p, k_in)?;
        let v = self.v.forward(tape, p, v_in)?;
        let d_head = self.dim / self.heads;
        let scale = 1.0 / (d_head as f32).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * d_head, (h + 1) * d_head);
            let qh = tape.slice(q, 1, lo, hi)?;
            let kh = tape.slice(k, 1, lo, hi)?;
            let vh = tape.slice(v, 1, lo, hi)?;
            let scores = tape.matmul(qh, tape.transpose(kh)?)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores, 1)?;
            contexts.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let context = if contexts.len() == 1 {
            contexts[0]
        } else {
            tape.concat(&contexts, 1)?
        };
        let output = self.o.forward(tape, p, context)?;
        Ok(AttentionOutput { output, weights })
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(prefix: &str, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(&format!("{prefix}.fc1"), dim, hidden),
            fc2: Linear::new(&format!("{prefix}.fc2"), hidden, dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        self.fc1.init(reg, rng)?;
        self.fc2.init(reg, rng)
    }

    pub fn forward(&self, tape: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let h = tape.gelu(self.fc1.forward(tape, p, x)?)?;
        self.fc2.forward(tape, p, h)
    }
}

/// Pre-norm block: `h = x + Attn(LN₁(x))`, `out = h + FF(LN₂(h))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerBlock {
    pub fn new(prefix: &str, dim: usize, heads: usize, ff_hidden: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&format!("{prefix}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{prefix}.attn"), dim, heads)?,
            ln2: LayerNorm::new(&format!("{prefix}.ln2"), dim),
            ff: FeedForward::new(&format!("{prefix}.ff"), dim, ff_hidden),
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        self.ln1.init(reg)?;
        self.attn.init(reg, rng)?;
        self.ln2.init(reg)?;
        self.ff.init(reg, rng)
    }

    pub fn forward(&self, tape: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let n1 = self.ln1.forward(tape, p, x)?;
        let a = self.attn.forward(tape, p, n1, n1, n1)?;
        let h = tape.add(x, a)?;
        let n2 = self.ln2.forward(tape, p, h)?;
        let f = self.ff.forward(tape, p, n2)?;
        tape.add(h, f)
    }

    /// Parameter names of the two sublayer output projections.
    pub fn output_projection_names(&self) -> [&str; 4] {
        [
            &self.attn.o.w,
            &self.attn.o.b,
            &self.ff.fc2.w,
            &self.ff.fc2.b,
        ]
    }
}

/// One hidden GELU layer: `d_in → hidden → classes`.
#[derive(Clone, Debug)]
pub struct ClassifierMlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl ClassifierMlp {
    pub fn new(prefix: &str, d_in: usize, hidden: usize, classes: usize) -> Self {
        Self {
            fc1: Linear::new(&format!("{prefix}.fc1"), d_in, hidden),
            fc2: Linear::new(&format!("{prefix}.fc2"), hidden, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.fc2.d_out
    }

    pub fn init<R: Rng + ?Sized>(&self, reg: &mut ParamRegistry, rng: &mut R) -> Result<()> {
        self.fc1.init(reg, rng)?;
        self.fc2.init(reg, rng)
    }

    /// Accepts `[d_in]` (returns `[classes]`) or `[n, d_in]` (returns
    /// `[n, classes]`).
    pub fn forward(&self, tape: &Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x)?;
        let rows = match shape.as_slice() {
            &[d] if d == self.fc1.d_in => tape.reshape(x, vec![1, d])?,
            &[_, d] if d == self.fc1.d_in => x,
            other => return Err(Error::shape("classifier_mlp", other, &[self.fc1.d_in])),
        };
        let h = tape.gelu(self.fc1.forward(tape, p, rows)?)?;
        let logits = self.fc2.forward(tape, p, h)?;
        if shape.len() == 1 {
            tape.reshape(logits, vec![self.classes()])
        } else {
            Ok(logits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn linear_identity_and_hand_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[&[1.0, 1.0]]).unwrap());
        let w = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let y = linear(&tape, x, w, b).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[2.0, 3.0]);

        let xv = Tensor::normal(vec![3, 2], 0.0, 1.0, &mut rng(1)).unwrap();
        let x = tape.constant(xv.clone());
        let zero = tape.constant(Tensor::zeros(vec![2]).unwrap());
        assert_eq!(tape.value(linear(&tape, x, w, zero).unwrap()).unwrap(), xv);
    }

    #[test]
    fn layer_norm_conventions() {
        let tape = Tape::new();
        let g = tape.constant(Tensor::ones(vec![2]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![2]).unwrap());
        let x = tape.constant(Tensor::from_rows(&[&[5.0, 5.0], &[1.0, 3.0]]).unwrap());
        let y = tape
            .value(layer_norm(&tape, x, g, b, LAYER_NORM_EPS).unwrap())
            .unwrap();
        assert_eq!(y.row(0).unwrap(), &[0.0, 0.0]);
        assert!((y.at(&[1, 0]).unwrap() + 1.0).abs() < 1e-4);
        assert!((y.at(&[1, 1]).unwrap() - 1.0).abs() < 1e-4);

        let one = tape.constant(Tensor::ones(vec![1, 1]).unwrap());
        let g1 = tape.constant(Tensor::ones(vec![1]).unwrap());
        assert!(matches!(
            layer_norm(&tape, one, g1, g1, LAYER_NORM_EPS),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn layer_norm_random_rows_are_standardized() {
        let mut r = rng(2);
        for _ in 0..5 {
            let tape = Tape::new();
            let x = tape.constant(Tensor::normal(vec![1, 16], 3.0, 2.0, &mut r).unwrap());
            let g = tape.constant(Tensor::ones(vec![16]).unwrap());
            let b = tape.constant(Tensor::zeros(vec![16]).unwrap());
            let y = tape
                .value(layer_norm(&tape, x, g, b, 1e-12).unwrap())
                .unwrap();
            let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / 16.0;
            let var = y
                .data()
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / 16.0;
            assert!(mean.abs() < 1e-6, "{mean}");
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
    }

    fn attention_setup(dim: usize, heads: usize, seed: u64) -> (MultiHeadAttention, ParamRegistry) {
        let mha = MultiHeadAttention::new("attn", dim, heads).unwrap();
        let mut reg = ParamRegistry::new();
        mha.init(&mut reg, &mut rng(seed)).unwrap();
        (mha, reg)
    }

    #[test]
    fn single_key_attention_is_value_path() {
        let (mha, reg) = attention_setup(8, 2, 3);
        let tape = Tape::new();
        let p = reg.bind(&tape);
        let mut r = rng(4);
        let q = tape.constant(Tensor::normal(vec![1, 8], 0.0, 1.0, &mut r).unwrap());
        let kv = tape.constant(Tensor::normal(vec![1, 8], 0.0, 1.0, &mut r).unwrap());
        let out = mha.forward_with_weights(&tape, &p, q, kv, kv).unwrap();
        for w in &out.weights {
            assert_eq!(tape.value(*w).unwrap().data(), &[1.0]);
        }
        let v = mha.v.forward(&tape, &p, kv).unwrap();
        let expect = mha.o.forward(&tape, &p, v).unwrap();
        assert!(
            tape.value(out.output)
                .unwrap()
                .max_abs_diff(&tape.value(expect).unwrap())
                .unwrap()
                < 1e-6
        );
    }

    #[test]
    fn duplicated_key_value_rows_match_single_row() {
        let (mha, reg) = attention_setup(8, 4, 5);
        let tape = Tape::new();
        let p = reg.bind(&tape);
        let mut r = rng(6);
        let q = tape.constant(Tensor::normal(vec![3, 8], 0.0, 1.0, &mut r).unwrap());
        let kv = tape.constant(Tensor::normal(vec![1, 8], 0.0, 1.0, &mut r).unwrap());
        let kv2 = tape.concat(&[kv, kv], 0).unwrap();
        let a = tape
            .value(mha.forward(&tape, &p, q, kv, kv).unwrap())
            .unwrap();
        let b = tape
            .value(mha.forward(&tape, &p, q, kv2, kv2).unwrap())
            .unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_indivisible_heads() {
        assert!(matches!(
            MultiHeadAttention::new("a", 10, 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zeroed_output_projections_make_block_identity() {
        let block = TransformerBlock::new("blk", 8, 2, 16).unwrap();
        let mut reg = ParamRegistry::new();
        block.init(&mut reg, &mut rng(7)).unwrap();
        for name in block.output_projection_names() {
            let shape = reg.get(name).unwrap().shape().to_vec();
            reg.set(name, Tensor::zeros(shape).unwrap()).unwrap();
        }
        let tape = Tape::new();
        let p = reg.bind(&tape);
        let xv = Tensor::normal(vec![5, 8], 0.0, 1.0, &mut rng(8)).unwrap();
        let x = tape.constant(xv.clone());
        let y = tape.value(block.forward(&tape, &p, x).unwrap()).unwrap();
        let same = y
            .data()
            .iter()
            .zip(xv.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn block_preserves_shape() {
        let mut r = rng(9);
        for dim in [8, 16] {
            for n in 1..=8 {
                let block = TransformerBlock::new("blk", dim, 4, 2 * dim).unwrap();
                let mut reg = ParamRegistry::new();
                block.init(&mut reg, &mut r).unwrap();
                let tape = Tape::new();
                let p = reg.bind(&tape);
                let x = tape.constant(Tensor::normal(vec![n, dim], 0.0, 1.0, &mut r).unwrap());
                assert_eq!(
                    tape.shape(block.forward(&tape, &p, x).unwrap()).unwrap(),
                    vec![n, dim]
                );
            }
        }
    }

    #[test]
    fn mlp_zero_weights_emit_output_bias() {
        let mlp = ClassifierMlp::new("cls", 6, 4, 5);
        let mut reg = ParamRegistry::new();
        mlp.init(&mut reg, &mut rng(10)).unwrap();
        for name in [&mlp.fc1.w, &mlp.fc2.w] {
            let shape = reg.get(name).unwrap().shape().to_vec();
            reg.set(name, Tensor::zeros(shape).unwrap()).unwrap();
        }
        let bias = reg.get(&mlp.fc2.b).unwrap().clone();
        let tape = Tape::new();
        let p = reg.bind(&tape);
        let x = tape.constant(Tensor::normal(vec![6], 0.0, 1.0, &mut rng(11)).unwrap());
        let y = tape.value(mlp.forward(&tape, &p, x).unwrap()).unwrap();
        assert_eq!(y, bias);
    }

    #[test]
    fn mlp_output_length_matches_classes() {
        let mut r = rng(12);
        for (d_in, hidden, classes) in [(3, 4, 5), (8, 2, 2), (16, 32, 7)] {
            let mlp = ClassifierMlp::new("cls", d_in, hidden, classes);
            let mut reg = ParamRegistry::new();
            mlp.init(&mut reg, &mut r).unwrap();
            let tape = Tape::new();
            let p = reg.bind(&tape);
            let x = tape.constant(Tensor::normal(vec![d_in], 0.0, 1.0, &mut r).unwrap());
            assert_eq!(
                tape.shape(mlp.forward(&tape, &p, x).unwrap()).unwrap(),
                vec![classes]
            );
            let bad = tape.constant(Tensor::ones(vec![d_in + 1]).unwrap());
            assert!(mlp.forward(&tape, &p, bad).is_err());
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut r = rng(13);
        for _ in 0..5 {
            let x = Tensor::normal(vec![3, 4], 0.0, 1.0, &mut r).unwrap();
            let w = Tensor::normal(vec![4, 2], 0.0, 1.0, &mut r).unwrap();
            let b = Tensor::normal(vec![2], 0.0, 1.0, &mut r).unwrap();
            let probe = Tensor::normal(vec![3, 2], 0.0, 1.0, &mut r).unwrap();
            let report = grad_check(
                |t, v| {
                    let y = linear(t, v[0], v[1], v[2])?;
                    let probe = t.constant(probe.clone());
                    t.sum(t.mul(y, probe)?)
                },
                &[x, w, b],
                1e-2,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-3, "{report:?}");
        }
    }
}
