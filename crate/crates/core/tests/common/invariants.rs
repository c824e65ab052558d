//! Property suites runnable as plain functions, each returning the first
//! counterexample found.

use modfuse_core::autodiff::softmax;
use modfuse_core::config::RunConfig;
use modfuse_core::data::{generate_trials, subject_split, DataDims, SynthConfig};
use modfuse_core::encoders::{
    AudioEncoder, AudioEncoderConfig, EegEncoder, EegEncoderConfig, ModalityEncoder,
    TransformerConfig, VisionEncoder, VisionEncoderConfig,
};
use modfuse_core::fusion::{FusionConfig, FusionHead};
use modfuse_core::nn::{MultiHeadAttention, ParamRegistry, TransformerBlock};
use modfuse_core::{Tape, Tensor, NUM_CLASSES};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Outcome = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(
            proptest::test_runner::RngAlgorithm::ChaCha,
        ),
    )
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Outcome
where
    S::Value: std::fmt::Debug,
{
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn softmax_normalization() -> Outcome {
    run(
        64,
        (1usize..6, 1usize..6, 0usize..2, any::<u64>(), 0.1f32..30.0),
        |(n, d, axis, seed, spread)| {
            let x = Tensor::normal(vec![n, d], 0.0, spread, &mut rng(seed)).unwrap();
            let y = softmax(&x, axis).unwrap();
            prop_assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let sums: Vec<f64> = if axis == 1 {
                (0..n)
                    .map(|r| y.row(r).unwrap().iter().map(|&v| v as f64).sum())
                    .collect()
            } else {
                (0..d)
                    .map(|c| (0..n).map(|r| y.data()[r * d + c] as f64).sum())
                    .collect()
            };
            for s in sums {
                prop_assert!((s - 1.0).abs() < 1e-5, "sum {}", s);
            }
            Ok(())
        },
    )
}

pub fn attention_row_sums() -> Outcome {
    run(
        32,
        (1usize..4, 1usize..5, 1usize..6, 1usize..6, any::<u64>()),
        |(heads, d_head, nq, nk, seed)| {
            let dim = heads * d_head;
            let mha = MultiHeadAttention::new("a", dim, heads).unwrap();
            let mut reg = ParamRegistry::new();
            let mut r = rng(seed);
            mha.init(&mut reg, &mut r).unwrap();
            let tape = Tape::new();
            let p = reg.bind(&tape);
            let q = tape.constant(Tensor::normal(vec![nq, dim], 0.0, 2.0, &mut r).unwrap());
            let kv = tape.constant(Tensor::normal(vec![nk, dim], 0.0, 2.0, &mut r).unwrap());
            let out = mha.forward_with_weights(&tape, &p, q, kv, kv).unwrap();
            prop_assert_eq!(out.weights.len(), heads);
            prop_assert_eq!(tape.shape(out.output).unwrap(), vec![nq, dim]);
            for w in out.weights {
                let w = tape.value(w).unwrap();
                prop_assert_eq!(w.shape(), &[nq, nk][..]);
                for i in 0..nq {
                    let s: f64 = w.row(i).unwrap().iter().map(|&v| v as f64).sum();
                    prop_assert!((s - 1.0).abs() < 1e-5, "row {} sums to {}", i, s);
                }
            }
            Ok(())
        },
    )
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Without modality embeddings, permuting the fusion input tokens permutes the
/// fused rows the same way.
pub fn permutation_equivariance() -> Outcome {
    run(
        32,
        (1usize..4, 1usize..4, 0usize..6, any::<u64>()),
        |(heads, d_head, perm, seed)| {
            let d_fuse = heads * d_head * 2;
            let head = FusionHead::new(FusionConfig {
                d_model: 4,
                d_fuse,
                heads,
                hidden: 8,
                modality_embeddings: false,
            })
            .unwrap();
            let mut reg = ParamRegistry::new();
            let mut r = rng(seed);
            head.init(&mut reg, &mut r).unwrap();
            let x = Tensor::normal(vec![3, d_fuse], 0.0, 1.0, &mut r).unwrap();
            let pi = PERMUTATIONS[perm];
            let mut permuted = Vec::with_capacity(3 * d_fuse);
            for &i in &pi {
                permuted.extend_from_slice(x.row(i).unwrap());
            }
            let permuted = Tensor::new(vec![3, d_fuse], permuted).unwrap();

            let fused = |t: Tensor| {
                let tape = Tape::new();
                let p = reg.bind(&tape);
                let out = head.fuse_tokens(&tape, &p, tape.constant(t)).unwrap();
                tape.value(out.rows).unwrap()
            };
            let (a, b) = (fused(x), fused(permuted));
            for (k, &i) in pi.iter().enumerate() {
                for (u, v) in b.row(k).unwrap().iter().zip(a.row(i).unwrap()) {
                    prop_assert!((u - v).abs() < 1e-5, "row {} vs {}: {} vs {}", k, i, u, v);
                }
            }
            Ok(())
        },
    )
}

/// Zeroed sublayer output projections make a pre-norm block the identity.
pub fn residual_identity() -> Outcome {
    run(
        32,
        (1usize..4, 2usize..5, 1usize..6, 1usize..9, any::<u64>()),
        |(heads, d_head, n, ff, seed)| {
            let dim = heads * d_head;
            let block = TransformerBlock::new("b", dim, heads, ff).unwrap();
            let mut reg = ParamRegistry::new();
            let mut r = rng(seed);
            block.init(&mut reg, &mut r).unwrap();
            for name in block.output_projection_names() {
                let shape = reg.get(name).unwrap().shape().to_vec();
                reg.set(name, Tensor::zeros(shape).unwrap()).unwrap();
            }
            let x = Tensor::normal(vec![n, dim], 0.0, 3.0, &mut r).unwrap();
            let tape = Tape::new();
            let p = reg.bind(&tape);
            let y = tape
                .value(block.forward(&tape, &p, tape.constant(x.clone())).unwrap())
                .unwrap();
            prop_assert_eq!(y, x);
            Ok(())
        },
    )
}

fn tokens_of(enc: &ModalityEncoder, input: Tensor, seed: u64) -> usize {
    let mut reg = ParamRegistry::new();
    enc.init(&mut reg, &mut rng(seed)).unwrap();
    let tape = Tape::new();
    let p = reg.bind(&tape);
    let f = enc.encode(&tape, &p, &input).unwrap();
    tape.shape(f.tokens).unwrap()[0]
}

/// Token counts of built encoders against the closed-form formulas.
pub fn token_counts() -> Outcome {
    let transformer = TransformerConfig {
        d_model: 4,
        blocks: 1,
        heads: 2,
        d_ff: 4,
    };
    run(
        24,
        (
            1usize..4,
            1usize..4,
            1usize..4,
            1usize..4,
            1usize..5,
            any::<u64>(),
        ),
        |(a, b, c, patch, stride, seed)| {
            let mut r = rng(seed);
            // vision: N·(H/P)·(W/P) + 1
            let cfg = VisionEncoderConfig {
                frames: c,
                height: a * patch,
                width: b * patch,
                patch,
                transformer,
            };
            let input = Tensor::normal(vec![c, a * patch, b * patch], 0.0, 1.0, &mut r).unwrap();
            let enc = ModalityEncoder::Vision(VisionEncoder::new(cfg).unwrap());
            prop_assert_eq!(tokens_of(&enc, input, seed), c * a * b + 1);

            // audio: (F/P_f)·(T/P_t) + 1
            let cfg = AudioEncoderConfig {
                mel_bins: a * patch,
                time_frames: b * (patch + 1),
                patch_freq: patch,
                patch_time: patch + 1,
                transformer,
            };
            let input = Tensor::normal(vec![a * patch, b * (patch + 1)], 0.0, 1.0, &mut r).unwrap();
            let enc = ModalityEncoder::Audio(AudioEncoder::new(cfg).unwrap());
            prop_assert_eq!(tokens_of(&enc, input, seed), a * b + 1);

            // eeg: floor((T - K)/S) + 1 + 1
            let kernel = patch + 1;
            let samples = kernel + a * 7 + b;
            let cfg = EegEncoderConfig {
                channels: c + 1,
                samples,
                kernel,
                stride,
                transformer,
            };
            let input = Tensor::normal(vec![c + 1, samples], 0.0, 1.0, &mut r).unwrap();
            let enc = ModalityEncoder::Eeg(EegEncoder::new(cfg).unwrap());
            prop_assert_eq!(
                tokens_of(&enc, input, seed),
                (samples - kernel) / stride + 2
            );
            Ok(())
        },
    )
}

fn tiny_dims() -> DataDims {
    DataDims {
        eeg_channels: 1,
        eeg_samples: 2,
        frames: 1,
        height: 1,
        width: 1,
        mel_bins: 1,
        time_frames: 1,
    }
}

/// Disjointness, coverage, per-cell stratification within one trial of the
/// exact proportion, and determinism.
pub fn split_laws() -> Outcome {
    run(
        32,
        (
            1u32..4,
            20u32..160,
            0.1f64..0.5,
            any::<u64>(),
            any::<bool>(),
        ),
        |(subjects, per, frac, seed, all)| {
            let trials = generate_trials(&SynthConfig {
                subjects,
                trials_per_subject: per,
                dims: tiny_dims(),
                ..SynthConfig::default()
            })
            .unwrap();
            let Ok(splits) = subject_split(&trials, frac, seed, all) else {
                return Ok(());
            };
            prop_assert_eq!(splits.len(), subjects as usize);
            for (subject, s) in &splits {
                let mut union: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                union.sort_unstable();
                let n = union.len();
                union.dedup();
                prop_assert_eq!(union.len(), n, "train and test overlap");
                let expect: Vec<usize> = (0..trials.len())
                    .filter(|&i| {
                        trials[i].subject_id == *subject && (!all || trials[i].is_speaking)
                    })
                    .collect();
                prop_assert_eq!(union, expect);
                for c in 0..NUM_CLASSES {
                    let count =
                        |side: &[usize]| side.iter().filter(|&&i| trials[i].label == c).count();
                    let total = count(&s.train) + count(&s.test);
                    prop_assert!(count(&s.train) > 0 && count(&s.test) > 0);
                    // one rounding per (speaking, label) cell
                    let cells = if all { 1.0 } else { 2.0 };
                    prop_assert!((count(&s.test) as f64 - total as f64 * frac).abs() <= cells);
                }
            }
            prop_assert_eq!(subject_split(&trials, frac, seed, all).unwrap(), splits);
            Ok(())
        },
    )
}

/// Spectrogram present exactly for speaking trials, in generation and in
/// validation.
pub fn presence_law() -> Outcome {
    run(
        24,
        (1u32..4, 1u32..40, any::<u64>()),
        |(subjects, per, seed)| {
            let mut cfg = RunConfig::default().synth_config();
            cfg.subjects = subjects;
            cfg.trials_per_subject = per;
            cfg.dims = tiny_dims();
            cfg.seed = seed;
            let trials = generate_trials(&cfg).unwrap();
            prop_assert_eq!(trials.len(), (subjects * per) as usize);
            for t in &trials {
                prop_assert_eq!(t.spectrogram.is_some(), t.is_speaking);
                prop_assert!(t.validate().is_ok());
                let mut flipped = t.clone();
                flipped.is_speaking = !flipped.is_speaking;
                prop_assert!(flipped.validate().is_err());
            }
            let speaking = trials.iter().filter(|t| t.is_speaking).count();
            prop_assert_eq!(speaking, (subjects * per.div_ceil(2)) as usize);
            Ok(())
        },
    )
}

pub type Suite = (&'static str, fn() -> Outcome);

pub const SUITES: [Suite; 7] = [
    ("softmax normalization", softmax_normalization),
    ("attention row sums", attention_row_sums),
    ("permutation equivariance", permutation_equivariance),
    ("residual-identity block", residual_identity),
    ("token-count formulas", token_counts),
    ("split disjointness/stratification", split_laws),
    ("modality-presence law", presence_law),
];
