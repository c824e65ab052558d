use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::Trial;
use crate::encoders::{ModalityEncoder, UnimodalClassifier};
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionHead};
use crate::modality::{Modality, NUM_CLASSES};
use crate::nn::{BoundParams, ParamRegistry};
use crate::tensor::Tensor;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, CheckpointMeta, Stage};

/// Trials per tape during evaluation.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }

    pub fn finetune_default() -> Self {
        Self {
            adam: AdamConfig {
                learning_rate: 5e-4,
                ..AdamConfig::default()
            },
            ..Self::pretrain_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.adam.validate()
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `predictions` equal to the trial labels.
pub fn accuracy(predictions: &[usize], trials: &[&Trial]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    if predictions.len() != trials.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} trials",
            predictions.len(),
            trials.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(trials)
        .filter(|(p, t)| **p == t.label)
        .count();
    Ok(hits as f64 / trials.len() as f64)
}

fn stack_rows(tape: &Tape, rows: &[Var]) -> Result<Var> {
    let rows = rows
        .iter()
        .map(|&r| tape.reshape(r, vec![1, NUM_CLASSES]))
        .collect::<Result<Vec<_>>>()?;
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        tape.concat(&rows, 0)
    }
}

/// Logits `[n, classes]` for sample indices `idx`.
trait BatchLogits: Fn(&Tape, &BoundParams, &[usize]) -> Result<Var> {}
impl<F: Fn(&Tape, &BoundParams, &[usize]) -> Result<Var>> BatchLogits for F {}

fn predictions(reg: &ParamRegistry, n: usize, logits: &impl BatchLogits) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for chunk in all.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let p = reg.bind(&tape);
        let l = tape.value(logits(&tape, &p, chunk)?)?;
        out.extend(l.data().chunks(NUM_CLASSES).map(argmax));
    }
    Ok(out)
}

fn mean_loss(reg: &ParamRegistry, labels: &[usize], logits: &impl BatchLogits) -> Result<f64> {
    let all: Vec<usize> = (0..labels.len()).collect();
    let mut total = 0.0;
    for chunk in all.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let p = reg.bind(&tape);
        let l = logits(&tape, &p, chunk)?;
        let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        total += tape.scalar_f64(tape.cross_entropy(l, &y)?)? * chunk.len() as f64;
    }
    Ok(total / labels.len() as f64)
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(op) => {
            Error::Divergence(format!("non-finite value from {op} in epoch {epoch}"))
        }
        other => other,
    }
}

/// Mini-batch Adam over the trainable entries of `reg`. Returns the loss
/// before training and the mean loss of every epoch.
fn fit(
    reg: &mut ParamRegistry,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    logits: impl BatchLogits,
) -> Result<(f64, Vec<f64>)> {
    let initial = mean_loss(reg, labels, &logits).map_err(|e| diverged(e, 0))?;
    if !initial.is_finite() {
        return Err(Error::Divergence(format!("initial loss is {initial}")));
    }
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let p = reg.bind(&tape);
            let run = || -> Result<(f64, _)> {
                let l = logits(&tape, &p, batch)?;
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let loss = tape.cross_entropy(l, &y)?;
                let value = tape.scalar_f64(loss)?;
                if !value.is_finite() {
                    return Err(Error::Divergence(format!(
                        "loss became {value} in epoch {epoch}"
                    )));
                }
                let mut grads = tape.backward(loss)?;
                Ok((value, p.gradients(&mut grads)))
            };
            let (value, grads) = run().map_err(|e| diverged(e, epoch))?;
            adam_step(reg, &grads, &mut state, &cfg.adam)?;
            total += value * batch.len() as f64;
        }
        let mean = total / labels.len() as f64;
        epochs.push(mean);
    }
    if let Some((name, _)) = reg.iter().find(|(_, e)| !e.value.is_finite()) {
        return Err(Error::Divergence(format!(
            "parameter {name} is no longer finite"
        )));
    }
    Ok((initial, epochs))
}

fn common_subject(trials: &[&Trial]) -> Option<u32> {
    let first = trials.first()?.subject_id;
    trials
        .iter()
        .all(|t| t.subject_id == first)
        .then_some(first)
}

fn with_modality<'a>(trials: &[&'a Trial], m: Modality) -> Vec<&'a Trial> {
    trials
        .iter()
        .copied()
        .filter(|t| m != Modality::Audio || t.spectrogram.is_some())
        .collect()
}

pub fn predict_unimodal(
    clf: &UnimodalClassifier,
    reg: &ParamRegistry,
    trials: &[&Trial],
) -> Result<Vec<usize>> {
    predictions(
        reg,
        trials.len(),
        &|tape: &Tape, p: &BoundParams, idx: &[usize]| {
            let rows = idx
                .iter()
                .map(|&i| clf.logits(tape, p, trials[i]))
                .collect::<Result<Vec<_>>>()?;
            stack_rows(tape, &rows)
        },
    )
}

pub fn evaluate_unimodal(
    clf: &UnimodalClassifier,
    reg: &ParamRegistry,
    trials: &[&Trial],
) -> Result<f64> {
    accuracy(&predict_unimodal(clf, reg, trials)?, trials)
}

/// Stage 1: trains one encoder and its linear head from scratch.
pub fn pretrain_modality(
    encoder: &ModalityEncoder,
    train: &[&Trial],
    val: &[&Trial],
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let m = encoder.modality();
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let train = with_modality(train, m);
    let val = with_modality(val, m);
    if train.is_empty() {
        return Err(Error::Data(format!(
            "no training trial carries the {m} modality"
        )));
    }
    let clf = UnimodalClassifier::new(encoder.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut reg = ParamRegistry::new();
    clf.init(&mut reg, &mut rng)?;
    let labels: Vec<usize> = train.iter().map(|t| t.label).collect();
    let (initial_loss, epoch_losses) = fit(
        &mut reg,
        &labels,
        cfg,
        &mut rng,
        |tape: &Tape, p: &BoundParams, idx: &[usize]| {
            let rows = idx
                .iter()
                .map(|&i| clf.logits(tape, p, train[i]))
                .collect::<Result<Vec<_>>>()?;
            stack_rows(tape, &rows)
        },
    )?;
    let train_acc = evaluate_unimodal(&clf, &reg, &train)?;
    let val_acc = if val.is_empty() {
        None
    } else {
        Some(evaluate_unimodal(&clf, &reg, &val)?)
    };
    Ok(Checkpoint {
        registry: reg,
        meta: CheckpointMeta {
            stage: Stage::Pretrain,
            modality: Some(m),
            subject: common_subject(&train),
            seed: cfg.seed,
            train_acc,
            val_acc,
            initial_loss,
            epoch_losses,
            config: Vec::new(),
        },
    })
}

/// Frozen encoders plus the fusion head.
#[derive(Clone, Debug)]
pub struct MultimodalModel {
    /// Vision, audio, eeg.
    pub encoders: [ModalityEncoder; 3],
    pub fusion: FusionHead,
}

impl MultimodalModel {
    /// Checks encoder order and widths, and sizes the fusion input to match.
    pub fn new(encoders: [ModalityEncoder; 3], fusion: FusionConfig) -> Result<Self> {
        for (e, m) in encoders.iter().zip(Modality::ALL) {
            if e.modality() != m {
                return Err(Error::Usage(format!(
                    "encoder slot {m} holds a {} encoder",
                    e.modality()
                )));
            }
        }
        let widths: Vec<usize> = encoders.iter().map(ModalityEncoder::d_model).collect();
        if widths.iter().any(|&d| d != widths[0]) {
            return Err(Error::Config(format!(
                "d_model mismatch across encoder checkpoints: vision {}, audio {}, eeg {}",
                widths[0], widths[1], widths[2]
            )));
        }
        let fusion = FusionHead::new(FusionConfig {
            d_model: widths[0],
            ..fusion
        })?;
        Ok(Self { encoders, fusion })
    }

    /// Pooled encoder features `[d_model]` ×3 for each trial.
    pub fn features(&self, reg: &ParamRegistry, trials: &[&Trial]) -> Result<Vec<[Tensor; 3]>> {
        let mut out = Vec::with_capacity(trials.len());
        for chunk in trials.chunks(EVAL_CHUNK) {
            let tape = Tape::new();
            let p = reg.bind(&tape);
            for t in chunk {
                let mut f = Vec::with_capacity(3);
                for e in &self.encoders {
                    f.push(tape.value(e.encode_trial(&tape, &p, t)?.pooled)?);
                }
                out.push(f.try_into().expect("three encoders"));
            }
        }
        Ok(out)
    }

    fn fused_logits(
        &self,
        tape: &Tape,
        p: &BoundParams,
        feats: &[[Tensor; 3]],
        idx: &[usize],
    ) -> Result<Var> {
        let rows = idx
            .iter()
            .map(|&i| {
                let [a, b, c] = &feats[i];
                let f = [
                    tape.constant(a.clone()),
                    tape.constant(b.clone()),
                    tape.constant(c.clone()),
                ];
                self.fusion.logits(tape, p, f)
            })
            .collect::<Result<Vec<_>>>()?;
        stack_rows(tape, &rows)
    }

    pub fn predict(&self, reg: &ParamRegistry, trials: &[&Trial]) -> Result<Vec<usize>> {
        let trials = require_multimodal(trials)?;
        let feats = self.features(reg, &trials)?;
        predictions(
            reg,
            trials.len(),
            &|tape: &Tape, p: &BoundParams, idx: &[usize]| self.fused_logits(tape, p, &feats, idx),
        )
    }

    pub fn evaluate(&self, reg: &ParamRegistry, trials: &[&Trial]) -> Result<f64> {
        let trials = require_multimodal(trials)?;
        accuracy(&self.predict(reg, &trials)?, &trials)
    }
}

fn multimodal<'a>(trials: &[&'a Trial]) -> Vec<&'a Trial> {
    trials
        .iter()
        .copied()
        .filter(|t| t.has_all_modalities())
        .collect()
}

fn require_multimodal<'a>(trials: &[&'a Trial]) -> Result<Vec<&'a Trial>> {
    let out = multimodal(trials);
    if out.is_empty() {
        return Err(Error::Data("no trial has all three modalities".into()));
    }
    Ok(out)
}

/// Stage 2: freezes the three encoders and trains only the fusion head.
/// Stage-1 heads in the encoder registries are dropped.
pub fn finetune_fusion(
    model: &MultimodalModel,
    encoder_params: [&ParamRegistry; 3],
    train: &[&Trial],
    val: &[&Trial],
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut frozen = ParamRegistry::new();
    for (e, reg) in model.encoders.iter().zip(encoder_params) {
        e.check_params(reg)?;
        let mut sub = reg.subset(&e.prefix());
        sub.freeze_prefix("");
        frozen.extend(sub)?;
    }
    let train = require_multimodal(train)?;
    let val = multimodal(val);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fusion = ParamRegistry::new();
    model.fusion.init(&mut fusion, &mut rng)?;

    // The encoders never change, so their features are computed once.
    let feats = model.features(&frozen, &train)?;
    let labels: Vec<usize> = train.iter().map(|t| t.label).collect();
    let (initial_loss, epoch_losses) = fit(
        &mut fusion,
        &labels,
        cfg,
        &mut rng,
        |tape: &Tape, p: &BoundParams, idx: &[usize]| model.fused_logits(tape, p, &feats, idx),
    )?;

    let mut registry = frozen;
    registry.extend(fusion)?;
    let train_acc = model.evaluate(&registry, &train)?;
    let val_acc = if val.is_empty() {
        None
    } else {
        Some(model.evaluate(&registry, &val)?)
    };
    Ok(Checkpoint {
        registry,
        meta: CheckpointMeta {
            stage: Stage::Finetune,
            modality: None,
            subject: common_subject(&train),
            seed: cfg.seed,
            train_acc,
            val_acc,
            initial_loss,
            epoch_losses,
            config: Vec::new(),
        },
    })
}
