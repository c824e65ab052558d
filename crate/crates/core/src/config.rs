//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::{DataDims, SignalLayout, SynthConfig, DEFAULT_TEST_FRACTION};
use crate::encoders::{
    AudioEncoder, AudioEncoderConfig, EegEncoder, EegEncoderConfig, ModalityEncoder,
    TransformerConfig, VisionEncoder, VisionEncoderConfig,
};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::modality::Modality;
use crate::train::{AdamConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub transformer: TransformerConfig,
    pub vision_patch: usize,
    pub audio_patch_freq: usize,
    pub audio_patch_time: usize,
    pub eeg_kernel: usize,
    pub eeg_stride: usize,
    pub fusion: FusionConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub test_fraction: f64,
    /// Index of an independent train/test draw; repeated runs use 0, 1, ...
    pub split_repeat: u32,
    /// Permute labels within each subject before splitting (chance-level
    /// control runs).
    pub shuffle_labels: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let v = VisionEncoderConfig::default();
        let a = AudioEncoderConfig::default();
        let e = EegEncoderConfig::default();
        Self {
            synth: SynthConfig::default(),
            transformer: TransformerConfig::default(),
            vision_patch: v.patch,
            audio_patch_freq: a.patch_freq,
            audio_patch_time: a.patch_time,
            eeg_kernel: e.kernel,
            eeg_stride: e.stride,
            fusion: FusionConfig::default(),
            pretrain: TrainConfig::pretrain_default(),
            finetune: TrainConfig::finetune_default(),
            test_fraction: DEFAULT_TEST_FRACTION,
            split_repeat: 0,
            shuffle_labels: false,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!(
            "invalid value {value:?} for {key} (expected true or false)"
        )),
    }
}

impl RunConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let d = &s.dims;
        let t = &self.transformer;
        let f = &self.fusion;
        let (p, q) = (&self.pretrain, &self.finetune);
        vec![
            ("seed", self.seed.to_string()),
            ("synth.subjects", s.subjects.to_string()),
            ("synth.trials_per_subject", s.trials_per_subject.to_string()),
            (
                "synth.informativeness.vision",
                s.informativeness[0].to_string(),
            ),
            (
                "synth.informativeness.audio",
                s.informativeness[1].to_string(),
            ),
            (
                "synth.informativeness.eeg",
                s.informativeness[2].to_string(),
            ),
            ("synth.noise", s.noise.to_string()),
            ("synth.subject_effect", s.subject_effect.to_string()),
            ("synth.layout", s.layout.as_str().to_string()),
            ("data.eeg_channels", d.eeg_channels.to_string()),
            ("data.eeg_samples", d.eeg_samples.to_string()),
            ("data.frames", d.frames.to_string()),
            ("data.height", d.height.to_string()),
            ("data.width", d.width.to_string()),
            ("data.mel_bins", d.mel_bins.to_string()),
            ("data.time_frames", d.time_frames.to_string()),
            ("model.d_model", t.d_model.to_string()),
            ("model.blocks", t.blocks.to_string()),
            ("model.heads", t.heads.to_string()),
            ("model.d_ff", t.d_ff.to_string()),
            ("vision.patch", self.vision_patch.to_string()),
            ("audio.patch_freq", self.audio_patch_freq.to_string()),
            ("audio.patch_time", self.audio_patch_time.to_string()),
            ("eeg.kernel", self.eeg_kernel.to_string()),
            ("eeg.stride", self.eeg_stride.to_string()),
            ("fusion.d_fuse", f.d_fuse.to_string()),
            ("fusion.heads", f.heads.to_string()),
            ("fusion.hidden", f.hidden.to_string()),
            (
                "fusion.modality_embeddings",
                f.modality_embeddings.to_string(),
            ),
            ("pretrain.epochs", p.epochs.to_string()),
            ("pretrain.batch_size", p.batch_size.to_string()),
            ("pretrain.learning_rate", p.adam.learning_rate.to_string()),
            ("finetune.epochs", q.epochs.to_string()),
            ("finetune.batch_size", q.batch_size.to_string()),
            ("finetune.learning_rate", q.adam.learning_rate.to_string()),
            ("adam.beta1", p.adam.beta1.to_string()),
            ("adam.beta2", p.adam.beta2.to_string()),
            ("adam.epsilon", p.adam.epsilon.to_string()),
            ("split.test_fraction", self.test_fraction.to_string()),
            ("split.repeat", self.split_repeat.to_string()),
            ("train.shuffle_labels", self.shuffle_labels.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default()
            .entries()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let s = &mut self.synth;
        let d = &mut s.dims;
        let t = &mut self.transformer;
        let f = &mut self.fusion;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "synth.subjects" => s.subjects = parse(key, value)?,
            "synth.trials_per_subject" => s.trials_per_subject = parse(key, value)?,
            "synth.informativeness.vision" => s.informativeness[0] = parse(key, value)?,
            "synth.informativeness.audio" => s.informativeness[1] = parse(key, value)?,
            "synth.informativeness.eeg" => s.informativeness[2] = parse(key, value)?,
            "synth.noise" => s.noise = parse(key, value)?,
            "synth.subject_effect" => s.subject_effect = parse(key, value)?,
            "synth.layout" => s.layout = SignalLayout::parse(value).map_err(|e| e.to_string())?,
            "data.eeg_channels" => d.eeg_channels = parse(key, value)?,
            "data.eeg_samples" => d.eeg_samples = parse(key, value)?,
            "data.frames" => d.frames = parse(key, value)?,
            "data.height" => d.height = parse(key, value)?,
            "data.width" => d.width = parse(key, value)?,
            "data.mel_bins" => d.mel_bins = parse(key, value)?,
            "data.time_frames" => d.time_frames = parse(key, value)?,
            "model.d_model" => t.d_model = parse(key, value)?,
            "model.blocks" => t.blocks = parse(key, value)?,
            "model.heads" => t.heads = parse(key, value)?,
            "model.d_ff" => t.d_ff = parse(key, value)?,
            "vision.patch" => self.vision_patch = parse(key, value)?,
            "audio.patch_freq" => self.audio_patch_freq = parse(key, value)?,
            "audio.patch_time" => self.audio_patch_time = parse(key, value)?,
            "eeg.kernel" => self.eeg_kernel = parse(key, value)?,
            "eeg.stride" => self.eeg_stride = parse(key, value)?,
            "fusion.d_fuse" => f.d_fuse = parse(key, value)?,
            "fusion.heads" => f.heads = parse(key, value)?,
            "fusion.hidden" => f.hidden = parse(key, value)?,
            "fusion.modality_embeddings" => f.modality_embeddings = parse_bool(key, value)?,
            "pretrain.epochs" => self.pretrain.epochs = parse(key, value)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, value)?,
            "pretrain.learning_rate" => self.pretrain.adam.learning_rate = parse(key, value)?,
            "finetune.epochs" => self.finetune.epochs = parse(key, value)?,
            "finetune.batch_size" => self.finetune.batch_size = parse(key, value)?,
            "finetune.learning_rate" => self.finetune.adam.learning_rate = parse(key, value)?,
            "adam.beta1" | "adam.beta2" | "adam.epsilon" => {
                let v: f32 = parse(key, value)?;
                for a in [&mut self.pretrain.adam, &mut self.finetune.adam] {
                    match key {
                        "adam.beta1" => a.beta1 = v,
                        "adam.beta2" => a.beta2 = v,
                        _ => a.epsilon = v,
                    }
                }
            }
            "split.test_fraction" => self.test_fraction = parse(key, value)?,
            "split.repeat" => self.split_repeat = parse(key, value)?,
            "train.shuffle_labels" => self.shuffle_labels = parse_bool(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parses config text; keys not listed are left at their defaults.
    /// `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{origin}:{}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(at)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Rebuilds a configuration from echoed pairs, e.g. a checkpoint's.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v).map_err(Error::Config)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Seed of the train/test split; repeat 0 uses the run seed itself.
    pub fn split_seed(&self) -> u64 {
        self.seed
            .wrapping_add((self.split_repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn dims(&self) -> DataDims {
        self.synth.dims
    }

    pub fn vision_config(&self) -> VisionEncoderConfig {
        let d = self.dims();
        VisionEncoderConfig {
            frames: d.frames,
            height: d.height,
            width: d.width,
            patch: self.vision_patch,
            transformer: self.transformer,
        }
    }

    pub fn audio_config(&self) -> AudioEncoderConfig {
        let d = self.dims();
        AudioEncoderConfig {
            mel_bins: d.mel_bins,
            time_frames: d.time_frames,
            patch_freq: self.audio_patch_freq,
            patch_time: self.audio_patch_time,
            transformer: self.transformer,
        }
    }

    pub fn eeg_config(&self) -> EegEncoderConfig {
        let d = self.dims();
        EegEncoderConfig {
            channels: d.eeg_channels,
            samples: d.eeg_samples,
            kernel: self.eeg_kernel,
            stride: self.eeg_stride,
            transformer: self.transformer,
        }
    }

    pub fn encoder(&self, m: Modality) -> Result<ModalityEncoder> {
        Ok(match m {
            Modality::Vision => ModalityEncoder::Vision(VisionEncoder::new(self.vision_config())?),
            Modality::Audio => ModalityEncoder::Audio(AudioEncoder::new(self.audio_config())?),
            Modality::Eeg => ModalityEncoder::Eeg(EegEncoder::new(self.eeg_config())?),
        })
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            d_model: self.transformer.d_model,
            ..self.fusion
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.pretrain
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.finetune
        }
    }

    pub fn adam(&self) -> AdamConfig {
        self.pretrain.adam
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.vision_config().validate()?;
        self.audio_config().validate()?;
        self.eeg_config().validate()?;
        self.fusion_config().validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}
