//! On-disk checkpoint: `params/` (registry directory) plus `meta.txt`.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::nn::ParamRegistry;

pub const PARAMS_DIR: &str = "params";
pub const META_FILE: &str = "meta.txt";
/// Prefix of echoed run-config entries in `meta.txt`.
pub const CONFIG_PREFIX: &str = "config.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub stage: Stage,
    /// Set for stage-1 checkpoints.
    pub modality: Option<Modality>,
    pub subject: Option<u32>,
    pub seed: u64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub initial_loss: f64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Effective run configuration as `key = value` pairs.
    pub config: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stage = {}", self.stage);
        if let Some(m) = self.modality {
            let _ = writeln!(s, "modality = {m}");
        }
        if let Some(k) = self.subject {
            let _ = writeln!(s, "subject = {k}");
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "train_acc = {}", self.train_acc);
        if let Some(v) = self.val_acc {
            let _ = writeln!(s, "val_acc = {v}");
        }
        let _ = writeln!(s, "initial_loss = {}", self.initial_loss);
        let losses: Vec<String> = self.epoch_losses.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "epoch_losses = {}", losses.join(" "));
        for (k, v) in &self.config {
            let _ = writeln!(s, "{CONFIG_PREFIX}{k} = {v}");
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut stage = None;
        let mut modality = None;
        let mut subject = None;
        let mut seed = None;
        let mut train_acc = None;
        let mut val_acc = None;
        let mut initial_loss = None;
        let mut epoch_losses = None;
        let mut config = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::format(path, format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad("expected `key = value`".into()))?;
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("bad number {v:?}")))
            };
            match key {
                "stage" => stage = Some(value.parse::<Stage>().map_err(|e| bad(e.to_string()))?),
                "modality" => {
                    modality = Some(value.parse::<Modality>().map_err(|e| bad(e.to_string()))?)
                }
                "subject" => {
                    subject = Some(
                        value
                            .parse()
                            .map_err(|_| bad(format!("bad subject {value:?}")))?,
                    )
                }
                "seed" => {
                    seed = Some(
                        value
                            .parse()
                            .map_err(|_| bad(format!("bad seed {value:?}")))?,
                    )
                }
                "train_acc" => train_acc = Some(num(value)?),
                "val_acc" => val_acc = Some(num(value)?),
                "initial_loss" => initial_loss = Some(num(value)?),
                "epoch_losses" => {
                    epoch_losses = Some(
                        value
                            .split_whitespace()
                            .map(num)
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                k => match k.strip_prefix(CONFIG_PREFIX) {
                    Some(c) => config.push((c.to_string(), value.to_string())),
                    None => return Err(bad(format!("unknown key {k:?}"))),
                },
            }
        }
        let need = |what: &str| Error::format(path, format!("missing {what}"));
        Ok(Self {
            stage: stage.ok_or_else(|| need("stage"))?,
            modality,
            subject,
            seed: seed.ok_or_else(|| need("seed"))?,
            train_acc: train_acc.ok_or_else(|| need("train_acc"))?,
            val_acc,
            initial_loss: initial_loss.ok_or_else(|| need("initial_loss"))?,
            epoch_losses: epoch_losses.ok_or_else(|| need("epoch_losses"))?,
            config,
        })
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub registry: ParamRegistry,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.registry.save_dir(dir.join(PARAMS_DIR))?;
        let path = dir.join(META_FILE);
        fs::write(&path, self.meta.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            meta: CheckpointMeta::parse(&text, &path)?,
            registry: ParamRegistry::load_dir(dir.join(PARAMS_DIR))?,
        })
    }
}
