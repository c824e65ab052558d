use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub const NUM_CLASSES: usize = 5;

/// Class names in label order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] =
    ["anger", "sadness", "neutrality", "calmness", "happiness"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Vision,
    Audio,
    Eeg,
}

impl Modality {
    /// Fixed fusion order.
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Audio, Modality::Eeg];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Audio => "audio",
            Modality::Eeg => "eeg",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Modality::Vision => 0,
            Modality::Audio => 1,
            Modality::Eeg => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vision" => Ok(Modality::Vision),
            "audio" => Ok(Modality::Audio),
            "eeg" => Ok(Modality::Eeg),
            other => Err(Error::Config(format!(
                "unknown modality {other:?} (expected vision, audio or eeg)"
            ))),
        }
    }
}
