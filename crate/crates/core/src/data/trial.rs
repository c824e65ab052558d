use crate::error::{Error, Result};
use crate::modality::NUM_CLASSES;
use crate::tensor::Tensor;

pub const MAX_SUBJECTS: u32 = 42;

/// One recorded interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub subject_id: u32,
    pub trial_id: u32,
    /// anger=0, sadness=1, neutrality=2, calmness=3, happiness=4
    pub label: usize,
    /// `[channels, samples]`
    pub eeg: Tensor,
    /// `[frames, height, width]`
    pub frames: Tensor,
    /// `[mel_bins, time_frames]`; present exactly for speaking trials.
    pub spectrogram: Option<Tensor>,
    pub is_speaking: bool,
}

impl Trial {
    pub fn validate(&self) -> Result<()> {
        let who = || format!("subject {} trial {}", self.subject_id, self.trial_id);
        if !(1..=MAX_SUBJECTS).contains(&self.subject_id) {
            return Err(Error::Data(format!(
                "{}: subject out of range 1..{MAX_SUBJECTS}",
                who()
            )));
        }
        if self.label >= NUM_CLASSES {
            return Err(Error::Data(format!(
                "{}: label {} outside 0..{NUM_CLASSES}",
                who(),
                self.label
            )));
        }
        if self.spectrogram.is_some() != self.is_speaking {
            return Err(Error::Data(format!(
                "{}: spectrogram must be present exactly for speaking trials (speaking={}, spectrogram={})",
                who(),
                self.is_speaking,
                self.spectrogram.is_some()
            )));
        }
        if self.eeg.rank() != 2 || self.frames.rank() != 3 {
            return Err(Error::Data(format!(
                "{}: eeg must be 2-D and frames 3-D, got {:?} and {:?}",
                who(),
                self.eeg.shape(),
                self.frames.shape()
            )));
        }
        if let Some(s) = &self.spectrogram {
            if s.rank() != 2 {
                return Err(Error::Data(format!(
                    "{}: spectrogram must be 2-D, got {:?}",
                    who(),
                    s.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn has_all_modalities(&self) -> bool {
        self.spectrogram.is_some()
    }
}
