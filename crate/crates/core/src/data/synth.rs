//! Class-conditional synthetic trials with per-modality informativeness.

use std::f32::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mft;
use crate::modality::{Modality, NUM_CLASSES};
use crate::tensor::Tensor;

use super::manifest::{DatasetManifest, DeclaredShapes, Provenance, TrialRecord, MANIFEST_FILE};
use super::trial::{Trial, MAX_SUBJECTS};

pub const MAX_NOISE: f32 = 100.0;

/// Which label information each modality's template encodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SignalLayout {
    /// Every modality has one template per class.
    #[default]
    Full,
    /// Each modality only sees a coarse 3-way grouping of the classes, and
    /// the groupings differ between modalities, so no single modality can
    /// resolve every class but any two together can.
    Partitioned,
}

impl SignalLayout {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalLayout::Full => "full",
            SignalLayout::Partitioned => "partitioned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SignalLayout::Full),
            "partitioned" => Ok(SignalLayout::Partitioned),
            other => Err(Error::Config(format!(
                "unknown signal layout {other:?} (expected full or partitioned)"
            ))),
        }
    }

    /// Number of distinct templates per modality.
    pub fn codes(self) -> usize {
        match self {
            SignalLayout::Full => NUM_CLASSES,
            SignalLayout::Partitioned => 3,
        }
    }

    /// Template index carried by `modality` for `label`.
    pub fn code(self, modality: Modality, label: usize) -> usize {
        const GROUPS: [[usize; NUM_CLASSES]; 3] = [
            // vision: {0,1} {2,3} {4}
            [0, 0, 1, 1, 2],
            // audio: {0,2} {1,3} {4}
            [0, 1, 0, 1, 2],
            // eeg: {1,2} {3,4} {0}
            [2, 0, 0, 1, 1],
        ];
        match self {
            SignalLayout::Full => label,
            SignalLayout::Partitioned => GROUPS[modality.index()][label],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataDims {
    pub eeg_channels: usize,
    pub eeg_samples: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mel_bins: usize,
    pub time_frames: usize,
}

impl Default for DataDims {
    fn default() -> Self {
        Self {
            eeg_channels: 30,
            eeg_samples: 200,
            frames: 4,
            height: 32,
            width: 32,
            mel_bins: 16,
            time_frames: 32,
        }
    }
}

impl DataDims {
    pub fn shapes(&self) -> DeclaredShapes {
        DeclaredShapes {
            eeg: vec![self.eeg_channels, self.eeg_samples],
            frames: vec![self.frames, self.height, self.width],
            spectrogram: vec![self.mel_bins, self.time_frames],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub subjects: u32,
    /// Even trials are speaking trials, so half carry a spectrogram.
    pub trials_per_subject: u32,
    /// Indexed by [`Modality::index`]; each in `[0, 1]`.
    pub informativeness: [f32; 3],
    pub noise: f32,
    pub subject_effect: f32,
    pub layout: SignalLayout,
    pub dims: DataDims,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: MAX_SUBJECTS,
            trials_per_subject: 200,
            informativeness: [0.6, 0.4, 0.3],
            noise: 2.0,
            subject_effect: 0.5,
            layout: SignalLayout::Full,
            dims: DataDims::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_SUBJECTS).contains(&self.subjects) {
            return Err(Error::Config(format!(
                "subjects must be in 1..={MAX_SUBJECTS}, got {}",
                self.subjects
            )));
        }
        if self.trials_per_subject == 0 || self.trials_per_subject > 999 {
            return Err(Error::Config(format!(
                "trials_per_subject must be in 1..=999, got {}",
                self.trials_per_subject
            )));
        }
        for m in Modality::ALL {
            let a = self.informativeness[m.index()];
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!(
                    "{m} informativeness must be in [0, 1], got {a}"
                )));
            }
        }
        if !(0.0..=MAX_NOISE).contains(&self.noise) {
            return Err(Error::Config(format!(
                "noise must be in [0, {MAX_NOISE}], got {}",
                self.noise
            )));
        }
        if !(0.0..=MAX_NOISE).contains(&self.subject_effect) {
            return Err(Error::Config(format!(
                "subject_effect must be in [0, {MAX_NOISE}], got {}",
                self.subject_effect
            )));
        }
        let d = &self.dims;
        let all = [
            d.eeg_channels,
            d.eeg_samples,
            d.frames,
            d.height,
            d.width,
            d.mel_bins,
            d.time_frames,
        ];
        if all.contains(&0) {
            return Err(Error::Config(format!(
                "data dimensions must be non-zero: {d:?}"
            )));
        }
        Ok(())
    }

    /// Canonical text form, hashed into the manifest.
    pub fn canonical(&self) -> String {
        let d = &self.dims;
        let mut s = String::new();
        let _ = writeln!(s, "subjects={}", self.subjects);
        let _ = writeln!(s, "trials_per_subject={}", self.trials_per_subject);
        for m in Modality::ALL {
            let _ = writeln!(s, "informativeness.{m}={}", self.informativeness[m.index()]);
        }
        let _ = writeln!(s, "noise={}", self.noise);
        let _ = writeln!(s, "subject_effect={}", self.subject_effect);
        let _ = writeln!(s, "layout={}", self.layout.as_str());
        let _ = writeln!(
            s,
            "dims={}x{},{}x{}x{},{}x{}",
            d.eeg_channels, d.eeg_samples, d.frames, d.height, d.width, d.mel_bins, d.time_frames
        );
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Label and speaking flag for trial index `t`: speaking and listening
/// alternate, and labels cycle so both halves are class balanced.
pub fn trial_plan(t: u32) -> (usize, bool) {
    (((t / 2) as usize) % NUM_CLASSES, t.is_multiple_of(2))
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(r: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(r)
}

fn unit_rms(v: &mut [f32]) {
    let ms = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / v.len() as f64;
    if ms > 0.0 {
        let k = (1.0 / ms.sqrt()) as f32;
        v.iter_mut().for_each(|x| *x *= k);
    }
}

/// Templates shared by every subject plus per-subject EEG offsets.
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    config: SynthConfig,
    frames: Vec<Vec<f32>>,
    spectrogram: Vec<Vec<f32>>,
    eeg: Vec<Vec<f32>>,
}

impl SyntheticGenerator {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dims;
        let codes = config.layout.codes();
        let mut r = rng(config.seed, 0);

        let frames = (0..codes)
            .map(|_| {
                let mut plane: Vec<f32> = (0..d.height * d.width).map(|_| normal(&mut r)).collect();
                unit_rms(&mut plane);
                let mut stack = Vec::with_capacity(d.frames * plane.len());
                for _ in 0..d.frames {
                    stack.extend_from_slice(&plane);
                }
                stack
            })
            .collect();

        let spectrogram = (0..codes)
            .map(|k| {
                let centre = (k as f32 + 0.5) * d.mel_bins as f32 / codes as f32;
                let width = (d.mel_bins as f32 / (2.0 * codes as f32)).max(0.5);
                let mut v = Vec::with_capacity(d.mel_bins * d.time_frames);
                for f in 0..d.mel_bins {
                    let band = (-(f as f32 - centre).powi(2) / (2.0 * width * width)).exp();
                    for t in 0..d.time_frames {
                        let rhythm = 1.0
                            + 0.5
                                * (2.0 * PI * (k + 1) as f32 * t as f32 / d.time_frames as f32)
                                    .cos();
                        v.push(band * rhythm);
                    }
                }
                unit_rms(&mut v);
                v
            })
            .collect();

        let eeg = (0..codes)
            .map(|k| {
                let f1 = 2.0 + 3.0 * k as f32;
                let f2 = 2.0 * f1 + 1.0;
                let mut v = Vec::with_capacity(d.eeg_channels * d.eeg_samples);
                for _ in 0..d.eeg_channels {
                    let w = normal(&mut r);
                    let p1 = r.random_range(0.0..2.0 * PI);
                    let p2 = r.random_range(0.0..2.0 * PI);
                    for t in 0..d.eeg_samples {
                        let x = t as f32 / d.eeg_samples as f32;
                        v.push(
                            w * ((2.0 * PI * f1 * x + p1).sin()
                                + 0.5 * (2.0 * PI * f2 * x + p2).sin()),
                        );
                    }
                }
                unit_rms(&mut v);
                v
            })
            .collect();

        Ok(Self {
            config,
            frames,
            spectrogram,
            eeg,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    fn subject_offsets(&self, subject: u32) -> Vec<f32> {
        let mut r = rng(self.config.seed, subject as u64);
        (0..self.config.dims.eeg_channels)
            .map(|_| self.config.subject_effect * normal(&mut r))
            .collect()
    }

    fn signal(&self, template: &[f32], modality: Modality, r: &mut ChaCha8Rng) -> Vec<f32> {
        let a = self.config.informativeness[modality.index()];
        let s = self.config.noise * (1.0 - a);
        template.iter().map(|&x| a * x + s * normal(r)).collect()
    }

    pub fn trial(&self, subject: u32, t: u32) -> Result<Trial> {
        if !(1..=self.config.subjects).contains(&subject) || t >= self.config.trials_per_subject {
            return Err(Error::Usage(format!(
                "trial {t} of subject {subject} is outside the configured dataset"
            )));
        }
        self.make_trial(subject, t, &self.subject_offsets(subject))
    }

    fn make_trial(&self, subject: u32, t: u32, offsets: &[f32]) -> Result<Trial> {
        let d = self.config.dims;
        let layout = self.config.layout;
        let (label, is_speaking) = trial_plan(t);
        let mut r = rng(
            self.config.seed,
            (1 << 40) | ((subject as u64) << 20) | t as u64,
        );

        let mut eeg = self.signal(
            &self.eeg[layout.code(Modality::Eeg, label)],
            Modality::Eeg,
            &mut r,
        );
        for (c, row) in eeg.chunks_mut(d.eeg_samples).enumerate() {
            row.iter_mut().for_each(|x| *x += offsets[c]);
        }
        let frames = self.signal(
            &self.frames[layout.code(Modality::Vision, label)],
            Modality::Vision,
            &mut r,
        );
        let spectrogram = if is_speaking {
            let v = self.signal(
                &self.spectrogram[layout.code(Modality::Audio, label)],
                Modality::Audio,
                &mut r,
            );
            Some(Tensor::new(vec![d.mel_bins, d.time_frames], v)?)
        } else {
            None
        };
        Ok(Trial {
            subject_id: subject,
            trial_id: t,
            label,
            eeg: Tensor::new(vec![d.eeg_channels, d.eeg_samples], eeg)?,
            frames: Tensor::new(vec![d.frames, d.height, d.width], frames)?,
            spectrogram,
            is_speaking,
        })
    }

    pub fn subject(&self, subject: u32) -> Result<Vec<Trial>> {
        if !(1..=self.config.subjects).contains(&subject) {
            return Err(Error::Usage(format!(
                "subject {subject} is outside 1..={}",
                self.config.subjects
            )));
        }
        let offsets = self.subject_offsets(subject);
        (0..self.config.trials_per_subject)
            .map(|t| self.make_trial(subject, t, &offsets))
            .collect()
    }
}

/// Every trial of every subject, in memory.
pub fn generate_trials(config: &SynthConfig) -> Result<Vec<Trial>> {
    let g = SyntheticGenerator::new(config.clone())?;
    let mut out = Vec::new();
    for s in 1..=config.subjects {
        out.extend(g.subject(s)?);
    }
    Ok(out)
}

pub(crate) fn trial_paths(
    subject: u32,
    trial: u32,
    speaking: bool,
) -> (PathBuf, PathBuf, Option<PathBuf>) {
    let dir = PathBuf::from(format!("sub{subject:02}"));
    let stem = format!("trial{trial:03}");
    (
        dir.join(format!("{stem}.eeg.mft")),
        dir.join(format!("{stem}.frm.mft")),
        speaking.then(|| dir.join(format!("{stem}.spc.mft"))),
    )
}

/// Writes every trial under `out` plus its manifest and returns the manifest.
pub fn generate_synthetic(config: &SynthConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let g = SyntheticGenerator::new(config.clone())?;
    let mut records = Vec::new();
    for s in 1..=config.subjects {
        let dir = out.join(format!("sub{s:02}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for trial in g.subject(s)? {
            let (eeg, frames, spc) = trial_paths(s, trial.trial_id, trial.is_speaking);
            mft::save(out.join(&eeg), &trial.eeg)?;
            mft::save(out.join(&frames), &trial.frames)?;
            if let (Some(p), Some(t)) = (&spc, &trial.spectrogram) {
                mft::save(out.join(p), t)?;
            }
            records.push(TrialRecord {
                subject_id: s,
                trial_id: trial.trial_id,
                label: trial.label,
                is_speaking: trial.is_speaking,
                eeg,
                frames,
                spectrogram: spc,
            });
        }
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        records,
        provenance: Some(Provenance {
            seed: config.seed,
            config_hash: config.hash(),
        }),
        shapes: Some(config.dims.shapes()),
    };
    manifest.write(out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Permutes labels among each subject's trials, keeping class counts.
pub fn shuffle_labels(trials: &mut [Trial], seed: u64) {
    use rand::seq::SliceRandom;
    let mut subjects: Vec<u32> = trials.iter().map(|t| t.subject_id).collect();
    subjects.sort_unstable();
    subjects.dedup();
    for s in subjects {
        let idx: Vec<usize> = (0..trials.len())
            .filter(|&i| trials[i].subject_id == s)
            .collect();
        let mut labels: Vec<usize> = idx.iter().map(|&i| trials[i].label).collect();
        labels.shuffle(&mut rng(seed, (2 << 40) | s as u64));
        for (&i, l) in idx.iter().zip(labels) {
            trials[i].label = l;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthConfig {
        SynthConfig {
            subjects: 2,
            trials_per_subject: 10,
            dims: DataDims {
                eeg_channels: 3,
                eeg_samples: 20,
                frames: 2,
                height: 4,
                width: 4,
                mel_bins: 4,
                time_frames: 8,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_counts() {
        let c = SynthConfig::default();
        let total = c.subjects * c.trials_per_subject;
        let speaking = (0..c.trials_per_subject)
            .filter(|&t| trial_plan(t).1)
            .count() as u32
            * c.subjects;
        assert_eq!(total, 8400);
        assert_eq!(speaking, 4200);
    }

    #[test]
    fn plan_is_balanced_within_each_half() {
        let mut counts = [[0; NUM_CLASSES]; 2];
        for t in 0..200 {
            let (l, sp) = trial_plan(t);
            counts[sp as usize][l] += 1;
        }
        assert_eq!(counts, [[20; NUM_CLASSES]; 2]);
    }

    #[test]
    fn trials_obey_presence_law() {
        for t in generate_trials(&tiny()).unwrap() {
            t.validate().unwrap();
            assert_eq!(t.spectrogram.is_some(), t.is_speaking);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_trials(&tiny()).unwrap();
        let b = generate_trials(&tiny()).unwrap();
        assert_eq!(a, b);
        let c = generate_trials(&SynthConfig { seed: 1, ..tiny() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_trial_matches_bulk() {
        let g = SyntheticGenerator::new(tiny()).unwrap();
        let all = g.subject(2).unwrap();
        assert_eq!(g.trial(2, 7).unwrap(), all[7]);
    }

    #[test]
    fn zero_informativeness_has_no_template() {
        let c = SynthConfig {
            informativeness: [0.0; 3],
            subject_effect: 0.0,
            ..tiny()
        };
        let g = SyntheticGenerator::new(c).unwrap();
        // a different layout changes only the templates, which carry zero weight
        let p = SyntheticGenerator::new(SynthConfig {
            layout: SignalLayout::Partitioned,
            ..g.config().clone()
        })
        .unwrap();
        assert_eq!(g.trial(1, 3).unwrap().frames, p.trial(1, 3).unwrap().frames);
    }

    #[test]
    fn full_informativeness_is_noise_free() {
        let c = SynthConfig {
            informativeness: [1.0; 3],
            ..tiny()
        };
        let g = SyntheticGenerator::new(c).unwrap();
        // trials 0 and 1 both carry label 0
        let a = g.trial(1, 0).unwrap();
        let b = g.trial(1, 1).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.eeg, b.eeg);
    }

    #[test]
    fn partitioned_groups_cover_labels_jointly() {
        let l = SignalLayout::Partitioned;
        for m in Modality::ALL {
            let mut codes: Vec<usize> = (0..NUM_CLASSES).map(|c| l.code(m, c)).collect();
            codes.sort_unstable();
            codes.dedup();
            assert_eq!(codes.len(), 3);
        }
        // any pair of modalities separates all five classes
        for (i, a) in Modality::ALL.iter().enumerate() {
            for b in &Modality::ALL[i + 1..] {
                let mut keys: Vec<(usize, usize)> = (0..NUM_CLASSES)
                    .map(|c| (l.code(*a, c), l.code(*b, c)))
                    .collect();
                keys.sort_unstable();
                keys.dedup();
                assert_eq!(keys.len(), NUM_CLASSES, "{a} + {b}");
            }
        }
    }

    #[test]
    fn rejects_out_of_range_knobs() {
        let mut c = tiny();
        c.informativeness[1] = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = SynthConfig {
            noise: -1.0,
            ..tiny()
        };
        assert!(c.validate().is_err());
        let c = SynthConfig {
            subjects: 43,
            ..tiny()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn shuffled_labels_keep_counts() {
        let mut t = generate_trials(&tiny()).unwrap();
        let before: Vec<usize> = t.iter().map(|t| t.label).collect();
        shuffle_labels(&mut t, 3);
        let mut after: Vec<usize> = t.iter().map(|t| t.label).collect();
        assert_ne!(before, after);
        let mut sorted = before.clone();
        sorted.sort_unstable();
        after.sort_unstable();
        assert_eq!(sorted, after);
    }
}
