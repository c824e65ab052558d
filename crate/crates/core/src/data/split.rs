//! Per-subject train/test partition, stratified by label.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::modality::NUM_CLASSES;

use super::trial::Trial;

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// Indices into the slice given to [`subject_split`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubjectSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SubjectSplit {
    pub fn train_trials<'a>(&self, trials: &'a [Trial]) -> Vec<&'a Trial> {
        self.train.iter().map(|&i| &trials[i]).collect()
    }

    pub fn test_trials<'a>(&self, trials: &'a [Trial]) -> Vec<&'a Trial> {
        self.test.iter().map(|&i| &trials[i]).collect()
    }
}

/// Splits each subject's trials independently.
///
/// Stratification runs inside every (speaking, label) cell with a cell-local
/// RNG stream, so the split restricted to speaking trials is the same whether
/// or not listening trials were present. Within a cell the test side gets
/// `round(n · test_fraction)` trials.
pub fn subject_split(
    trials: &[Trial],
    test_fraction: f64,
    seed: u64,
    require_all_modalities: bool,
) -> Result<BTreeMap<u32, SubjectSplit>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut cells: BTreeMap<(u32, bool, usize), Vec<usize>> = BTreeMap::new();
    for (i, t) in trials.iter().enumerate() {
        if require_all_modalities && !t.has_all_modalities() {
            continue;
        }
        if t.label >= NUM_CLASSES {
            return Err(Error::Data(format!(
                "subject {} trial {}: label {} outside 0..{NUM_CLASSES}",
                t.subject_id, t.trial_id, t.label
            )));
        }
        cells
            .entry((t.subject_id, t.is_speaking, t.label))
            .or_default()
            .push(i);
    }

    let mut out: BTreeMap<u32, SubjectSplit> = BTreeMap::new();
    for ((subject, speaking, label), mut idx) in cells {
        idx.sort_by_key(|&i| trials[i].trial_id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((subject as u64) << 8) | ((speaking as u64) << 4) | label as u64);
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        let split = out.entry(subject).or_default();
        split.test.extend_from_slice(&idx[..n_test]);
        split.train.extend_from_slice(&idx[n_test..]);
    }

    for (subject, split) in out.iter_mut() {
        let mut short = Vec::new();
        for c in 0..NUM_CLASSES {
            let count = |side: &[usize]| side.iter().filter(|&&i| trials[i].label == c).count();
            if count(&split.train) == 0 || count(&split.test) == 0 {
                short.push(c);
            }
        }
        if !short.is_empty() {
            return Err(Error::Data(format!(
                "subject {subject} needs at least one trial per class on each side of the split; classes {short:?} fall short"
            )));
        }
        split.train.sort_unstable();
        split.test.sort_unstable();
    }
    Ok(out)
}
