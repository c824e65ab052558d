//! Line-oriented dataset index.
//!
//! ```text
//! # modfuse dataset manifest
//! # provenance seed=7 config_hash=<sha256>
//! # shapes eeg=30x200 frames=4x32x32 spectrogram=16x32
//! 1,0,0,1,sub01/trial000.eeg.mft,sub01/trial000.frm.mft,sub01/trial000.spc.mft
//! 1,1,0,0,sub01/trial001.eeg.mft,sub01/trial001.frm.mft,-
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mft;

use super::trial::Trial;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialRecord {
    pub subject_id: u32,
    pub trial_id: u32,
    pub label: usize,
    pub is_speaking: bool,
    /// Paths relative to the manifest root.
    pub eeg: PathBuf,
    pub frames: PathBuf,
    pub spectrogram: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeclaredShapes {
    pub eeg: Vec<usize>,
    pub frames: Vec<usize>,
    pub spectrogram: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<TrialRecord>,
    pub provenance: Option<Provenance>,
    pub shapes: Option<DeclaredShapes>,
}

fn dims(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_dims(s: &str) -> Option<Vec<usize>> {
    let v: Option<Vec<usize>> = s
        .split('x')
        .map(|d| d.parse().ok().filter(|&d| d > 0))
        .collect();
    v.filter(|v| !v.is_empty())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# modfuse dataset manifest\n");
        if let Some(p) = &self.provenance {
            let _ = writeln!(
                s,
                "# provenance seed={} config_hash={}",
                p.seed, p.config_hash
            );
        }
        if let Some(sh) = &self.shapes {
            let _ = writeln!(
                s,
                "# shapes eeg={} frames={} spectrogram={}",
                dims(&sh.eeg),
                dims(&sh.frames),
                dims(&sh.spectrogram)
            );
        }
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.subject_id,
                r.trial_id,
                r.label,
                r.is_speaking as u8,
                r.eeg.display(),
                r.frames.display(),
                r.spectrogram
                    .as_ref()
                    .map_or("-".into(), |p| p.display().to_string())
            );
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Parses manifest text; `path` is only used in error messages.
    pub fn parse(text: &str, root: impl Into<PathBuf>, path: &Path) -> Result<Self> {
        let mut manifest = DatasetManifest {
            root: root.into(),
            records: Vec::new(),
            provenance: None,
            shapes: None,
        };
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let bad = |msg: &str| Error::format(path, format!("line {}: {msg}", i + 1));
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let mut words = comment.split_whitespace();
                match words.next() {
                    Some("provenance") => {
                        let mut seed = None;
                        let mut hash = None;
                        for w in words {
                            match w.split_once('=') {
                                Some(("seed", v)) => seed = v.parse().ok(),
                                Some(("config_hash", v)) => hash = Some(v.to_string()),
                                _ => {}
                            }
                        }
                        match (seed, hash) {
                            (Some(seed), Some(config_hash)) => {
                                manifest.provenance = Some(Provenance { seed, config_hash })
                            }
                            _ => return Err(bad("malformed provenance comment")),
                        }
                    }
                    Some("shapes") => {
                        let (mut e, mut f, mut s) = (None, None, None);
                        for w in words {
                            match w.split_once('=') {
                                Some(("eeg", v)) => e = parse_dims(v),
                                Some(("frames", v)) => f = parse_dims(v),
                                Some(("spectrogram", v)) => s = parse_dims(v),
                                _ => {}
                            }
                        }
                        match (e, f, s) {
                            (Some(eeg), Some(frames), Some(spectrogram)) => {
                                manifest.shapes = Some(DeclaredShapes {
                                    eeg,
                                    frames,
                                    spectrogram,
                                })
                            }
                            _ => return Err(bad("malformed shapes comment")),
                        }
                    }
                    _ => {}
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 7 {
                return Err(bad(&format!(
                    "expected 7 comma-separated fields, found {}",
                    fields.len()
                )));
            }
            let subject_id = fields[0]
                .parse()
                .map_err(|_| bad(&format!("bad subject {:?}", fields[0])))?;
            let trial_id = fields[1]
                .parse()
                .map_err(|_| bad(&format!("bad trial id {:?}", fields[1])))?;
            let label = fields[2]
                .parse()
                .map_err(|_| bad(&format!("bad label {:?}", fields[2])))?;
            let is_speaking = parse_bool(fields[3])
                .ok_or_else(|| bad(&format!("bad is_speaking flag {:?}", fields[3])))?;
            let spectrogram = match fields[6] {
                "-" => None,
                p => Some(PathBuf::from(p)),
            };
            if !seen.insert((subject_id, trial_id)) {
                return Err(bad(&format!(
                    "duplicate trial {trial_id} for subject {subject_id}"
                )));
            }
            manifest.records.push(TrialRecord {
                subject_id,
                trial_id,
                label,
                is_speaking,
                eeg: PathBuf::from(fields[4]),
                frames: PathBuf::from(fields[5]),
                spectrogram,
            });
        }
        Ok(manifest)
    }

    /// Reads `path`, or `path/manifest.txt` when `path` is a directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut path = path.as_ref().to_path_buf();
        if path.is_dir() {
            path.push(MANIFEST_FILE);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, &path)
    }

    fn load_record(&self, r: &TrialRecord) -> Result<Trial> {
        let who = format!("subject {} trial {}", r.subject_id, r.trial_id);
        let load = |p: &Path| {
            mft::load(self.root.join(p)).map_err(|e| match e {
                Error::Io { path, source } => {
                    Error::Data(format!("{who}: cannot read {}: {source}", path.display()))
                }
                Error::Format { path, msg } => {
                    Error::Data(format!("{who}: {}: {msg}", path.display()))
                }
                other => other,
            })
        };
        let trial = Trial {
            subject_id: r.subject_id,
            trial_id: r.trial_id,
            label: r.label,
            eeg: load(&r.eeg)?,
            frames: load(&r.frames)?,
            spectrogram: r.spectrogram.as_deref().map(load).transpose()?,
            is_speaking: r.is_speaking,
        };
        trial.validate()?;
        Ok(trial)
    }

    /// Loads every record (or one subject's) and checks tensor shapes against
    /// the declared shapes, or against the first trial when none are declared.
    pub fn load(&self, subject: Option<u32>) -> Result<Vec<Trial>> {
        let mut expected = self.shapes.clone();
        let mut out = Vec::new();
        for r in &self.records {
            if subject.is_some_and(|s| s != r.subject_id) {
                continue;
            }
            let t = self.load_record(r)?;
            let e = expected.get_or_insert_with(|| DeclaredShapes {
                eeg: t.eeg.shape().to_vec(),
                frames: t.frames.shape().to_vec(),
                spectrogram: t
                    .spectrogram
                    .as_ref()
                    .map_or_else(Vec::new, |s| s.shape().to_vec()),
            });
            if e.spectrogram.is_empty() {
                if let Some(s) = &t.spectrogram {
                    e.spectrogram = s.shape().to_vec();
                }
            }
            let mismatch = |what: &str, got: &[usize], want: &[usize]| {
                Error::Data(format!(
                    "subject {} trial {}: {what} shape {got:?} does not match declared {want:?}",
                    t.subject_id, t.trial_id
                ))
            };
            if t.eeg.shape() != e.eeg {
                return Err(mismatch("eeg", t.eeg.shape(), &e.eeg));
            }
            if t.frames.shape() != e.frames {
                return Err(mismatch("frames", t.frames.shape(), &e.frames));
            }
            if let Some(s) = &t.spectrogram {
                if s.shape() != e.spectrogram {
                    return Err(mismatch("spectrogram", s.shape(), &e.spectrogram));
                }
            }
            out.push(t);
        }
        Ok(out)
    }
}

/// Loads all trials listed in a manifest file or dataset directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    DatasetManifest::read(path)?.load(None)
}
