//! Named parameter storage with per-entry freezing.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::mft;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub frozen: bool,
}

/// Insertion-ordered map from dotted parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry {
    entries: Vec<(String, ParamEntry)>,
    index: HashMap<String, usize>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.insert_entry(
            name,
            ParamEntry {
                value,
                frozen: false,
            },
        )
    }

    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry) -> Result<()> {
        let name = name.into();
        validate_name(&name)?;
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, entry));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entry(name).map(|e| &e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1.value)
    }

    /// Replaces a tensor's value, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "ParamRegistry::set",
                slot.shape(),
                value.shape(),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        self.entries[i].1.frozen = frozen;
        Ok(())
    }

    /// Freezes every entry whose name starts with `prefix`; returns how many.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, e) in &mut self.entries {
            if name.starts_with(prefix) {
                e.frozen = true;
                n += 1;
            }
        }
        n
    }

    /// Copy of the entries under `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamRegistry {
        let mut out = ParamRegistry::new();
        for (name, e) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            out.insert_entry(name, e.clone())
                .expect("names already unique");
        }
        out
    }

    /// Appends all entries of `other`; names must not collide.
    pub fn extend(&mut self, other: ParamRegistry) -> Result<()> {
        for (name, e) in other.entries {
            self.insert_entry(name, e)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, e)| e.value.len()).sum()
    }

    /// Records every entry as a tape leaf. Frozen entries are constants.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, e)| (name.clone(), tape.leaf(e.value.clone(), !e.frozen)))
            .collect::<Vec<_>>();
        let index = vars
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        BoundParams { vars, index }
    }

    /// Pairs every entry, in order, with an existing tape variable. Used when
    /// the caller owns the leaves, e.g. for finite-difference checks.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams> {
        if vars.len() != self.entries.len() {
            return Err(Error::Usage(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.entries.len()
            )));
        }
        let vars: Vec<(String, Var)> = self
            .entries
            .iter()
            .zip(vars)
            .map(|((name, _), &v)| (name.clone(), v))
            .collect();
        let index = vars
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Ok(BoundParams { vars, index })
    }

    /// Entry values in insertion order.
    pub fn values(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, e)| e.value.clone()).collect()
    }

    /// Writes one MFT1 file per entry plus `manifest.txt`
    /// (`name shape trainable|frozen` per line).
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        for (name, e) in &self.entries {
            mft::save(dir.join(format!("{name}.mft")), &e.value)?;
            let shape = e
                .value
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let state = if e.frozen { "frozen" } else { "trainable" };
            writeln!(manifest, "{name} {shape} {state}").expect("string write");
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = ParamRegistry::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::format(&path, format!("line {}: {msg}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, shape, state] = fields[..] else {
                return Err(bad("expected `name shape trainable|frozen`"));
            };
            let shape = shape
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad shape"))?;
            let frozen = match state {
                "frozen" => true,
                "trainable" => false,
                _ => return Err(bad("state must be trainable or frozen")),
            };
            let value = mft::load(dir.join(format!("{name}.mft")))?;
            if value.shape() != shape.as_slice() {
                return Err(bad(&format!(
                    "{name}: manifest shape {shape:?}, file shape {:?}",
                    value.shape()
                )));
            }
            out.insert_entry(name, ParamEntry { value, frozen })
                .map_err(|e| bad(&e.to_string()))?;
        }
        Ok(out)
    }
}

fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_');
    if !ok {
        return Err(Error::Config(format!("invalid parameter name {name:?}")));
    }
    Ok(())
}

/// Registry entries recorded on one tape.
pub struct BoundParams {
    vars: Vec<(String, Var)>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i].1)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Named gradients of the trainable entries.
    pub fn gradients(&self, grads: &mut Gradients) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect()
    }
}
