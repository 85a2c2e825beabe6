//! Loading sequences and laying out per-sequence output directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bgseg::data::cdnet::{discover_sequences, split_dataset, SequenceEntry};
use bgseg::data::{load_sequence, FrameSample, LabelMode};

use crate::{Split, UsageError};

pub struct Sequence {
    pub entry: SequenceEntry,
    pub frames: Vec<FrameSample>,
}

impl Sequence {
    /// `<category>/<sequence>` below an output root.
    pub fn out_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.entry.category).join(&self.entry.name)
    }

    /// Positions (into `frames`) of the requested half.
    pub fn indices(&self, split: Split) -> Result<Vec<usize>> {
        let n = self.frames.len();
        Ok(match split {
            Split::All => (0..n).collect(),
            Split::Train => split_dataset(n)?.train_indices().into_iter().map(|i| i - 1).collect(),
            Split::Test => split_dataset(n)?.test_indices().into_iter().map(|i| i - 1).collect(),
        })
    }

    pub fn select(&self, split: Split) -> Result<Vec<&FrameSample>> {
        Ok(self.indices(split)?.into_iter().map(|i| &self.frames[i]).collect())
    }
}

pub fn load_all(data: &Path, mode: LabelMode) -> Result<Vec<Sequence>> {
    let entries = discover_sequences(data).with_context(|| format!("reading {}", data.display()))?;
    if entries.is_empty() {
        return Err(bgseg::Error::Data(format!("no sequences under {}", data.display())).into());
    }
    let mut out = Vec::with_capacity(entries.len());
    for entry in entries {
        let frames = load_sequence(&entry.path, mode).with_context(|| format!("loading {}", entry.path.display()))?;
        log::info!("{}/{}: {} frames", entry.category, entry.name, frames.len());
        out.push(Sequence { entry, frames });
    }
    Ok(out)
}

/// Refuses to write anywhere inside the input tree, then creates `out`.
pub fn prepare_out(out: &Path, inputs: &[&Path]) -> Result<()> {
    let out_abs = std::path::absolute(out)?;
    for input in inputs {
        if let Ok(inp) = input.canonicalize() {
            if out_abs.starts_with(&inp) {
                return Err(UsageError(format!(
                    "output directory {} lies inside input {}",
                    out.display(),
                    input.display()
                ))
                .into());
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}
