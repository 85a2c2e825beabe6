//! CDNet-style sequence directories, ground-truth label mapping and the
//! half/half temporal split.
//!
//! Layout of one sequence:
//!
//! ```text
//! <sequence>/input/in000001.jpg|png
//! <sequence>/groundtruth/gt000001.png   (0, 50, 85, 170, 255)
//! <sequence>/background/bg000001.png    (optional, clean backgrounds)
//! <sequence>/temporalROI.txt            (optional, "first last" labelled range)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::imageio;
use super::sample::FrameSample;
use crate::error::{Error, Result};
use crate::segmentation::LabelMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Values outside the table are an error.
    #[default]
    Strict,
    /// Values outside the table become ignore.
    Lenient,
}

/// Maps a raw ground-truth value to a label: 255 → 1, 0 and 50 (shadow) → 0,
/// 85 (outside ROI) and 170 (unknown) → −1.
pub fn map_gt_value(raw: u8, mode: LabelMode) -> Result<i8> {
    match raw {
        255 => Ok(1),
        0 | 50 => Ok(0),
        85 | 170 => Ok(-1),
        v => match mode {
            LabelMode::Strict => Err(Error::InvalidLabel { value: v as i32 }),
            LabelMode::Lenient => Ok(-1),
        },
    }
}

pub fn map_gt_labels(raw: &[u8], width: usize, height: usize, mode: LabelMode) -> Result<LabelMap> {
    if raw.len() != width * height {
        return Err(Error::shape(format!(
            "{} raw values for a {width}x{height} label map",
            raw.len()
        )));
    }
    let values = raw.iter().map(|&v| map_gt_value(v, mode)).collect::<Result<Vec<_>>>()?;
    LabelMap::new(height, width, values)
}

/// Inverse table used when writing labels: 1 → 255, 0 → 0, −1 → 170.
pub fn label_to_gt_value(label: i8) -> u8 {
    match label {
        1 => 255,
        0 => 0,
        _ => 170,
    }
}

/// 1-based frame indices: train `[1, ⌊n/2⌋]`, test `[⌊n/2⌋+1, n]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: std::ops::RangeInclusive<usize>,
    pub test: std::ops::RangeInclusive<usize>,
}

impl DatasetSplit {
    pub fn train_indices(&self) -> Vec<usize> {
        self.train.clone().collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.test.clone().collect()
    }
}

pub fn split_dataset(n: usize) -> Result<DatasetSplit> {
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 labelled frames to split, got {n}"
        )));
    }
    let half = n / 2;
    Ok(DatasetSplit {
        train: 1..=half,
        test: half + 1..=n,
    })
}

/// Splits samples by position in the list using [`split_dataset`].
pub fn split_samples(samples: &[FrameSample]) -> Result<(Vec<FrameSample>, Vec<FrameSample>)> {
    let split = split_dataset(samples.len())?;
    let train = samples[..*split.train.end()].to_vec();
    let test = samples[*split.train.end()..].to_vec();
    Ok((train, test))
}

/// Parses the frame number out of names like `in000123.jpg`.
fn frame_number(path: &Path, prefix: &str) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    stem.strip_prefix(prefix)?.parse().ok()
}

fn indexed_files(dir: &Path, prefix: &str) -> Result<BTreeMap<usize, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some(n) = frame_number(&path, prefix) {
            if out.insert(n, path.clone()).is_some() {
                return Err(Error::Data(format!(
                    "duplicate frame {n} in {}",
                    dir.display()
                )));
            }
        }
    }
    Ok(out)
}

fn read_temporal_roi(dir: &Path) -> Result<Option<(usize, usize)>> {
    let path = dir.join("temporalROI.txt");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    let nums: Vec<usize> = text
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    match nums.as_slice() {
        [a, b] if a <= b => Ok(Some((*a, *b))),
        _ => Err(Error::Data(format!("{}: expected `first last`", path.display()))),
    }
}

/// Loads every input frame of a sequence. Frames without a ground-truth file, or
/// outside `temporalROI.txt`, get all-ignore labels.
pub fn load_sequence(dir: &Path, mode: LabelMode) -> Result<Vec<FrameSample>> {
    let input_dir = dir.join("input");
    if !input_dir.is_dir() {
        return Err(Error::Data(format!("{} has no input/ directory", dir.display())));
    }
    let inputs = indexed_files(&input_dir, "in")?;
    if inputs.is_empty() {
        return Err(Error::Data(format!("no input frames in {}", input_dir.display())));
    }
    let gt_dir = dir.join("groundtruth");
    let gts = if gt_dir.is_dir() {
        indexed_files(&gt_dir, "gt")?
    } else {
        BTreeMap::new()
    };
    if let Some(orphan) = gts.keys().find(|k| !inputs.contains_key(k)) {
        return Err(Error::Data(format!(
            "ground truth count mismatch: gt{orphan:06} has no matching input frame in {}",
            dir.display()
        )));
    }
    let bg_dir = dir.join("background");
    let bgs = if bg_dir.is_dir() {
        indexed_files(&bg_dir, "bg")?
    } else {
        BTreeMap::new()
    };
    let roi = read_temporal_roi(dir)?;
    let sequence_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());

    let mut out = Vec::with_capacity(inputs.len());
    for (&n, path) in &inputs {
        let image = imageio::load_rgb(path)?;
        let (_, h, w) = image.dims3()?;
        let in_roi = roi.is_none_or(|(a, b)| (a..=b).contains(&n));
        let labels = match gts.get(&n) {
            Some(gt) if in_roi => {
                let (gw, gh, raw) = imageio::load_gray(gt)?;
                if (gw, gh) != (w, h) {
                    return Err(Error::Data(format!(
                        "{} is {gw}x{gh} but its frame is {w}x{h}",
                        gt.display()
                    )));
                }
                map_gt_labels(&raw, w, h, mode)?
            }
            _ => LabelMap::filled(h, w, -1),
        };
        let mut sample = FrameSample::new(image, labels, sequence_id.clone(), n)?;
        if let Some(bg) = bgs.get(&n) {
            sample = sample.with_background(imageio::load_rgb(bg)?)?;
        }
        out.push(sample);
    }
    Ok(out)
}

/// Writes samples in the layout above (PNG only), including backgrounds when present.
pub fn write_sequence(dir: &Path, samples: &[FrameSample]) -> Result<()> {
    let input = dir.join("input");
    let gt = dir.join("groundtruth");
    fs::create_dir_all(&input)?;
    fs::create_dir_all(&gt)?;
    for s in samples {
        let n = s.frame_index;
        imageio::save_rgb(&input.join(format!("in{n:06}.png")), &s.image)?;
        let raw: Vec<u8> = s.labels.values().iter().map(|&l| label_to_gt_value(l)).collect();
        imageio::save_gray(&gt.join(format!("gt{n:06}.png")), s.width(), s.height(), &raw)?;
        if let Some(bg) = &s.gt_background {
            let bg_dir = dir.join("background");
            fs::create_dir_all(&bg_dir)?;
            imageio::save_rgb(&bg_dir.join(format!("bg{n:06}.png")), bg)?;
        }
    }
    Ok(())
}

/// A sequence found under a dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceEntry {
    pub category: String,
    pub name: String,
    pub path: PathBuf,
}

fn is_sequence(p: &Path) -> bool {
    p.join("input").is_dir()
}

fn name_of(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| ".".into())
}

fn sorted_subdirs(p: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(p)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Accepts a single sequence, a category directory of sequences, or a dataset root
/// of `<category>/<sequence>` directories.
pub fn discover_sequences(root: &Path) -> Result<Vec<SequenceEntry>> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    // Relative roots like `seq` have no usable parent name otherwise.
    let root = &root.canonicalize()?;
    if is_sequence(root) {
        let category = root.parent().map(name_of).unwrap_or_else(|| "default".into());
        return Ok(vec![SequenceEntry {
            category,
            name: name_of(root),
            path: root.to_path_buf(),
        }]);
    }
    let mut out = Vec::new();
    for child in sorted_subdirs(root)? {
        if is_sequence(&child) {
            out.push(SequenceEntry {
                category: name_of(root),
                name: name_of(&child),
                path: child,
            });
        } else {
            for seq in sorted_subdirs(&child)? {
                if is_sequence(&seq) {
                    out.push(SequenceEntry {
                        category: name_of(&child),
                        name: name_of(&seq),
                        path: seq,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no sequences found under {}", root.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_sequence, SyntheticSceneSpec};

    #[test]
    fn label_table() {
        let raw = [255, 0, 50, 85, 170];
        let l = map_gt_labels(&raw, 5, 1, LabelMode::Strict).unwrap();
        assert_eq!(l.values(), &[1, 0, 0, -1, -1]);
        assert!(matches!(
            map_gt_labels(&[7], 1, 1, LabelMode::Strict),
            Err(Error::InvalidLabel { value: 7 })
        ));
        assert_eq!(map_gt_labels(&[7], 1, 1, LabelMode::Lenient).unwrap().values(), &[-1]);
    }

    #[test]
    fn split_examples() {
        let s = split_dataset(10).unwrap();
        assert_eq!(s.train, 1..=5);
        assert_eq!(s.test, 6..=10);
        let s = split_dataset(7).unwrap();
        assert_eq!(s.train, 1..=3);
        assert_eq!(s.test, 4..=7);
        assert!(split_dataset(1).is_err());
    }

    fn small_scene() -> Vec<FrameSample> {
        let mut spec = SyntheticSceneSpec::moving_square(1);
        spec.frames = 4;
        spec.width = 24;
        spec.height = 20;
        spec.sprites[0].size = 6;
        synth_sequence(&spec).unwrap()
    }

    #[test]
    fn write_then_load_preserves_labels() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("scene");
        let frames = small_scene();
        write_sequence(&seq, &frames).unwrap();
        let back = load_sequence(&seq, LabelMode::Strict).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.frame_index, b.frame_index);
            assert!(a.image.max_abs_diff(&b.image).unwrap() <= 0.5 / 255.0 + 1e-12);
            assert!(b.gt_background.is_some());
        }
    }

    #[test]
    fn missing_gt_gives_ignore_and_orphan_gt_errors() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("scene");
        write_sequence(&seq, &small_scene()).unwrap();
        fs::remove_file(seq.join("groundtruth/gt000002.png")).unwrap();
        let back = load_sequence(&seq, LabelMode::Strict).unwrap();
        assert!(back[1].labels.values().iter().all(|&v| v == -1));
        assert!(back[0].is_labeled());

        fs::copy(seq.join("groundtruth/gt000001.png"), seq.join("groundtruth/gt000009.png")).unwrap();
        assert!(load_sequence(&seq, LabelMode::Strict).is_err());
    }

    #[test]
    fn temporal_roi_masks_frames() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("scene");
        write_sequence(&seq, &small_scene()).unwrap();
        fs::write(seq.join("temporalROI.txt"), "2 3\n").unwrap();
        let back = load_sequence(&seq, LabelMode::Strict).unwrap();
        let labelled: Vec<bool> = back.iter().map(|s| s.is_labeled()).collect();
        assert_eq!(labelled, vec![false, true, true, false]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("scene");
        write_sequence(&seq, &small_scene()).unwrap();
        imageio::save_gray(&seq.join("groundtruth/gt000001.png"), 3, 3, &[0; 9]).unwrap();
        assert!(load_sequence(&seq, LabelMode::Strict).is_err());
    }

    #[test]
    fn discovery_handles_nested_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_sequence(&root.join("baseline/a"), &small_scene()).unwrap();
        write_sequence(&root.join("baseline/b"), &small_scene()).unwrap();
        write_sequence(&root.join("night/c"), &small_scene()).unwrap();
        let found = discover_sequences(root).unwrap();
        let names: Vec<(String, String)> = found.iter().map(|e| (e.category.clone(), e.name.clone())).collect();
        assert_eq!(
            names,
            vec![
                ("baseline".into(), "a".into()),
                ("baseline".into(), "b".into()),
                ("night".into(), "c".into())
            ]
        );
        assert_eq!(discover_sequences(&root.join("night/c")).unwrap()[0].category, "night");
    }
}
