//! On-disk clip layout: one directory of lexicographically ordered PNG
//! frames per clip, grouped as `<root>/<split>/<class>/<clip-id>/`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clip::{temporal_subsample, VideoClip};
use super::synth::{SynthDataset, SynthDatasetConfig};
use crate::error::{Error, Result};
use crate::flow::Image;

pub const MANIFEST: &str = "manifest.json";

/// Sorted PNG files directly inside `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            frames.push(path);
        }
    }
    frames.sort();
    if frames.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no PNG frames in directory"),
        ));
    }
    Ok(frames)
}

/// Loads a PNG-directory clip, optionally sub-sampled to `frames` entries,
/// resized bilinearly to `height×width`.
pub fn load_clip_dir(
    dir: &Path,
    height: usize,
    width: usize,
    frames: Option<usize>,
) -> Result<VideoClip> {
    let paths = list_frames(dir)?;
    let indices = match frames {
        Some(s) => temporal_subsample(paths.len(), s),
        None => (0..paths.len()).collect(),
    };
    let mut images = Vec::with_capacity(indices.len());
    let mut native: Option<(usize, usize)> = None;
    for &i in &indices {
        let img = Image::load_png(&paths[i])?;
        let size = (img.height(), img.width());
        match native {
            None => native = Some(size),
            Some(first) if first != size => {
                return Err(Error::Decode {
                    path: paths[i].clone(),
                    message: format!("frame is {}x{}, earlier frames are {}x{}", size.0, size.1, first.0, first.1),
                });
            }
            Some(_) => {}
        }
        images.push(img.resize(height, width));
    }
    VideoClip::from_frames(&images, None)
}

pub fn write_clip_dir(dir: &Path, clip: &VideoClip) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..clip.frames() {
        clip.frame(t).save_png(&dir.join(format!("frame_{t:04}.png")))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub class: usize,
    /// Clip directory relative to the dataset root.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub seed: u64,
    pub config: SynthDatasetConfig,
    pub splits: Splits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other}"))),
        }
    }
}

impl Manifest {
    pub fn entries(&self, split: Split) -> &[ManifestEntry] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn load(root: &Path) -> Result<Manifest> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Decode {
            path,
            message: e.to_string(),
        })
    }
}

/// Writes every clip as PNG frames plus `manifest.json`; returns the manifest.
pub fn write_dataset(root: &Path, ds: &SynthDataset) -> Result<Manifest> {
    let names = ds.class_names();
    let write_split = |split: Split, clips: &[super::synth::SynthClip]| -> Result<Vec<ManifestEntry>> {
        clips
            .iter()
            .map(|c| {
                let rel = format!("{}/{}/{}", split.name(), names[c.class], c.id);
                write_clip_dir(&root.join(&rel), &c.clip)?;
                Ok(ManifestEntry {
                    id: c.id.clone(),
                    class: c.class,
                    path: rel,
                })
            })
            .collect()
    };
    let splits = Splits {
        train: write_split(Split::Train, &ds.train)?,
        val: write_split(Split::Val, &ds.val)?,
        test: write_split(Split::Test, &ds.test)?,
    };
    let manifest = Manifest {
        class_names: names,
        seed: ds.config.seed,
        config: ds.config.clone(),
        splits,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = root.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A clip loaded from a dataset directory, labelled and identified.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub clip: VideoClip,
}

impl LabeledClip {
    pub fn label(&self) -> usize {
        self.clip.label.expect("labelled clip")
    }
}

pub fn load_split(
    root: &Path,
    manifest: &Manifest,
    split: Split,
    height: usize,
    width: usize,
    frames: usize,
) -> Result<Vec<LabeledClip>> {
    manifest
        .entries(split)
        .iter()
        .map(|e| {
            let mut clip = load_clip_dir(&root.join(&e.path), height, width, Some(frames))?;
            clip.label = Some(e.class);
            Ok(LabeledClip {
                id: e.id.clone(),
                clip,
            })
        })
        .collect()
}
