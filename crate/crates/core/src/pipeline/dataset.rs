//! On-disk dataset layout.
//!
//! ```text
//! <root>/manifest.txt            one "<id> [volume]" per line
//! <root>/slices/<id>/image.dfgt  [H, W] or [H, W, 3]
//! <root>/slices/<id>/probs.dfgt  [H, W, K] f32
//! <root>/slices/<id>/tfeat.dfgt  [H, W, d] f32
//! <root>/slices/<id>/gt.dfgt     [H, W] u8, optional
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::synth::{synth_scene, SynthParams};
use crate::error::{Error, Result};
use crate::tensor::{read_file, write_file, DenseTensor, FeatureMap, LabelMask, ProbabilityMap};

pub const MANIFEST: &str = "manifest.txt";
const DEFAULT_VOLUME: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceEntry {
    pub id: String,
    pub volume: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<SliceEntry>,
}

#[derive(Debug, Clone)]
pub struct SliceData {
    pub image: DenseTensor,
    pub probs: ProbabilityMap,
    pub target_features: FeatureMap,
    pub ground_truth: Option<LabelMask>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<SliceEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().expect("nonempty line").to_owned();
        let volume = parts.next().unwrap_or(DEFAULT_VOLUME).to_owned();
        if parts.next().is_some() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::Config(format!(
                "manifest line {}: bad entry {line:?}",
                n + 1
            )));
        }
        if entries.iter().any(|e: &SliceEntry| e.id == id) {
            return Err(Error::Config(format!(
                "manifest line {}: duplicate id {id:?}",
                n + 1
            )));
        }
        entries.push(SliceEntry { id, volume });
    }
    Ok(entries)
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        let entries = parse_manifest(&text)?;
        if entries.is_empty() {
            return Err(Error::Config(format!("{} lists no slices", path.display())));
        }
        Ok(Self { root, entries })
    }

    pub fn slice_dir(&self, id: &str) -> PathBuf {
        self.root.join("slices").join(id)
    }

    pub fn load(&self, id: &str) -> Result<SliceData> {
        let dir = self.slice_dir(id);
        let image = read_file(dir.join("image.dfgt"))?;
        let probs = ProbabilityMap::from_tensor(read_file(dir.join("probs.dfgt"))?)?;
        let target_features = FeatureMap::from_tensor(read_file(dir.join("tfeat.dfgt"))?)?;
        let gt_path = dir.join("gt.dfgt");
        let ground_truth = if gt_path.exists() {
            Some(LabelMask::from_tensor(
                read_file(&gt_path)?,
                probs.classes(),
            )?)
        } else {
            None
        };
        let (h, w) = (probs.height(), probs.width());
        let image_hw = (image.shape()[0], image.shape().get(1).copied().unwrap_or(0));
        if image_hw != (h, w)
            || (target_features.height(), target_features.width()) != (h, w)
            || ground_truth
                .as_ref()
                .is_some_and(|g| (g.height(), g.width()) != (h, w))
        {
            return Err(Error::ShapeMismatch(format!(
                "slice {id}: inputs disagree on image size"
            )));
        }
        Ok(SliceData {
            image,
            probs,
            target_features,
            ground_truth,
        })
    }
}

/// Writes a synthetic dataset and returns its manifest entries.
pub fn gen_synthetic(root: impl AsRef<Path>, params: &SynthParams) -> Result<Vec<SliceEntry>> {
    params.validate()?;
    let root = root.as_ref();
    let mut manifest = String::new();
    let mut entries = Vec::with_capacity(params.n_slices);
    for i in 0..params.n_slices {
        let scene = synth_scene(params, i)?;
        let entry = SliceEntry {
            id: params.slice_id(i),
            volume: params.volume_id(i),
        };
        let dir = root.join("slices").join(&entry.id);
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        write_file(dir.join("image.dfgt"), &scene.image())?;
        write_file(dir.join("probs.dfgt"), &scene.probs.to_tensor())?;
        write_file(dir.join("tfeat.dfgt"), &scene.target_features.to_tensor())?;
        write_file(dir.join("gt.dfgt"), &scene.ground_truth().to_tensor())?;
        manifest.push_str(&format!("{} {}\n", entry.id, entry.volume));
        entries.push(entry);
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::file(&path, e))?;
    Ok(entries)
}
