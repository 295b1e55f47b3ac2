//! Reading generated datasets back from disk, plus the manifest that
//! records what a `gen` run produced.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use relpose_core::autodiff::Tensor;
use relpose_core::dataset::{read_pair_ids, read_poses, read_view_image, scene_dir_name};
use relpose_core::geometry::Pose;

use crate::config::RunConfig;
use crate::{runtime, validation, CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub scenes: Vec<ManifestScene>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestScene {
    pub index: usize,
    pub dir: String,
    pub views: usize,
    pub pairs: usize,
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(manifest).map_err(runtime)?;
    fs::write(&path, text).map_err(|e| runtime(format!("write {}: {}", path.display(), e)))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path)
        .map_err(|e| validation(format!("read {}: {}", path.display(), e)))?;
    serde_json::from_str(&text).map_err(|e| validation(format!("parse {}: {}", path.display(), e)))
}

/// One scene loaded into memory: poses, images, and stored pair ids.
pub struct SceneData {
    pub index: usize,
    pub dir: PathBuf,
    pub poses: BTreeMap<u32, Pose>,
    pub images: BTreeMap<u32, Tensor<f32>>,
    pub pair_ids: Vec<(u32, u32)>,
}

/// Resolve which scene indices to use: an explicit selection is checked
/// against the directories on disk, otherwise every `sceneNN` directory
/// found under `root` is taken in order.
pub fn scene_indices(root: &Path, selection: Option<&[usize]>) -> Result<Vec<usize>> {
    match selection {
        Some(list) => {
            if list.is_empty() {
                return Err(CliError::Validation("empty scene selection".into()));
            }
            let mut seen = std::collections::BTreeSet::new();
            for &i in list {
                let dir = root.join(scene_dir_name(i));
                if !dir.is_dir() {
                    return Err(validation(format!("no scene directory {}", dir.display())));
                }
                if !seen.insert(i) {
                    return Err(validation(format!("scene {i} selected twice")));
                }
            }
            Ok(list.to_vec())
        }
        None => {
            let mut found = Vec::new();
            for i in 0.. {
                if root.join(scene_dir_name(i)).is_dir() {
                    found.push(i);
                } else {
                    break;
                }
            }
            if found.is_empty() {
                return Err(validation(format!(
                    "no scene directories under {}",
                    root.display()
                )));
            }
            Ok(found)
        }
    }
}

/// Load one scene's poses, every view image, and (optionally) pairs.csv.
pub fn load_scene(root: &Path, index: usize, with_pairs: bool) -> Result<SceneData> {
    let dir = root.join(scene_dir_name(index));
    let poses = read_poses(&dir).map_err(validation)?;
    let mut images = BTreeMap::new();
    for &id in poses.keys() {
        images.insert(id, read_view_image(&dir, id).map_err(validation)?);
    }
    let pair_ids = if with_pairs {
        read_pair_ids(&dir).map_err(validation)?
    } else {
        Vec::new()
    };
    Ok(SceneData {
        index,
        dir,
        poses,
        images,
        pair_ids,
    })
}
