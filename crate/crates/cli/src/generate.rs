//! `gen`: synthesize scenes, render trajectories, build retrieval pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use relpose_core::dataset::{
    build_pairs, compute_descriptors, derive_seed, generate_scene, render_view,
    sample_trajectory, scene_dir_name, write_descriptors, write_pairs, write_views,
    DatasetError, DescriptorIndex, Intrinsics, Scene, SceneParams, View,
};
use relpose_core::geometry::Pose;
use relpose_core::model::ModelConfig;
use relpose_core::Relformer;

use crate::args::GenArgs;
use crate::config::{self, RunConfig};
use crate::store::{write_manifest, Manifest, ManifestScene};
use crate::{runtime, streams, validation, Result, RETRIEVAL_SEED};

/// A trajectory occasionally walks a camera into a pose that sees too few
/// landmarks to render. Retrying the whole scene trajectory with a fresh
/// derived seed keeps generation deterministic without distorting any
/// single trajectory.
const TRAJECTORY_ATTEMPTS: u64 = 16;

pub fn run(args: &GenArgs) -> Result<()> {
    let cfg = config::load(args.config.as_deref(), args.seed)?;
    generate_dataset(&cfg, &args.out)
}

pub fn generate_dataset(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| runtime(format!("create {}: {}", out.display(), e)))?;

    let retrieval = retrieval_model(&cfg.model)?;
    let intr = Intrinsics::square(cfg.model.image, cfg.data.fov_deg);
    let params = SceneParams {
        landmarks: cfg.data.landmarks,
        extent: cfg.data.extent,
    };

    let mut manifest_scenes = Vec::with_capacity(cfg.data.scenes);
    for s in 0..cfg.data.scenes {
        let scene = generate_scene(s as u32, derive_seed(cfg.seed, streams::SCENE, s as u64), &params)
            .map_err(validation)?;
        let views = render_trajectory(&scene, &intr, cfg.seed, s, cfg.data.views_per_scene)?;

        let dir = out.join(scene_dir_name(s));
        write_views(&dir, &views).map_err(runtime)?;

        let images: Vec<_> = views.iter().map(|v| v.image.clone()).collect();
        let descriptors = compute_descriptors(&retrieval, &images).map_err(runtime)?;
        let mut index = DescriptorIndex::new();
        for (view, d) in views.iter().zip(descriptors) {
            index.insert(view.view_id, d).map_err(runtime)?;
        }

        let poses: BTreeMap<u32, Pose> = views.iter().map(|v| (v.view_id, v.pose.clone())).collect();
        let pairs = build_pairs(&poses, &index, cfg.data.knn).map_err(runtime)?;
        write_pairs(&dir, &pairs).map_err(runtime)?;
        write_descriptors(&dir, &index).map_err(runtime)?;

        println!(
            "scene {s}: {} views, {} pairs -> {}",
            views.len(),
            pairs.len(),
            dir.display()
        );
        manifest_scenes.push(ManifestScene {
            index: s,
            dir: scene_dir_name(s),
            views: views.len(),
            pairs: pairs.len(),
        });
    }

    write_manifest(
        out,
        &Manifest {
            config: cfg.clone(),
            scenes: manifest_scenes,
        },
    )?;
    println!("dataset manifest -> {}", out.join("manifest.json").display());
    Ok(())
}

/// The stand-in for a frozen pretrained retrieval backbone: a fixed-seed
/// model whose pooled final-stage features supply the pair-building
/// descriptors. Its weights never train and never depend on the run seed.
pub fn retrieval_model(model: &ModelConfig) -> Result<Relformer<f32>> {
    Relformer::new(model.clone(), RETRIEVAL_SEED).map_err(validation)
}

fn render_trajectory(
    scene: &Scene,
    intr: &Intrinsics,
    seed: u64,
    scene_idx: usize,
    count: usize,
) -> Result<Vec<View>> {
    'attempt: for attempt in 0..TRAJECTORY_ATTEMPTS {
        let traj_seed = derive_seed(
            seed,
            streams::TRAJECTORY,
            scene_idx as u64 * TRAJECTORY_ATTEMPTS + attempt,
        );
        let poses = sample_trajectory(scene, traj_seed, count);
        let mut views = Vec::with_capacity(count);
        for (i, pose) in poses.into_iter().enumerate() {
            match render_view(scene, &pose, intr) {
                Ok(image) => views.push(View {
                    scene_id: scene.id,
                    view_id: i as u32,
                    pose,
                    image,
                }),
                Err(DatasetError::EmptyView { .. }) => continue 'attempt,
                Err(e) => return Err(runtime(e)),
            }
        }
        return Ok(views);
    }
    Err(runtime(format!(
        "scene {scene_idx}: no trajectory with full landmark coverage in {TRAJECTORY_ATTEMPTS} attempts"
    )))
}
