//! `localize`: absolute pose for one query image against one scene.

use std::path::Path;

use relpose_core::autodiff::Tensor;
use relpose_core::dataset::{
    compute_descriptors, read_poses, read_tensor_f32, read_view_image, view_file_name,
    DescriptorIndex,
};
use relpose_core::geometry::Pose;

use crate::args::LocalizeArgs;
use crate::eval::{load_model, predict_rels};
use crate::{runtime, validation, Result};

pub struct Localization {
    pub ref_id: u32,
    pub pose: Pose,
}

pub fn run(args: &LocalizeArgs) -> Result<Localization> {
    let (model, _) = load_model(&args.checkpoint)?;
    let cfg = model.config().clone();

    let query = read_tensor_f32(&args.query).map_err(validation)?;
    if query.shape() != [cfg.image, cfg.image, 3] {
        return Err(validation(format!(
            "query image shape {:?} does not match the model's {}x{}x3 input",
            query.shape(),
            cfg.image,
            cfg.image
        )));
    }

    let poses = read_poses(&args.data).map_err(validation)?;
    // A query that is itself a database view must not retrieve itself.
    let own_id = poses
        .keys()
        .copied()
        .find(|&id| same_file(&args.data.join(view_file_name(id)), &args.query));
    let database: Vec<u32> = poses.keys().copied().filter(|&id| Some(id) != own_id).collect();
    if database.is_empty() {
        return Err(validation("database has no views besides the query"));
    }

    let images: Vec<Tensor<f32>> = {
        let mut v = Vec::with_capacity(database.len());
        for &id in &database {
            v.push(read_view_image(&args.data, id).map_err(validation)?);
        }
        v
    };
    let descriptors = compute_descriptors(&model, &images).map_err(runtime)?;
    let mut index = DescriptorIndex::new();
    for (&id, d) in database.iter().zip(descriptors) {
        index.insert(id, d).map_err(runtime)?;
    }

    let query_descriptor = compute_descriptors(&model, std::slice::from_ref(&query))
        .map_err(runtime)?
        .remove(0);
    let ref_id = index.nearest(&query_descriptor, None).map_err(runtime)?;

    let slot = database.iter().position(|&id| id == ref_id).expect("retrieved id is in the database");
    let rel = predict_rels(&model, &[&query], &[&images[slot]])?.remove(0);
    let pose = poses[&ref_id].compose(&rel);

    let q = pose.rotation.to_quat();
    println!("reference view: {ref_id}");
    println!(
        "position [m]: {:.6} {:.6} {:.6}",
        pose.position.x, pose.position.y, pose.position.z
    );
    println!("rotation [w x y z]: {:.6} {:.6} {:.6} {:.6}", q[0], q[1], q[2], q[3]);
    Ok(Localization { ref_id, pose })
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(ca), Ok(cb)) => ca == cb,
        _ => false,
    }
}
