//! `eval`: retrieval, relative-pose regression, absolute recovery, and
//! median errors per scene.
//!
//! Protocol per scene: even view ids form the reference database, odd view
//! ids are queries. Each query fetches its nearest database neighbor by
//! descriptor cosine similarity, the model regresses the relative pose
//! between the two images, and the absolute query pose is recovered by
//! composing the reference pose with that prediction. Descriptors here
//! come from the evaluated checkpoint's own backbone, not from the
//! fixed retrieval net that built the training pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use relpose_core::autodiff::{Graph, Tensor};
use relpose_core::checkpoint::load_checkpoint;
use relpose_core::dataset::{compute_descriptors, DescriptorIndex, PairRecord};
use relpose_core::geometry::{
    angular_error_deg, position_error, relative_pose, Pose, RelativePose, Vector3,
};
use relpose_core::loss::LossParams;
use relpose_core::Relformer;

use crate::args::{EvalArgs, PredictorArg};
use crate::store::{load_scene, scene_indices, SceneData};
use crate::{runtime, validation, CliError, Result};

pub const REPORT_NAME: &str = "eval_report.json";
pub const ERRORS_NAME: &str = "eval_errors.csv";
const FORWARD_CHUNK: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueryError {
    pub scene: usize,
    pub query_id: u32,
    pub ref_id: u32,
    pub pos_err_m: f64,
    pub rot_err_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene: usize,
    pub queries: usize,
    pub median_pos_m: f64,
    pub median_rot_deg: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub scenes: Vec<SceneReport>,
    /// Average of per-scene medians, the headline pair of numbers.
    pub avg_median_pos_m: f64,
    pub avg_median_rot_deg: f64,
    pub queries: Vec<QueryError>,
}

pub fn run(args: &EvalArgs) -> Result<EvalReport> {
    let (model, _) = load_model(&args.checkpoint)?;
    let report = evaluate(
        &model,
        &args.data,
        args.scenes.as_deref(),
        args.predictor,
    )?;
    if let Some(out) = &args.out {
        write_report(out, &report)?;
    }
    print_report(&report);
    Ok(report)
}

/// Rebuild the model a checkpoint was saved from and load its weights.
pub fn load_model(path: &Path) -> Result<(Relformer<f32>, LossParams<f32>)> {
    let ckpt = load_checkpoint(path).map_err(validation)?;
    let mut model = Relformer::new(ckpt.config.clone(), 0).map_err(validation)?;
    let mut loss_params = LossParams::new();
    ckpt.restore(&mut model, &mut loss_params).map_err(validation)?;
    Ok((model, loss_params))
}

pub fn evaluate(
    model: &Relformer<f32>,
    data: &Path,
    scenes: Option<&[usize]>,
    predictor: PredictorArg,
) -> Result<EvalReport> {
    let indices = scene_indices(data, scenes)?;
    let mut scene_reports = Vec::with_capacity(indices.len());
    let mut all_queries = Vec::new();
    for &index in &indices {
        let sd = load_scene(data, index, false)?;
        let (report, queries) = evaluate_scene(model, &sd, predictor)?;
        scene_reports.push(report);
        all_queries.extend(queries);
    }
    let avg_pos = scene_reports.iter().map(|s| s.median_pos_m).sum::<f64>()
        / scene_reports.len() as f64;
    let avg_rot = scene_reports.iter().map(|s| s.median_rot_deg).sum::<f64>()
        / scene_reports.len() as f64;
    Ok(EvalReport {
        predictor: format!("{predictor:?}").to_lowercase(),
        scenes: scene_reports,
        avg_median_pos_m: avg_pos,
        avg_median_rot_deg: avg_rot,
        queries: all_queries,
    })
}

fn evaluate_scene(
    model: &Relformer<f32>,
    sd: &SceneData,
    predictor: PredictorArg,
) -> Result<(SceneReport, Vec<QueryError>)> {
    let database: Vec<u32> = sd.poses.keys().copied().filter(|id| id % 2 == 0).collect();
    let queries: Vec<u32> = sd.poses.keys().copied().filter(|id| id % 2 == 1).collect();
    if database.is_empty() || queries.is_empty() {
        return Err(validation(format!(
            "scene {} cannot split by view-id parity: {} database views, {} queries",
            sd.index,
            database.len(),
            queries.len()
        )));
    }

    let db_images: Vec<Tensor<f32>> = database.iter().map(|id| sd.images[id].clone()).collect();
    let descriptors = compute_descriptors(model, &db_images).map_err(runtime)?;
    let mut index = DescriptorIndex::new();
    for (id, d) in database.iter().zip(descriptors) {
        index.insert(*id, d).map_err(runtime)?;
    }

    let query_images: Vec<Tensor<f32>> = queries.iter().map(|id| sd.images[id].clone()).collect();
    let query_descriptors = compute_descriptors(model, &query_images).map_err(runtime)?;

    let mut refs = Vec::with_capacity(queries.len());
    for d in &query_descriptors {
        refs.push(index.nearest(d, None).map_err(runtime)?);
    }

    let rels: Vec<RelativePose> = match predictor {
        PredictorArg::Model => {
            let q_refs: Vec<&Tensor<f32>> = queries.iter().map(|id| &sd.images[id]).collect();
            let r_refs: Vec<&Tensor<f32>> = refs.iter().map(|id| &sd.images[id]).collect();
            predict_rels(model, &q_refs, &r_refs)?
        }
        PredictorArg::Oracle => queries
            .iter()
            .zip(&refs)
            .map(|(q, r)| relative_pose(&sd.poses[r], &sd.poses[q]))
            .collect(),
        PredictorArg::Identity => vec![RelativePose::identity(); queries.len()],
    };

    let mut rows = Vec::with_capacity(queries.len());
    for ((query_id, ref_id), rel) in queries.iter().zip(&refs).zip(&rels) {
        let recovered = sd.poses[ref_id].compose(rel);
        let truth = &sd.poses[query_id];
        rows.push(QueryError {
            scene: sd.index,
            query_id: *query_id,
            ref_id: *ref_id,
            pos_err_m: position_error(&recovered.position, &truth.position),
            rot_err_deg: angular_error_deg(&recovered.rotation, &truth.rotation),
        });
    }

    let report = SceneReport {
        scene: sd.index,
        queries: rows.len(),
        median_pos_m: median(&rows.iter().map(|r| r.pos_err_m).collect::<Vec<_>>())?,
        median_rot_deg: median(&rows.iter().map(|r| r.rot_err_deg).collect::<Vec<_>>())?,
    };
    Ok((report, rows))
}

/// Batched inference: regress and decode the relative pose for each
/// query/reference image pair.
pub fn predict_rels(
    model: &Relformer<f32>,
    queries: &[&Tensor<f32>],
    refs: &[&Tensor<f32>],
) -> Result<Vec<RelativePose>> {
    assert_eq!(queries.len(), refs.len());
    let cfg = model.config();
    let kind = cfg.rot;
    let dim = kind.dim();
    let res = cfg.image;
    let mut out = Vec::with_capacity(queries.len());
    for start in (0..queries.len()).step_by(FORWARD_CHUNK) {
        let end = (start + FORWARD_CHUNK).min(queries.len());
        let n = end - start;
        let mut q_data = Vec::with_capacity(n * res * res * 3);
        let mut r_data = Vec::with_capacity(n * res * res * 3);
        for i in start..end {
            q_data.extend_from_slice(queries[i].data());
            r_data.extend_from_slice(refs[i].data());
        }
        let mut g: Graph<f32> = Graph::inference();
        let q = g.input(Tensor::new(vec![n, res, res, 3], q_data));
        let r = g.input(Tensor::new(vec![n, res, res, 3], r_data));
        let pred = model.forward(&mut g, q, r).map_err(runtime)?;
        let trans = g.value(pred.trans).data().to_vec();
        let rot = g.value(pred.rot).data().to_vec();
        for i in 0..n {
            let delta_position = Vector3::new(
                trans[i * 3] as f64,
                trans[i * 3 + 1] as f64,
                trans[i * 3 + 2] as f64,
            );
            let row: Vec<f64> = rot[i * dim..(i + 1) * dim].iter().map(|&v| v as f64).collect();
            let delta_rotation = kind.decode(&row).map_err(runtime)?;
            out.push(RelativePose {
                delta_position,
                delta_rotation,
            });
        }
    }
    Ok(out)
}

/// Per-pair recovered-pose errors against ground truth: the overfit
/// metric, and the identity baseline when `rels` are identities.
pub fn pair_errors(
    model: &Relformer<f32>,
    pairs: &[PairRecord],
    images: &BTreeMap<u32, Tensor<f32>>,
    truth: &BTreeMap<u32, Pose>,
) -> Result<Vec<(f64, f64)>> {
    let queries: Vec<&Tensor<f32>> = pairs.iter().map(|p| &images[&p.query_id]).collect();
    let refs: Vec<&Tensor<f32>> = pairs.iter().map(|p| &images[&p.ref_id]).collect();
    let rels = predict_rels(model, &queries, &refs)?;
    Ok(pairs
        .iter()
        .zip(&rels)
        .map(|(pair, rel)| {
            let recovered = pair.ref_pose.compose(rel);
            let gt = &truth[&pair.query_id];
            (
                position_error(&recovered.position, &gt.position),
                angular_error_deg(&recovered.rotation, &gt.rotation),
            )
        })
        .collect())
}

/// Identity-predictor errors on the same pairs: how far each reference
/// pose already is from the query's ground truth.
pub fn identity_pair_errors(
    pairs: &[PairRecord],
    truth: &BTreeMap<u32, Pose>,
) -> Vec<(f64, f64)> {
    pairs
        .iter()
        .map(|pair| {
            let gt = &truth[&pair.query_id];
            (
                position_error(&pair.ref_pose.position, &gt.position),
                angular_error_deg(&pair.ref_pose.rotation, &gt.rotation),
            )
        })
        .collect()
}

/// Median with the even-length convention fixed to the mean of the two
/// middle elements.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(CliError::Validation("median of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| runtime(format!("create {}: {}", out.display(), e)))?;
    let json_path = out.join(REPORT_NAME);
    fs::write(
        &json_path,
        serde_json::to_string_pretty(report).map_err(runtime)?,
    )
    .map_err(|e| runtime(format!("write {}: {}", json_path.display(), e)))?;

    let csv_path = out.join(ERRORS_NAME);
    let mut csv = Vec::new();
    writeln!(csv, "scene,query_id,ref_id,pos_err_m,rot_err_deg").map_err(runtime)?;
    for q in &report.queries {
        writeln!(
            csv,
            "{},{},{},{},{}",
            q.scene, q.query_id, q.ref_id, q.pos_err_m, q.rot_err_deg
        )
        .map_err(runtime)?;
    }
    fs::write(&csv_path, csv).map_err(|e| runtime(format!("write {}: {}", csv_path.display(), e)))?;
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!("predictor: {}", report.predictor);
    println!("{:<8} {:>8} {:>14} {:>14}", "scene", "queries", "median pos m", "median rot deg");
    for s in &report.scenes {
        println!(
            "{:<8} {:>8} {:>14.4} {:>14.3}",
            s.scene, s.queries, s.median_pos_m, s.median_rot_deg
        );
    }
    println!(
        "average of medians: {:.4} m / {:.3} deg",
        report.avg_median_pos_m, report.avg_median_rot_deg
    );
}
