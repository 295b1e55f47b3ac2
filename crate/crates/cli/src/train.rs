//! `train`: Adam on stored pairs, one loss-log row per step, checkpoints
//! on an epoch schedule.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relpose_core::autodiff::{Adam, AdamConfig, Graph, Tensor};
use relpose_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use relpose_core::dataset::{crop_augment, derive_seed, pairs_from_ids, PairRecord};
use relpose_core::geometry::RelativePose;
use relpose_core::loss::{batch_targets, pose_loss, LossParams};
use relpose_core::Relformer;

use crate::args::TrainArgs;
use crate::config::{self, RunConfig};
use crate::store::{load_scene, scene_indices, SceneData};
use crate::{runtime, streams, validation, CliError, Result};

pub const LOSS_LOG_NAME: &str = "loss_log.csv";
pub const CHECKPOINT_NAME: &str = "checkpoint.rfck";
const LOG_HEADER: &str = "step,epoch,loss,trans_l1,rot_l1,s_trans,s_rot";

pub struct TrainOutcome {
    pub steps: u64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = config::load(args.config.as_deref(), args.seed)?;
    if let Some(rot) = args.rot {
        cfg.model.rot = rot.into();
    }
    if let Some(agg) = args.agg {
        cfg.model.agg = agg.into();
    }
    train_model(
        &cfg,
        &args.data,
        args.scenes.as_deref(),
        &args.out,
        args.resume.as_deref(),
    )
}

/// One training example: which loaded scene it came from plus the pair.
pub struct Example {
    pub slot: usize,
    pub pair: PairRecord,
}

/// Load the selected scenes and flatten their stored pairs into the
/// training set, applying `max_pairs` truncation. Stored order is
/// deterministic, so truncation selects a reproducible subset no matter
/// which run reads the dataset.
pub fn load_examples(
    cfg: &RunConfig,
    data: &Path,
    scenes: Option<&[usize]>,
) -> Result<(Vec<SceneData>, Vec<Example>)> {
    let indices = scene_indices(data, scenes)?;
    let mut loaded = Vec::with_capacity(indices.len());
    for &i in &indices {
        loaded.push(load_scene(data, i, true)?);
    }
    let mut examples = Vec::new();
    for (slot, sd) in loaded.iter().enumerate() {
        let pairs = pairs_from_ids(&sd.pair_ids, &sd.poses).map_err(validation)?;
        examples.extend(pairs.into_iter().map(|pair| Example { slot, pair }));
    }
    if let Some(m) = cfg.train.max_pairs {
        examples.truncate(m);
    }
    if examples.is_empty() {
        return Err(CliError::Validation("no training pairs in selection".into()));
    }
    Ok((loaded, examples))
}

pub fn train_model(
    cfg: &RunConfig,
    data: &Path,
    scenes: Option<&[usize]>,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    if cfg.model.in_channels != 3 {
        return Err(CliError::Validation(format!(
            "stored views are RGB; model.in_channels must be 3, got {}",
            cfg.model.in_channels
        )));
    }
    let (loaded, examples) = load_examples(cfg, data, scenes)?;

    let mut model = Relformer::<f32>::new(
        cfg.model.clone(),
        derive_seed(cfg.seed, streams::MODEL, 0),
    )
    .map_err(validation)?;
    let mut loss_params = LossParams::<f32>::new();

    let steps_per_epoch = examples.len().div_ceil(cfg.train.batch) as u64;
    // Resume restores the optimizer exactly as saved, learning rate
    // included; the step counter keeps counting from where it stopped.
    let mut opt = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(validation)?;
            ckpt.restore(&mut model, &mut loss_params).map_err(validation)?;
            match ckpt.optimizer {
                Some((acfg, state)) => Adam::from_state(acfg, state),
                None => fresh_adam(cfg),
            }
        }
        None => fresh_adam(cfg),
    };
    let mut step = opt.step_count();
    let start_epoch = (step / steps_per_epoch) as usize;
    if start_epoch >= cfg.train.epochs {
        return Err(CliError::Validation(format!(
            "checkpoint is already past epoch {}: step {} with {} steps per epoch",
            cfg.train.epochs, step, steps_per_epoch
        )));
    }

    fs::create_dir_all(out).map_err(|e| runtime(format!("create {}: {}", out.display(), e)))?;
    let log_path = out.join(LOSS_LOG_NAME);
    let ckpt_path = out.join(CHECKPOINT_NAME);
    let mut log = open_log(&log_path, resume.is_some())?;

    println!(
        "training {} pairs from {} scene(s), {} epochs x {} steps, {} params",
        examples.len(),
        loaded.len(),
        cfg.train.epochs - start_epoch,
        steps_per_epoch,
        model.num_params()
    );

    let mut last_loss = f64::NAN;
    for epoch in start_epoch..cfg.train.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::ORDER, epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        let mut epoch_steps = 0u64;
        for chunk in order.chunks(cfg.train.batch) {
            step += 1;
            let scalars = train_step(cfg, &mut model, &mut loss_params, &mut opt, &examples, &loaded, chunk, step)?;
            writeln!(
                log,
                "{},{},{},{},{},{},{}",
                step, epoch, scalars.loss, scalars.trans_l1, scalars.rot_l1, scalars.s_trans, scalars.s_rot
            )
            .map_err(runtime)?;
            epoch_loss += scalars.loss as f64;
            epoch_steps += 1;
            last_loss = scalars.loss as f64;
        }
        println!(
            "epoch {epoch}: mean loss {:.4} over {epoch_steps} steps",
            epoch_loss / epoch_steps as f64
        );

        let scheduled = cfg.train.checkpoint_every > 0
            && (epoch + 1) % cfg.train.checkpoint_every == 0
            && epoch + 1 < cfg.train.epochs;
        if scheduled {
            save(&ckpt_path, &model, &loss_params, &opt)?;
        }
    }

    save(&ckpt_path, &model, &loss_params, &opt)?;
    log.flush().map_err(runtime)?;
    println!("checkpoint -> {}", ckpt_path.display());
    Ok(TrainOutcome {
        steps: step,
        final_loss: last_loss,
        checkpoint: ckpt_path,
        loss_log: log_path,
    })
}

struct StepScalars {
    loss: f32,
    trans_l1: f32,
    rot_l1: f32,
    s_trans: f32,
    s_rot: f32,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &RunConfig,
    model: &mut Relformer<f32>,
    loss_params: &mut LossParams<f32>,
    opt: &mut Adam<f32>,
    examples: &[Example],
    loaded: &[SceneData],
    chunk: &[usize],
    step: u64,
) -> Result<StepScalars> {
    let (queries, refs, rels) = assemble_batch(cfg, examples, loaded, chunk, step)?;

    let mut g: Graph<f32> = Graph::new(true, derive_seed(cfg.seed, streams::STEP, step));
    let q = g.input(queries);
    let r = g.input(refs);
    let pred = model.forward(&mut g, q, r).map_err(runtime)?;
    let nodes = loss_params.register(&mut g).map_err(runtime)?;
    let (target_t, target_r) = batch_targets::<f32>(&rels, cfg.model.rot);
    let target_t = g.constant(target_t);
    let target_r = g.constant(target_r);
    let pl = pose_loss(&mut g, pred.trans, target_t, pred.rot, target_r, &nodes).map_err(runtime)?;

    let loss = g.value(pl.total).item();
    let trans_l1 = g.value(pl.trans_l1).item();
    let rot_l1 = g.value(pl.rot_l1).item();

    g.backward(pl.total).map_err(runtime)?;
    let mut grads: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
    for (name, id) in g.params() {
        if let Some(grad) = g.grad(*id) {
            grads.insert(name.clone(), grad.clone());
        }
    }

    let healthy = loss.is_finite()
        && grads.values().all(|t| t.all_finite());
    if !healthy {
        return Err(CliError::Runtime(format!(
            "non-finite loss or gradients at step {step} (lr {}): loss {loss}, {}",
            opt.config().lr,
            grad_norm_summary(&grads)
        )));
    }

    opt.begin_step();
    let mut opt_err: Option<relpose_core::autodiff::DiffError> = None;
    let mut apply = |name: &str, w: &mut Tensor<f32>| {
        if opt_err.is_some() {
            return;
        }
        if let Some(grad) = grads.get(name) {
            if let Err(e) = opt.update(name, w, grad) {
                opt_err = Some(e);
            }
        }
    };
    model.visit_mut(&mut apply);
    loss_params.visit_mut(&mut apply);
    if let Some(e) = opt_err {
        return Err(runtime(e));
    }

    Ok(StepScalars {
        loss,
        trans_l1,
        rot_l1,
        s_trans: loss_params.s_trans.item(),
        s_rot: loss_params.s_rot.item(),
    })
}

fn assemble_batch(
    cfg: &RunConfig,
    examples: &[Example],
    loaded: &[SceneData],
    chunk: &[usize],
    step: u64,
) -> Result<(Tensor<f32>, Tensor<f32>, Vec<RelativePose>)> {
    let res = cfg.model.image;
    let per_image = res * res * 3;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::AUGMENT, step));
    let mut q_data = Vec::with_capacity(chunk.len() * per_image);
    let mut r_data = Vec::with_capacity(chunk.len() * per_image);
    let mut rels = Vec::with_capacity(chunk.len());
    for &i in chunk {
        let ex = &examples[i];
        let sd = &loaded[ex.slot];
        let query = sd
            .images
            .get(&ex.pair.query_id)
            .ok_or_else(|| validation(format!("missing view {}", ex.pair.query_id)))?;
        let reference = sd
            .images
            .get(&ex.pair.ref_id)
            .ok_or_else(|| validation(format!("missing view {}", ex.pair.ref_id)))?;
        if cfg.train.augment {
            q_data.extend_from_slice(crop_augment(query, &mut rng).data());
            r_data.extend_from_slice(crop_augment(reference, &mut rng).data());
        } else {
            q_data.extend_from_slice(query.data());
            r_data.extend_from_slice(reference.data());
        }
        rels.push(ex.pair.rel);
    }
    let shape = vec![chunk.len(), res, res, 3];
    Ok((
        Tensor::new(shape.clone(), q_data),
        Tensor::new(shape, r_data),
        rels,
    ))
}

fn fresh_adam(cfg: &RunConfig) -> Adam<f32> {
    Adam::new(AdamConfig {
        lr: cfg.train.lr,
        weight_decay: cfg.train.weight_decay,
        ..AdamConfig::default()
    })
}

fn open_log(path: &Path, resume: bool) -> Result<BufWriter<fs::File>> {
    let append = resume && path.exists();
    let mut options = fs::OpenOptions::new();
    if append {
        options.append(true);
    } else {
        options.write(true).create(true).truncate(true);
    }
    let file = options
        .open(path)
        .map_err(|e| runtime(format!("open {}: {}", path.display(), e)))?;
    let mut log = BufWriter::new(file);
    if !append {
        writeln!(log, "{LOG_HEADER}").map_err(runtime)?;
    }
    Ok(log)
}

/// Total and worst per-parameter gradient norms, for abort diagnostics.
fn grad_norm_summary(grads: &BTreeMap<String, Tensor<f32>>) -> String {
    let mut norms: Vec<(String, f64)> = grads
        .iter()
        .map(|(name, t)| {
            let sq: f64 = t.data().iter().map(|&v| v as f64 * v as f64).sum();
            (name.clone(), sq)
        })
        .collect();
    let total: f64 = norms.iter().map(|(_, sq)| sq).sum::<f64>().sqrt();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let worst: Vec<String> = norms
        .iter()
        .take(3)
        .map(|(name, sq)| format!("{name} {:.3e}", sq.sqrt()))
        .collect();
    format!("grad norm {total:.3e} (worst: {})", worst.join(", "))
}

fn save(
    path: &Path,
    model: &Relformer<f32>,
    loss_params: &LossParams<f32>,
    opt: &Adam<f32>,
) -> Result<()> {
    let ckpt = Checkpoint::capture(model, loss_params, Some(opt));
    save_checkpoint(path, &ckpt).map_err(runtime)
}
