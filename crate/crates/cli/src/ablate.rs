//! `ablate`: train and evaluate every cell of the aggregator x rotation
//! grid, several seeds per cell, merged into one CSV.
//!
//! Each cell reports two views of quality: errors on its own training
//! pairs (the overfit metric, sensitive to representation choice) and the
//! retrieval-protocol medians from `eval`. All numbers land in the CSV
//! whether or not they flatter any particular variant.

use std::fs;
use std::io::Write as _;

use relpose_core::geometry::RotationKind;
use relpose_core::model::Aggregator;

use crate::args::{AblateArgs, PredictorArg};
use crate::config;
use crate::eval::{self, identity_pair_errors, median, pair_errors};
use crate::train::{self, load_examples};
use crate::{runtime, Result};

pub const CSV_NAME: &str = "ablate.csv";
const CSV_HEADER: &str = "agg,rot,seed,steps,final_loss,\
    pair_median_pos_m,pair_median_rot_deg,\
    identity_median_pos_m,identity_median_rot_deg,\
    eval_median_pos_m,eval_median_rot_deg";

pub fn rot_name(k: RotationKind) -> &'static str {
    match k {
        RotationKind::Quat => "quat",
        RotationKind::SixD => "6d",
        RotationKind::NineD => "9d",
    }
}

pub fn agg_name(a: Aggregator) -> &'static str {
    match a {
        Aggregator::Transformer => "transformer",
        Aggregator::Conv => "conv",
        Aggregator::Baseline => "baseline",
    }
}

pub fn run(args: &AblateArgs) -> Result<()> {
    let base = config::load(args.config.as_deref(), args.seed)?;
    let rots: Vec<RotationKind> = if args.rot.is_empty() {
        RotationKind::ALL.to_vec()
    } else {
        args.rot.iter().map(|&r| r.into()).collect()
    };
    let aggs: Vec<Aggregator> = if args.agg.is_empty() {
        vec![Aggregator::Transformer, Aggregator::Conv, Aggregator::Baseline]
    } else {
        args.agg.iter().map(|&a| a.into()).collect()
    };

    fs::create_dir_all(&args.out)
        .map_err(|e| runtime(format!("create {}: {}", args.out.display(), e)))?;
    let csv_path = args.out.join(CSV_NAME);
    let mut csv = Vec::new();
    writeln!(csv, "{CSV_HEADER}").map_err(runtime)?;

    let cells = aggs.len() * rots.len() * args.seeds as usize;
    let mut done = 0;
    for &agg in &aggs {
        for &rot in &rots {
            for i in 0..args.seeds {
                let seed = base.seed + i;
                let mut cfg = base.clone();
                cfg.seed = seed;
                cfg.model.agg = agg;
                cfg.model.rot = rot;

                done += 1;
                let cell = format!("{}-{}-s{}", agg_name(agg), rot_name(rot), seed);
                println!("[{done}/{cells}] {cell}");
                let cell_out = args.out.join(&cell);

                let outcome =
                    train::train_model(&cfg, &args.data, args.scenes.as_deref(), &cell_out, None)?;
                let (model, _) = eval::load_model(&outcome.checkpoint)?;

                // Overfit metric: recovered-pose errors on the training pairs,
                // plus the identity floor on the same pairs for context.
                let (loaded, examples) = load_examples(&cfg, &args.data, args.scenes.as_deref())?;
                let mut pos = Vec::new();
                let mut rot_err = Vec::new();
                let mut id_pos = Vec::new();
                let mut id_rot = Vec::new();
                for (slot, sd) in loaded.iter().enumerate() {
                    let pairs: Vec<_> = examples
                        .iter()
                        .filter(|e| e.slot == slot)
                        .map(|e| e.pair.clone())
                        .collect();
                    if pairs.is_empty() {
                        continue;
                    }
                    for (p, r) in pair_errors(&model, &pairs, &sd.images, &sd.poses)? {
                        pos.push(p);
                        rot_err.push(r);
                    }
                    for (p, r) in identity_pair_errors(&pairs, &sd.poses) {
                        id_pos.push(p);
                        id_rot.push(r);
                    }
                }

                let eval_scenes = args.eval_scenes.as_deref().or(args.scenes.as_deref());
                let report =
                    eval::evaluate(&model, &args.data, eval_scenes, PredictorArg::Model)?;

                writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    agg_name(agg),
                    rot_name(rot),
                    seed,
                    outcome.steps,
                    outcome.final_loss,
                    median(&pos)?,
                    median(&rot_err)?,
                    median(&id_pos)?,
                    median(&id_rot)?,
                    report.avg_median_pos_m,
                    report.avg_median_rot_deg
                )
                .map_err(runtime)?;
            }
        }
    }

    fs::write(&csv_path, csv)
        .map_err(|e| runtime(format!("write {}: {}", csv_path.display(), e)))?;
    println!("merged grid -> {}", csv_path.display());
    Ok(())
}
