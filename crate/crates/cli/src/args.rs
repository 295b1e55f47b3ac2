//! Flag surface. Parsing stays here; semantics live in the command modules.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use relpose_core::geometry::RotationKind;
use relpose_core::model::Aggregator;

#[derive(Parser, Debug)]
#[command(
    name = "relpose",
    version,
    about = "Relative camera pose regression: synthetic data, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scenes: rendered views, poses, retrieval pairs.
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint: retrieval, regression, median pose errors.
    Eval(EvalArgs),
    /// Recover the absolute pose of one query image against a scene.
    Localize(LocalizeArgs),
    /// Run the aggregator x rotation grid and merge results into one CSV.
    Ablate(AblateArgs),
}

/// Rotation regression target.
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RotArg {
    /// Unit quaternion, positive scalar part.
    Quat,
    /// First two rotation matrix columns, Gram-Schmidt recovery.
    #[value(name = "6d")]
    SixD,
    /// Full rotation matrix, SVD recovery.
    #[value(name = "9d")]
    NineD,
}

impl From<RotArg> for RotationKind {
    fn from(a: RotArg) -> RotationKind {
        match a {
            RotArg::Quat => RotationKind::Quat,
            RotArg::SixD => RotationKind::SixD,
            RotArg::NineD => RotationKind::NineD,
        }
    }
}

/// Feature aggregation variant.
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AggArg {
    /// Transformer encoder over the paired feature map.
    Transformer,
    /// Two 3x3 convolutions then global average pooling.
    Conv,
    /// Pooled global descriptors of both images, no paired map.
    Baseline,
}

impl From<AggArg> for Aggregator {
    fn from(a: AggArg) -> Aggregator {
        match a {
            AggArg::Transformer => Aggregator::Transformer,
            AggArg::Conv => Aggregator::Conv,
            AggArg::Baseline => Aggregator::Baseline,
        }
    }
}

/// Which relative pose feeds Eq-style absolute recovery during eval.
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    /// The trained model's regression output.
    Model,
    /// Ground-truth relative pose: isolates the recovery algebra, which
    /// must then produce zero error regardless of weights.
    Oracle,
    /// Zero relative pose: the retrieved reference's pose verbatim, the
    /// floor any useful regressor has to beat.
    Identity,
}

#[derive(Parser, Debug)]
pub struct GenArgs {
    /// JSON run config; omitted means the desk-scale default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Parser, Debug)]
pub struct TrainArgs {
    /// JSON run config; omitted means the desk-scale default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generated dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene indices to train on, e.g. 0,1,2. Default: every scene found.
    #[arg(long, value_delimiter = ',')]
    pub scenes: Option<Vec<usize>>,
    /// Override the rotation target from the config.
    #[arg(long, value_enum)]
    pub rot: Option<RotArg>,
    /// Override the aggregator from the config.
    #[arg(long, value_enum)]
    pub agg: Option<AggArg>,
    /// Resume from a checkpoint, continuing its step counter.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Parser, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Generated dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the report JSON and raw error CSV. Stdout only if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scene indices to evaluate. Default: every scene found.
    #[arg(long, value_delimiter = ',')]
    pub scenes: Option<Vec<usize>>,
    /// Relative pose source, for separating algebra from regression.
    #[arg(long, value_enum, default_value_t = PredictorArg::Model)]
    pub predictor: PredictorArg,
}

#[derive(Parser, Debug)]
pub struct LocalizeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Scene directory holding poses.csv and view images.
    #[arg(long)]
    pub data: PathBuf,
    /// Query image tensor file.
    #[arg(long)]
    pub query: PathBuf,
}

#[derive(Parser, Debug)]
pub struct AblateArgs {
    /// JSON run config; omitted means the desk-scale default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; cell i trains with seed + i when --seeds > 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generated dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory: per-cell artifacts plus the merged ablate.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Scene indices to train on. Default: every scene found.
    #[arg(long, value_delimiter = ',')]
    pub scenes: Option<Vec<usize>>,
    /// Scene indices to evaluate on. Default: the training scenes.
    #[arg(long, value_delimiter = ',')]
    pub eval_scenes: Option<Vec<usize>>,
    /// Restrict the rotation axis of the grid. Repeatable. Default: all three.
    #[arg(long, value_enum)]
    pub rot: Vec<RotArg>,
    /// Restrict the aggregator axis of the grid. Repeatable. Default: all three.
    #[arg(long, value_enum)]
    pub agg: Vec<AggArg>,
    /// Seeds per cell.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn rotation_flag_accepts_the_three_documented_spellings() {
        for (s, want) in [
            ("quat", RotArg::Quat),
            ("6d", RotArg::SixD),
            ("9d", RotArg::NineD),
        ] {
            let cli = Cli::try_parse_from([
                "relpose", "train", "--data", "d", "--out", "o", "--rot", s,
            ])
            .unwrap();
            match cli.command {
                Command::Train(a) => assert_eq!(a.rot, Some(want)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn scene_lists_split_on_commas() {
        let cli = Cli::try_parse_from([
            "relpose", "eval", "--checkpoint", "c", "--data", "d", "--scenes", "0,2,3",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(a) => assert_eq!(a.scenes, Some(vec![0, 2, 3])),
            _ => unreachable!(),
        }
    }

    #[test]
    fn unknown_flags_are_rejected() {
        assert!(Cli::try_parse_from(["relpose", "gen", "--out", "o", "--bogus"]).is_err());
    }
}
