//! The relative pose regression network.
//!
//! Two images pass through a shared small CNN (siamese weights). Each of
//! the two task branches (translation, rotation) taps its own backbone
//! endpoint, concatenates the two images' feature maps channelwise,
//! projects them to a common width with a 1x1 convolution, and aggregates
//! the paired map into a single vector that an MLP head regresses into the
//! pose delta. The full model aggregates with a pre-LN transformer encoder
//! over the flattened map plus a learned task token; two ablation variants
//! replace the encoder with a two-layer convolution stack or skip spatial
//! aggregation entirely and regress from pooled global descriptors.
//!
//! The rotation endpoint sits one backbone stage earlier than the
//! translation endpoint, so its feature map has twice the spatial
//! resolution per axis.

pub(crate) mod layers;
mod net;

pub use net::{Prediction, Relformer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::DiffError;
use crate::geometry::RotationKind;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("model input: {0}")]
    Input(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// How the paired feature map is reduced to one vector per branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregator {
    /// Transformer encoder over the flattened map with a task token.
    #[serde(rename = "transformer")]
    Transformer,
    /// Two 3x3 conv + relu layers, then global average pooling.
    #[serde(rename = "conv")]
    Conv,
    /// No spatial aggregation: pooled global descriptors of both images,
    /// concatenated, straight into the heads.
    #[serde(rename = "baseline")]
    Baseline,
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Aggregator::Transformer => "transformer",
            Aggregator::Conv => "conv",
            Aggregator::Baseline => "baseline",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "transformer" => Ok(Aggregator::Transformer),
            "conv" => Ok(Aggregator::Conv),
            "baseline" => Ok(Aggregator::Baseline),
            other => Err(format!(
                "unknown aggregator '{other}' (transformer, conv, baseline)"
            )),
        }
    }
}

/// Every architecture hyperparameter. The backbone is a chain of 3x3
/// stride-2 conv + relu stages; the rotation branch taps the second to
/// last stage, the translation branch the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Square input resolution.
    pub image: usize,
    pub in_channels: usize,
    /// Output channels per backbone stage, two or more entries.
    pub stage_channels: Vec<usize>,
    /// Shared width of the projected paired maps and the encoder.
    pub hidden: usize,
    /// Encoder depth.
    pub layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Encoder MLP inner width.
    pub mlp: usize,
    pub dropout: f64,
    pub rot: RotationKind,
    pub agg: Aggregator,
}

impl ModelConfig {
    /// CPU-trainable default: 64x64 inputs, endpoints at 8x8x64 and
    /// 4x4x96, width 128, two encoder layers of four heads.
    pub fn desk() -> Self {
        ModelConfig {
            image: 64,
            in_channels: 3,
            stage_channels: vec![16, 32, 64, 96],
            hidden: 128,
            layers: 2,
            heads: 4,
            mlp: 256,
            dropout: 0.1,
            rot: RotationKind::SixD,
            agg: Aggregator::Transformer,
        }
    }

    /// Full-scale shape: 224x224 inputs, endpoints at 28x28x40 and
    /// 14x14x112, width 512, six layers of eight heads. Expressible, not
    /// trainable on a desk CPU.
    pub fn full_scale() -> Self {
        ModelConfig {
            image: 224,
            in_channels: 3,
            stage_channels: vec![24, 32, 40, 112],
            hidden: 512,
            layers: 6,
            heads: 8,
            mlp: 2048,
            dropout: 0.1,
            rot: RotationKind::SixD,
            agg: Aggregator::Transformer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.in_channels == 0 {
            return fail("in_channels must be positive".into());
        }
        if self.stage_channels.len() < 2 {
            return fail(format!(
                "need at least 2 backbone stages, got {}",
                self.stage_channels.len()
            ));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return fail("stage channel counts must be positive".into());
        }
        let stages = self.stage_channels.len();
        let divisor = 1usize << stages;
        if self.image == 0 || self.image % divisor != 0 {
            return fail(format!(
                "image size {} must be a positive multiple of 2^{} (one halving per stage)",
                self.image, stages
            ));
        }
        let (th, tw, _) = self.trans_endpoint();
        let (rh, rw, _) = self.rot_endpoint();
        if th == 0 {
            return fail("translation endpoint collapsed to zero pixels".into());
        }
        // Holds by construction with stride-2 stages; keep the check so a
        // future backbone change cannot silently break the contract.
        if rh != 2 * th || rw != 2 * tw {
            return fail(format!(
                "rotation endpoint {rh}x{rw} must be twice the translation endpoint {th}x{tw}"
            ));
        }
        if self.hidden == 0 || self.hidden % 2 != 0 {
            return fail(format!(
                "hidden width {} must be positive and even (the positional encoding splits it)",
                self.hidden
            ));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!(
                "heads ({}) must divide the hidden width ({})",
                self.heads, self.hidden
            ));
        }
        if self.layers == 0 {
            return fail("need at least one encoder layer".into());
        }
        if self.mlp == 0 {
            return fail("encoder mlp width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Spatial size after stage `i` (0-based).
    fn stage_spatial(&self, i: usize) -> usize {
        self.image >> (i + 1)
    }

    /// Translation endpoint (h, w, c): the last backbone stage.
    pub fn trans_endpoint(&self) -> (usize, usize, usize) {
        let i = self.stage_channels.len() - 1;
        let s = self.stage_spatial(i);
        (s, s, self.stage_channels[i])
    }

    /// Rotation endpoint (h, w, c): the second to last stage.
    pub fn rot_endpoint(&self) -> (usize, usize, usize) {
        let i = self.stage_channels.len() - 2;
        let s = self.stage_spatial(i);
        (s, s, self.stage_channels[i])
    }

    /// Encoder sequence length for a branch endpoint: token plus one
    /// entry per spatial position.
    pub fn seq_len(&self, endpoint: (usize, usize, usize)) -> usize {
        endpoint.0 * endpoint.1 + 1
    }
}
