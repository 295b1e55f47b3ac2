//! Network assembly: backbone, aggregation branches, forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    trunc_normal, Conv2d, Conv2dNodes, EncoderLayer, EncoderLayerNodes, Head, HeadNodes,
    PosEnc2d, PosEnc2dNodes, Visit, VisitMut,
};
use super::{Aggregator, ModelConfig, ModelError, Result};
use crate::autodiff::{Graph, NodeId, Scalar, Tensor};

/// Per-branch aggregation parameters. The projection maps the channelwise
/// concatenation of the two feature maps to the shared hidden width.
#[derive(Clone, Debug)]
enum AggParams<T: Scalar> {
    Transformer {
        proj: Conv2d<T>,
        pos: PosEnc2d<T>,
        token: Tensor<T>,
        layers: Vec<EncoderLayer<T>>,
    },
    Conv {
        proj: Conv2d<T>,
        agg1: Conv2d<T>,
        agg2: Conv2d<T>,
    },
    /// Pooled global descriptors straight into the head; nothing to own.
    Baseline,
}

#[derive(Clone, Debug)]
struct Branch<T: Scalar> {
    agg: AggParams<T>,
    head: Head<T>,
}

impl<T: Scalar> Branch<T> {
    /// `ch` and `(h, w)` describe this branch's backbone endpoint;
    /// `out` is the regression target width.
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig, ch: usize, hw: (usize, usize), out: usize) -> Self {
        let (h, w) = hw;
        let agg = match cfg.agg {
            Aggregator::Transformer => AggParams::Transformer {
                proj: Conv2d::init(rng, 1, 2 * ch, cfg.hidden, 1, 0),
                pos: PosEnc2d::init(rng, h, w, cfg.hidden),
                token: trunc_normal(rng, &[cfg.hidden], 0.02),
                layers: (0..cfg.layers)
                    .map(|_| EncoderLayer::init(rng, cfg.hidden, cfg.heads, cfg.mlp))
                    .collect(),
            },
            Aggregator::Conv => AggParams::Conv {
                proj: Conv2d::init(rng, 1, 2 * ch, cfg.hidden, 1, 0),
                agg1: Conv2d::init(rng, 3, cfg.hidden, cfg.hidden, 1, 1),
                agg2: Conv2d::init(rng, 3, cfg.hidden, cfg.hidden, 1, 1),
            },
            Aggregator::Baseline => AggParams::Baseline,
        };
        let head_in = match cfg.agg {
            Aggregator::Baseline => 2 * ch,
            _ => cfg.hidden,
        };
        Branch {
            agg,
            head: Head::init(rng, head_in, out),
        }
    }

    fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        match &self.agg {
            AggParams::Transformer {
                proj,
                pos,
                token,
                layers,
            } => {
                proj.visit(&format!("{prefix}.proj"), f);
                pos.visit(&format!("{prefix}.pos"), f);
                f(&format!("{prefix}.token"), token);
                for (i, layer) in layers.iter().enumerate() {
                    layer.visit(&format!("{prefix}.enc{i}"), f);
                }
            }
            AggParams::Conv { proj, agg1, agg2 } => {
                proj.visit(&format!("{prefix}.proj"), f);
                agg1.visit(&format!("{prefix}.agg1"), f);
                agg2.visit(&format!("{prefix}.agg2"), f);
            }
            AggParams::Baseline => {}
        }
        self.head.visit(&format!("{prefix}.head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        match &mut self.agg {
            AggParams::Transformer {
                proj,
                pos,
                token,
                layers,
            } => {
                proj.visit_mut(&format!("{prefix}.proj"), f);
                pos.visit_mut(&format!("{prefix}.pos"), f);
                f(&format!("{prefix}.token"), token);
                for (i, layer) in layers.iter_mut().enumerate() {
                    layer.visit_mut(&format!("{prefix}.enc{i}"), f);
                }
            }
            AggParams::Conv { proj, agg1, agg2 } => {
                proj.visit_mut(&format!("{prefix}.proj"), f);
                agg1.visit_mut(&format!("{prefix}.agg1"), f);
                agg2.visit_mut(&format!("{prefix}.agg2"), f);
            }
            AggParams::Baseline => {}
        }
        self.head.visit_mut(&format!("{prefix}.head"), f);
    }

    fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<BranchNodes> {
        let agg = match &self.agg {
            AggParams::Transformer {
                proj,
                pos,
                token,
                layers,
            } => AggNodes::Transformer {
                proj: proj.register(g, &format!("{prefix}.proj"))?,
                pos: pos.register(g, &format!("{prefix}.pos"))?,
                token: g.param(&format!("{prefix}.token"), token.clone())?,
                layers: layers
                    .iter()
                    .enumerate()
                    .map(|(i, l)| l.register(g, &format!("{prefix}.enc{i}")))
                    .collect::<crate::autodiff::Result<_>>()?,
            },
            AggParams::Conv { proj, agg1, agg2 } => AggNodes::Conv {
                proj: proj.register(g, &format!("{prefix}.proj"))?,
                agg1: agg1.register(g, &format!("{prefix}.agg1"))?,
                agg2: agg2.register(g, &format!("{prefix}.agg2"))?,
            },
            AggParams::Baseline => AggNodes::Baseline,
        };
        Ok(BranchNodes {
            agg,
            head: self.head.register(g, &format!("{prefix}.head"))?,
            prefix: prefix.to_string(),
        })
    }
}

enum AggNodes {
    Transformer {
        proj: Conv2dNodes,
        pos: PosEnc2dNodes,
        token: NodeId,
        layers: Vec<EncoderLayerNodes>,
    },
    Conv {
        proj: Conv2dNodes,
        agg1: Conv2dNodes,
        agg2: Conv2dNodes,
    },
    Baseline,
}

struct BranchNodes {
    agg: AggNodes,
    head: HeadNodes,
    prefix: String,
}

/// Global average pool `[n, h, w, c]` to `[n, c]`.
fn gap<T: Scalar>(g: &mut Graph<T>, x: NodeId) -> crate::autodiff::Result<NodeId> {
    let sh = g.shape(x).to_vec();
    let flat = g.reshape(x, vec![sh[0], sh[1] * sh[2], sh[3]])?;
    g.mean_axis(flat, 1)
}

impl BranchNodes {
    /// Reduce this branch's endpoint features for both images to one
    /// vector per pair and regress the target. `f1`/`f2` are
    /// `[n, h, w, c]` feature maps from the same backbone stage.
    fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        f1: NodeId,
        f2: NodeId,
        dropout: f64,
    ) -> Result<NodeId> {
        let pooled = match &self.agg {
            AggNodes::Transformer {
                proj,
                pos,
                token,
                layers,
            } => {
                let cat = g.concat(&[f1, f2], 3)?;
                let x = proj.apply(g, cat)?;
                let sh = g.shape(x).to_vec();
                let (n, s) = (sh[0], sh[1] * sh[2]);
                let c = sh[3];
                let x = g.reshape(x, vec![n, s, c])?;
                let tok = g.reshape(*token, vec![1, 1, c])?;
                let tok = g.expand(tok, 0, n)?;
                let mut x = g.concat(&[tok, x], 1)?;
                let pos = pos.sequence(g)?;
                for (i, layer) in layers.iter().enumerate() {
                    x = layer.apply(g, x, pos, dropout, &format!("{}.enc{i}", self.prefix))?;
                }
                let tok_out = g.slice(x, 1, 0, 1)?;
                g.reshape(tok_out, vec![n, c])?
            }
            AggNodes::Conv { proj, agg1, agg2 } => {
                let cat = g.concat(&[f1, f2], 3)?;
                let x = proj.apply(g, cat)?;
                let x = agg1.apply(g, x)?;
                let x = g.relu(x);
                let x = agg2.apply(g, x)?;
                let x = g.relu(x);
                gap(g, x)?
            }
            AggNodes::Baseline => {
                let d1 = gap(g, f1)?;
                let d2 = gap(g, f2)?;
                g.concat(&[d1, d2], 1)?
            }
        };
        g.mark(&format!("{}.pooled", self.prefix), pooled);
        Ok(self.head.apply(g, pooled)?)
    }
}

/// Translation and rotation estimates for a batch of image pairs.
/// Rotation rows are encoded per the configured representation.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub trans: NodeId,
    pub rot: NodeId,
}

/// The relative pose regressor.
///
/// Owns all host-side weights. Each training step registers them into a
/// fresh graph (`forward`), reads gradients back by parameter name, and
/// applies the optimizer through `visit_mut`.
#[derive(Clone, Debug)]
pub struct Relformer<T: Scalar> {
    cfg: ModelConfig,
    backbone: Vec<Conv2d<T>>,
    trans: Branch<T>,
    rot: Branch<T>,
}

impl<T: Scalar> Relformer<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = Vec::with_capacity(cfg.stage_channels.len());
        let mut cin = cfg.in_channels;
        for &cout in &cfg.stage_channels {
            backbone.push(Conv2d::init(&mut rng, 3, cin, cout, 2, 1));
            cin = cout;
        }
        let n_stages = cfg.stage_channels.len();
        // Baseline branches regress from final-stage descriptors of both
        // images; the others tap their own endpoint.
        let (trans_ch, trans_hw, rot_ch, rot_hw) = match cfg.agg {
            Aggregator::Baseline => {
                let ch = cfg.stage_channels[n_stages - 1];
                let s = cfg.stage_spatial(n_stages - 1);
                (ch, (s, s), ch, (s, s))
            }
            _ => {
                let tch = cfg.stage_channels[n_stages - 1];
                let ts = cfg.stage_spatial(n_stages - 1);
                let rch = cfg.stage_channels[n_stages - 2];
                let rs = cfg.stage_spatial(n_stages - 2);
                (tch, (ts, ts), rch, (rs, rs))
            }
        };
        let trans = Branch::init(&mut rng, &cfg, trans_ch, trans_hw, 3);
        let rot = Branch::init(&mut rng, &cfg, rot_ch, rot_hw, cfg.rot.dim());
        Ok(Relformer {
            cfg,
            backbone,
            trans,
            rot,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn visit(&self, f: &mut Visit<T>) {
        for (i, stage) in self.backbone.iter().enumerate() {
            stage.visit(&format!("backbone.stage{i}"), f);
        }
        self.trans.visit("trans", f);
        self.rot.visit("rot", f);
    }

    pub fn visit_mut(&mut self, f: &mut VisitMut<T>) {
        for (i, stage) in self.backbone.iter_mut().enumerate() {
            stage.visit_mut(&format!("backbone.stage{i}"), f);
        }
        self.trans.visit_mut("trans", f);
        self.rot.visit_mut("rot", f);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    fn check_batch(&self, s: &[usize]) -> bool {
        s.len() == 4 && s[1] == self.cfg.image && s[2] == self.cfg.image && s[3] == self.cfg.in_channels
    }

    fn register_backbone(&self, g: &mut Graph<T>) -> crate::autodiff::Result<Vec<Conv2dNodes>> {
        self.backbone
            .iter()
            .enumerate()
            .map(|(i, s)| s.register(g, &format!("backbone.stage{i}")))
            .collect()
    }

    /// Global-average-pooled final-stage features, `[n, c_last]`: the raw
    /// retrieval descriptor (callers normalize). Registers only the
    /// backbone weights, so use a fresh graph.
    pub fn pooled_final_stage(&self, g: &mut Graph<T>, img: NodeId) -> Result<NodeId> {
        let s = g.shape(img).to_vec();
        if !self.check_batch(&s) {
            return Err(ModelError::Input(format!(
                "expected [n, {}, {}, {}], got {:?}",
                self.cfg.image, self.cfg.image, self.cfg.in_channels, s
            )));
        }
        let stages = self.register_backbone(g)?;
        let mut x = img;
        for stage in &stages {
            x = stage.apply(g, x)?;
            x = g.relu(x);
        }
        Ok(gap(g, x)?)
    }

    /// Run the full model on a batch of image pairs, each image
    /// `[n, image, image, in_channels]`. Registers every weight into `g`,
    /// so call at most once per graph.
    pub fn forward(&self, g: &mut Graph<T>, img1: NodeId, img2: NodeId) -> Result<Prediction> {
        let s1 = g.shape(img1).to_vec();
        let s2 = g.shape(img2).to_vec();
        if !self.check_batch(&s1) || !self.check_batch(&s2) || s1[0] != s2[0] {
            return Err(ModelError::Input(format!(
                "expected two [n, {}, {}, {}] batches, got {:?} and {:?}",
                self.cfg.image, self.cfg.image, self.cfg.in_channels, s1, s2
            )));
        }

        let stages = self.register_backbone(g)?;
        let run_backbone = |g: &mut Graph<T>, img: NodeId| -> crate::autodiff::Result<Vec<NodeId>> {
            let mut feats = Vec::with_capacity(stages.len());
            let mut x = img;
            for stage in &stages {
                x = stage.apply(g, x)?;
                x = g.relu(x);
                feats.push(x);
            }
            Ok(feats)
        };
        let feats1 = run_backbone(g, img1)?;
        let feats2 = run_backbone(g, img2)?;

        let last = feats1.len() - 1;
        let (t_idx, r_idx) = match self.cfg.agg {
            Aggregator::Baseline => (last, last),
            _ => (last, last - 1),
        };

        let trans_nodes = self.trans.register(g, "trans")?;
        let rot_nodes = self.rot.register(g, "rot")?;
        let trans = trans_nodes.apply(g, feats1[t_idx], feats2[t_idx], self.cfg.dropout)?;
        let rot = rot_nodes.apply(g, feats1[r_idx], feats2[r_idx], self.cfg.dropout)?;
        Ok(Prediction { trans, rot })
    }
}
