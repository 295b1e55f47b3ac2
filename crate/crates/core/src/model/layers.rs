//! Parameter containers and their graph application.
//!
//! Each container owns host-side tensors, enumerates them through
//! `visit`/`visit_mut` under a dotted name prefix, and registers them into
//! a graph once per step. Registration and application are split because
//! the siamese backbone applies the same registered weights to both
//! images.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, Result, Scalar, Tensor};

/// Uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_fan_in<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}

/// Normal(0, sigma) with samples beyond two sigma redrawn.
pub fn trunc_normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], sigma: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        // Box-Muller; one draw per call keeps the stream simple.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return T::from_f64(z * sigma);
        }
    })
}

pub type Visit<'a, T> = dyn FnMut(&str, &Tensor<T>) + 'a;
pub type VisitMut<'a, T> = dyn FnMut(&str, &mut Tensor<T>) + 'a;

// ----- linear -----

#[derive(Clone, Debug)]
pub struct Linear<T: Scalar> {
    /// `[fan_in, fan_out]`.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: uniform_fan_in(rng, &[fan_in, fan_out], fan_in),
            b: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<LinearNodes> {
        Ok(LinearNodes {
            w: g.param(&format!("{prefix}.w"), self.w.clone())?,
            b: g.param(&format!("{prefix}.b"), self.b.clone())?,
        })
    }
}

#[derive(Clone, Copy)]
pub struct LinearNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl LinearNodes {
    /// `x` is `[rows, fan_in]`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, self.w)?;
        g.add(y, self.b)
    }
}

// ----- conv -----

#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    /// `[kh, kw, cin, cout]`.
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn init(
        rng: &mut ChaCha8Rng,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let fan_in = kernel * kernel * cin;
        Conv2d {
            w: uniform_fan_in(rng, &[kernel, kernel, cin, cout], fan_in),
            b: Tensor::zeros(vec![cout]),
            stride,
            pad,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        f(&format!("{prefix}.w"), &self.w);
        f(&format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        f(&format!("{prefix}.w"), &mut self.w);
        f(&format!("{prefix}.b"), &mut self.b);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<Conv2dNodes> {
        Ok(Conv2dNodes {
            w: g.param(&format!("{prefix}.w"), self.w.clone())?,
            b: g.param(&format!("{prefix}.b"), self.b.clone())?,
            stride: self.stride,
            pad: self.pad,
        })
    }
}

#[derive(Clone, Copy)]
pub struct Conv2dNodes {
    pub w: NodeId,
    pub b: NodeId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dNodes {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let y = g.conv2d(x, self.w, self.stride, self.pad)?;
        g.add(y, self.b)
    }
}

// ----- layer norm -----

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn init(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::full(vec![dim], T::one()),
            beta: Tensor::zeros(vec![dim]),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        f(&format!("{prefix}.g"), &self.gamma);
        f(&format!("{prefix}.b"), &self.beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        f(&format!("{prefix}.g"), &mut self.gamma);
        f(&format!("{prefix}.b"), &mut self.beta);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<LayerNormNodes> {
        Ok(LayerNormNodes {
            gamma: g.param(&format!("{prefix}.g"), self.gamma.clone())?,
            beta: g.param(&format!("{prefix}.b"), self.beta.clone())?,
        })
    }
}

#[derive(Clone, Copy)]
pub struct LayerNormNodes {
    pub gamma: NodeId,
    pub beta: NodeId,
}

impl LayerNormNodes {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        g.layer_norm(x, self.gamma, self.beta)
    }
}

// ----- multi-head self-attention -----

#[derive(Clone, Debug)]
pub struct Mha<T: Scalar> {
    pub qkv: Linear<T>,
    pub out: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> Mha<T> {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize, heads: usize) -> Self {
        Mha {
            qkv: Linear::init(rng, dim, 3 * dim),
            out: Linear::init(rng, dim, dim),
            heads,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        self.qkv.visit(&format!("{prefix}.qkv"), f);
        self.out.visit(&format!("{prefix}.out"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        self.qkv.visit_mut(&format!("{prefix}.qkv"), f);
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<MhaNodes> {
        Ok(MhaNodes {
            qkv: self.qkv.register(g, &format!("{prefix}.qkv"))?,
            out: self.out.register(g, &format!("{prefix}.out"))?,
            heads: self.heads,
        })
    }
}

#[derive(Clone, Copy)]
pub struct MhaNodes {
    pub qkv: LinearNodes,
    pub out: LinearNodes,
    pub heads: usize,
}

impl MhaNodes {
    /// Self-attention over `x: [n, s, c]`. The softmax node is marked
    /// with `{mark}.attn` so tests can inspect attention rows.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, mark: &str) -> Result<NodeId> {
        let (n, s, c) = {
            let sh = g.shape(x);
            (sh[0], sh[1], sh[2])
        };
        let h = self.heads;
        let d = c / h;

        let flat = g.reshape(x, vec![n * s, c])?;
        let qkv = self.qkv.apply(g, flat)?;
        let qkv = g.reshape(qkv, vec![n, s, 3 * c])?;

        // [n, s, c] -> [n*h, s, d] per head.
        let split = |g: &mut Graph<T>, start: usize| -> Result<NodeId> {
            let part = g.slice(qkv, 2, start, c)?;
            let part = g.reshape(part, vec![n, s, h, d])?;
            let part = g.permute(part, &[0, 2, 1, 3])?;
            g.reshape(part, vec![n * h, s, d])
        };
        let q = split(g, 0)?;
        let k = split(g, c)?;
        let v = split(g, 2 * c)?;

        let kt = g.permute(k, &[0, 2, 1])?;
        let scores = g.bmm(q, kt)?;
        let scores = g.scale(scores, T::from_f64(1.0 / (d as f64).sqrt()));
        let attn = g.softmax(scores)?;
        g.mark(&format!("{mark}.attn"), attn);

        let ctx = g.bmm(attn, v)?;
        let ctx = g.reshape(ctx, vec![n, h, s, d])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, vec![n * s, c])?;
        let out = self.out.apply(g, ctx)?;
        g.reshape(out, vec![n, s, c])
    }
}

// ----- encoder layer -----

#[derive(Clone, Debug)]
pub struct EncoderLayer<T: Scalar> {
    pub ln1: LayerNorm<T>,
    pub attn: Mha<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize, heads: usize, mlp: usize) -> Self {
        EncoderLayer {
            ln1: LayerNorm::init(dim),
            attn: Mha::init(rng, dim, heads),
            ln2: LayerNorm::init(dim),
            fc1: Linear::init(rng, dim, mlp),
            fc2: Linear::init(rng, mlp, dim),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        self.ln1.visit(&format!("{prefix}.ln1"), f);
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.ln2.visit(&format!("{prefix}.ln2"), f);
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        self.ln1.visit_mut(&format!("{prefix}.ln1"), f);
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.ln2.visit_mut(&format!("{prefix}.ln2"), f);
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<EncoderLayerNodes> {
        Ok(EncoderLayerNodes {
            ln1: self.ln1.register(g, &format!("{prefix}.ln1"))?,
            attn: self.attn.register(g, &format!("{prefix}.attn"))?,
            ln2: self.ln2.register(g, &format!("{prefix}.ln2"))?,
            fc1: self.fc1.register(g, &format!("{prefix}.fc1"))?,
            fc2: self.fc2.register(g, &format!("{prefix}.fc2"))?,
        })
    }
}

#[derive(Clone, Copy)]
pub struct EncoderLayerNodes {
    pub ln1: LayerNormNodes,
    pub attn: MhaNodes,
    pub ln2: LayerNormNodes,
    pub fc1: LinearNodes,
    pub fc2: LinearNodes,
}

impl EncoderLayerNodes {
    /// Pre-LN block. The positional encoding joins the attention input
    /// every layer; the residual stream carries `x` without it:
    ///
    /// `x <- x + Drop(MHA(LN(x + pos)))`, then `x <- x + Drop(MLP(LN(x)))`.
    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        pos: NodeId,
        dropout: f64,
        mark: &str,
    ) -> Result<NodeId> {
        let (n, s, c) = {
            let sh = g.shape(x);
            (sh[0], sh[1], sh[2])
        };

        let xp = g.add(x, pos)?;
        let normed = self.ln1.apply(g, xp)?;
        let a = self.attn.apply(g, normed, mark)?;
        let a = g.dropout(a, dropout)?;
        let x = g.add(x, a)?;

        let normed = self.ln2.apply(g, x)?;
        let flat = g.reshape(normed, vec![n * s, c])?;
        let m = self.fc1.apply(g, flat)?;
        let m = g.gelu(m);
        let m = self.fc2.apply(g, m)?;
        let m = g.reshape(m, vec![n, s, c])?;
        let m = g.dropout(m, dropout)?;
        g.add(x, m)
    }
}

// ----- learned 2D positional encoding -----

/// Two tables indexed by the spatial coordinates of the flattened map.
/// Position (i, j) with i in 1..=h, j in 1..=w encodes as the
/// concatenation of x-table row j and y-table row i; row 0 of both tables
/// is reserved for the task token at the front of the sequence.
#[derive(Clone, Debug)]
pub struct PosEnc2d<T: Scalar> {
    /// `[w + 1, hidden/2]`.
    pub x: Tensor<T>,
    /// `[h + 1, hidden/2]`.
    pub y: Tensor<T>,
    pub h: usize,
    pub w: usize,
}

impl<T: Scalar> PosEnc2d<T> {
    pub fn init(rng: &mut ChaCha8Rng, h: usize, w: usize, hidden: usize) -> Self {
        PosEnc2d {
            x: trunc_normal(rng, &[w + 1, hidden / 2], 0.02),
            y: trunc_normal(rng, &[h + 1, hidden / 2], 0.02),
            h,
            w,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        f(&format!("{prefix}.x"), &self.x);
        f(&format!("{prefix}.y"), &self.y);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        f(&format!("{prefix}.x"), &mut self.x);
        f(&format!("{prefix}.y"), &mut self.y);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<PosEnc2dNodes> {
        Ok(PosEnc2dNodes {
            x: g.param(&format!("{prefix}.x"), self.x.clone())?,
            y: g.param(&format!("{prefix}.y"), self.y.clone())?,
            h: self.h,
            w: self.w,
        })
    }
}

#[derive(Clone, Copy)]
pub struct PosEnc2dNodes {
    pub x: NodeId,
    pub y: NodeId,
    pub h: usize,
    pub w: usize,
}

impl PosEnc2dNodes {
    /// Full sequence encoding `[h*w + 1, hidden]`: token row first, then
    /// the map positions in row-major order (i outer, j inner).
    pub fn sequence<T: Scalar>(&self, g: &mut Graph<T>) -> Result<NodeId> {
        let mut xs = Vec::with_capacity(self.h * self.w + 1);
        let mut ys = Vec::with_capacity(self.h * self.w + 1);
        xs.push(0);
        ys.push(0);
        for i in 1..=self.h {
            for j in 1..=self.w {
                xs.push(j);
                ys.push(i);
            }
        }
        let ex = g.embedding(self.x, &xs)?;
        let ey = g.embedding(self.y, &ys)?;
        g.concat(&[ex, ey], 1)
    }
}

// ----- regression head -----

/// One gelu hidden layer preserving the input width, then a linear map to
/// the target dimension.
#[derive(Clone, Debug)]
pub struct Head<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Head<T> {
    pub fn init(rng: &mut ChaCha8Rng, dim: usize, out: usize) -> Self {
        Head {
            fc1: Linear::init(rng, dim, dim),
            fc2: Linear::init(rng, dim, out),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut Visit<T>) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMut<T>) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }

    pub fn register(&self, g: &mut Graph<T>, prefix: &str) -> Result<HeadNodes> {
        Ok(HeadNodes {
            fc1: self.fc1.register(g, &format!("{prefix}.fc1"))?,
            fc2: self.fc2.register(g, &format!("{prefix}.fc2"))?,
        })
    }
}

#[derive(Clone, Copy)]
pub struct HeadNodes {
    pub fc1: LinearNodes,
    pub fc2: LinearNodes,
}

impl HeadNodes {
    /// `x` is `[n, dim]`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.apply(g, x)?;
        let h = g.gelu(h);
        self.fc2.apply(g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn init_scales_follow_fan_in() {
        let mut r = rng();
        let lin: Linear<f64> = Linear::init(&mut r, 100, 50);
        let bound = 0.1;
        assert!(lin.w.data().iter().all(|v| v.abs() < bound));
        assert!(lin.b.data().iter().all(|&v| v == 0.0));

        let t: Tensor<f64> = trunc_normal(&mut r, &[10_000], 0.02);
        assert!(t.data().iter().all(|v| v.abs() <= 0.04 + 1e-12));
        let mean: f64 = t.data().iter().sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 2e-3);
    }

    #[test]
    fn attention_rows_sum_to_one_in_every_head() {
        let mut r = rng();
        let mha: Mha<f64> = Mha::init(&mut r, 8, 2);
        let mut g = Graph::inference();
        let x = g.input(trunc_normal(&mut r, &[2, 5, 8], 1.0));
        let nodes = mha.register(&mut g, "attn").unwrap();
        nodes.apply(&mut g, x, "t0").unwrap();
        let marks = g.marked("t0.attn");
        assert_eq!(marks.len(), 1);
        let attn = g.value(marks[0]);
        // [n*heads, s, s] = [4, 5, 5]
        assert_eq!(attn.shape(), &[4, 5, 5]);
        for row in attn.data().chunks(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encoder_output_ignores_sequence_length_when_rows_are_identical() {
        // Attention over identical keys is uniform, so the context equals
        // the shared value row and the token output cannot depend on how
        // many copies are present.
        let mut r = rng();
        let layer: EncoderLayer<f64> = EncoderLayer::init(&mut r, 8, 2, 16);
        let row: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let pos_row: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
        let out_for = |s: usize| -> Vec<f64> {
            let mut g: Graph<f64> = Graph::inference();
            let mut data = Vec::new();
            for _ in 0..s {
                data.extend_from_slice(&row);
            }
            let x = g.input(Tensor::new(vec![1, s, 8], data));
            let mut pos_data = Vec::new();
            for _ in 0..s {
                pos_data.extend_from_slice(&pos_row);
            }
            let pos = g.constant(Tensor::new(vec![s, 8], pos_data));
            let nodes = layer.register(&mut g, "enc").unwrap();
            let y = nodes.apply(&mut g, x, pos, 0.0, "t").unwrap();
            let token = g.slice(y, 1, 0, 1).unwrap();
            g.value(token).data().to_vec()
        };
        let short = out_for(2);
        let long = out_for(7);
        for (a, b) in short.iter().zip(&long) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn encoder_is_position_sensitive() {
        // Swapping two content rows while holding the positional encoding
        // fixed must change the token output for random weights.
        let mut r = rng();
        let layer: EncoderLayer<f64> = EncoderLayer::init(&mut r, 8, 2, 16);
        let base = trunc_normal::<f64>(&mut r, &[1, 4, 8], 1.0);
        let pos = trunc_normal::<f64>(&mut r, &[4, 8], 1.0);
        let run = |rows: &Tensor<f64>| -> Vec<f64> {
            let mut g: Graph<f64> = Graph::inference();
            let x = g.input(rows.clone());
            let p = g.constant(pos.clone());
            let nodes = layer.register(&mut g, "enc").unwrap();
            let y = nodes.apply(&mut g, x, p, 0.0, "t").unwrap();
            let token = g.slice(y, 1, 0, 1).unwrap();
            g.value(token).data().to_vec()
        };
        let straight = run(&base);
        let mut swapped = base.clone();
        for k in 0..8 {
            let tmp = swapped.data()[8 + k];
            swapped.data_mut()[8 + k] = swapped.data()[24 + k];
            swapped.data_mut()[24 + k] = tmp;
        }
        let permuted = run(&swapped);
        let max_diff = straight
            .iter()
            .zip(&permuted)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "encoder ignored position: {max_diff}");
    }

    #[test]
    fn positional_rows_concatenate_x_then_y() {
        // x table row j constant a, y table row i constant b: encoding at
        // (i, j) must be [a.., b..].
        let h = 2;
        let w = 3;
        let hidden = 4;
        let mut pe: PosEnc2d<f64> = PosEnc2d::init(&mut rng(), h, w, hidden);
        pe.x = Tensor::from_fn(&[w + 1, 2], |k| (k / 2) as f64);
        pe.y = Tensor::from_fn(&[h + 1, 2], |k| 10.0 * (k / 2) as f64);
        let mut g: Graph<f64> = Graph::inference();
        let nodes = pe.register(&mut g, "pos").unwrap();
        let seq = nodes.sequence(&mut g).unwrap();
        assert_eq!(g.shape(seq), &[h * w + 1, hidden]);
        let v = g.value(seq).data();
        // Token row: x row 0, y row 0.
        assert_eq!(&v[..4], &[0.0, 0.0, 0.0, 0.0]);
        // Position (i=1, j=1) is sequence row 1.
        assert_eq!(&v[4..8], &[1.0, 1.0, 10.0, 10.0]);
        // Position (i=2, j=3) is the last row.
        let last = &v[6 * 4..];
        assert_eq!(last, &[3.0, 3.0, 20.0, 20.0]);
    }

    #[test]
    fn distinct_positions_get_distinct_encodings() {
        // On a 4x4 grid with random tables, no two sequence rows match.
        let pe: PosEnc2d<f64> = PosEnc2d::init(&mut rng(), 4, 4, 8);
        let mut g: Graph<f64> = Graph::inference();
        let nodes = pe.register(&mut g, "pos").unwrap();
        let seq = nodes.sequence(&mut g).unwrap();
        let v = g.value(seq).data();
        let rows: Vec<&[f64]> = v.chunks(8).collect();
        for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                assert_ne!(rows[a], rows[b], "rows {a} and {b} collide");
            }
        }
    }

    #[test]
    fn zero_head_weights_emit_the_bias() {
        let mut head: Head<f64> = Head::init(&mut rng(), 6, 3);
        head.fc2.w = Tensor::zeros(vec![6, 3]);
        head.fc2.b = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]);
        let mut g: Graph<f64> = Graph::inference();
        let x = g.input(trunc_normal(&mut rng(), &[2, 6], 1.0));
        let nodes = head.register(&mut g, "head").unwrap();
        let y = nodes.apply(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    }
}
