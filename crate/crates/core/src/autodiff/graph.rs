//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation into a flat node list; insertion
//! order is a topological order, so the backward pass is a single reverse
//! sweep. Graphs are rebuilt per step: parameters enter as named leaves,
//! the loss comes out as a scalar node, and [`Graph::backward`] fills the
//! gradients. A second backward on the same tape is an error; call
//! [`Graph::zero_grad`] to reuse the recorded values.
//!
//! Elementwise binary ops broadcast by trailing suffix: the smaller
//! operand must be a scalar or match a suffix of the larger shape, and it
//! repeats cyclically (`out[j]` reads `small[j % small.numel()]`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels;
use super::tensor::Tensor;
use super::{DiffError, Result, Scalar};

/// Handle to a node in one [`Graph`]. Ids from different graphs must not
/// be mixed; they are plain indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Matmul(NodeId, NodeId),
    Bmm(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        /// im2col patches saved by the forward pass, `[n*oh*ow, kh*kw*cin]`.
        cols: Vec<T>,
    },
    Relu(NodeId),
    Gelu(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: NodeId,
        /// Per-element factor: 0 for dropped, 1/(1-p) for kept.
        factor: Vec<T>,
    },
    SumAll(NodeId),
    MeanAll(NodeId),
    MeanAxis {
        x: NodeId,
        axis: usize,
    },
    Abs(NodeId),
    Exp(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Reshape(NodeId),
    Permute {
        x: NodeId,
        perm: Vec<usize>,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Expand {
        x: NodeId,
        axis: usize,
    },
    AvgPool {
        x: NodeId,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        x: NodeId,
        /// Flat input index of the window maximum, one per output element.
        argmax: Vec<usize>,
    },
    Embedding {
        table: NodeId,
        indices: Vec<usize>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// Recording tape. `train` controls dropout; the rng drives dropout masks
/// only, so two graphs built with the same seed and op sequence produce
/// identical masks.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    train: bool,
    rng: ChaCha8Rng,
    params: Vec<(String, NodeId)>,
    marks: Vec<(String, NodeId)>,
    backward_done: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new(train: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            marks: Vec::new(),
            backward_done: false,
        }
    }

    /// Graph for forward-only evaluation: dropout is identity.
    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, op: Op<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant leaf: no gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    /// Named differentiable leaf. Names must be unique per graph; they key
    /// optimizer state and checkpoints.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Result<NodeId> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let id = self.push(value, true, Op::Leaf);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last backward pass, if one reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    /// Named parameters in registration order.
    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    /// Tag a node so tests and tooling can find it after a forward pass.
    /// The same name may be used repeatedly (one mark per encoder layer).
    pub fn mark(&mut self, name: &str, id: NodeId) {
        self.marks.push((name.to_string(), id));
    }

    pub fn marks(&self) -> &[(String, NodeId)] {
        &self.marks
    }

    pub fn marked(&self, name: &str) -> Vec<NodeId> {
        self.marks
            .iter()
            .filter(|(n, _)| n == name)
            .map(|&(_, id)| id)
            .collect()
    }

    // ----- elementwise binary ops with suffix broadcasting -----

    /// Returns (out_shape, a_is_big) or a shape error.
    fn broadcast_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(Vec<usize>, bool)> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok((sa.to_vec(), true));
        }
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        let (big, small, a_is_big) = if na >= nb { (sa, sb, true) } else { (sb, sa, false) };
        let ns: usize = small.iter().product();
        let suffix_ok = ns == 1
            || (small.len() <= big.len() && big[big.len() - small.len()..] == *small);
        if !suffix_ok {
            return Err(DiffError::Shape {
                op,
                detail: format!("cannot broadcast {:?} with {:?}", sa, sb),
            });
        }
        Ok((big.to_vec(), a_is_big))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (out_shape, a_is_big) = self.broadcast_shapes(op_name, a, b)?;
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let n: usize = out_shape.iter().product();
        let mut out = Vec::with_capacity(n);
        if a_is_big {
            let bl = bv.len();
            for j in 0..n {
                out.push(f(av[j], bv[j % bl]));
            }
        } else {
            let al = av.len();
            for j in 0..n {
                out.push(f(av[j % al], bv[j]));
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(out_shape, out), needs, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiply every element by a compile-time constant.
    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v * c);
        let needs = self.needs(x);
        self.push(value, needs, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -T::one())
    }

    // ----- matrix products -----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::Shape {
                op: "matmul",
                detail: format!("{:?} @ {:?}", sa, sb),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.nodes[a.0].value.data(),
            false,
            self.nodes[b.0].value.data(),
            false,
            T::zero(),
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out), needs, Op::Matmul(a, b)))
    }

    /// Batched matmul: `[b, m, k] @ [b, k, n] -> [b, m, n]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(DiffError::Shape {
                op: "bmm",
                detail: format!("{:?} @ {:?}", sa, sb),
            });
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        for bi in 0..bs {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &self.nodes[a.0].value.data()[bi * m * k..(bi + 1) * m * k],
                false,
                &self.nodes[b.0].value.data()[bi * k * n..(bi + 1) * k * n],
                false,
                T::zero(),
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![bs, m, n], out), needs, Op::Bmm(a, b)))
    }

    /// 2D convolution over NHWC input with `[kh, kw, cin, cout]` weights,
    /// zero padding, square stride. Bias is a separate broadcast add.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[3] != sw[2] {
            return Err(DiffError::Shape {
                op: "conv2d",
                detail: format!("input {:?}, weights {:?}", sx, sw),
            });
        }
        let (n, h, wd, c) = (sx[0], sx[1], sx[2], sx[3]);
        let (kh, kw, _, cout) = (sw[0], sw[1], sw[2], sw[3]);
        let (oh, ow) = match (
            kernels::window_out(h, kh, stride, pad),
            kernels::window_out(wd, kw, stride, pad),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(DiffError::Shape {
                    op: "conv2d",
                    detail: format!("kernel {}x{} stride {} pad {} on {}x{}", kh, kw, stride, pad, h, wd),
                })
            }
        };
        let mut cols = Vec::new();
        kernels::im2col(
            self.nodes[x.0].value.data(),
            n,
            h,
            wd,
            c,
            kh,
            kw,
            stride,
            pad,
            &mut cols,
        );
        let rows = n * oh * ow;
        let kdim = kh * kw * c;
        let mut out = vec![T::zero(); rows * cout];
        T::gemm(
            rows,
            kdim,
            cout,
            T::one(),
            &cols,
            false,
            self.nodes[w.0].value.data(),
            false,
            T::zero(),
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w);
        // The cols buffer is dropped after backward would be wasteful to
        // recompute; keep it on the tape.
        let saved = if needs { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::new(vec![n, oh, ow, cout], out),
            needs,
            Op::Conv2d {
                x,
                w,
                stride,
                pad,
                cols: saved,
            },
        ))
    }

    // ----- activations and normalization -----

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(value, needs, Op::Relu(x))
    }

    /// Exact Gaussian-CDF GELU: `x * Phi(x)`.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| {
            let vf = v.as_f64();
            T::from_f64(vf * 0.5 * (1.0 + libm::erf(vf / std::f64::consts::SQRT_2)))
        });
        let needs = self.needs(x);
        self.push(value, needs, Op::Gelu(x))
    }

    /// Softmax over the last axis, max-shifted for stability.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or(DiffError::Shape {
            op: "softmax",
            detail: "rank 0 input".to_string(),
        })?;
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..xv.len() / c {
            let row = &xv[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(row[0], T::max);
            let mut sum = T::zero();
            for (o, &v) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in &mut out[r * c..(r + 1) * c] {
                *o /= sum;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out), needs, Op::Softmax(x)))
    }

    /// Layer normalization over the last axis with affine scale and shift.
    /// `gamma` and `beta` have the last-axis shape; variance is biased and
    /// stabilized with eps 1e-5.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().unwrap_or(&0);
        if c == 0 || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(DiffError::Shape {
                op: "layer_norm",
                detail: format!(
                    "input {:?}, gamma {:?}, beta {:?}",
                    shape,
                    self.shape(gamma),
                    self.shape(beta)
                ),
            });
        }
        let eps = T::from_f64(1e-5);
        let xv = self.nodes[x.0].value.data();
        let gv = self.nodes[gamma.0].value.data();
        let bv = self.nodes[beta.0].value.data();
        let rows = xv.len() / c;
        let inv_c = T::one() / T::from_f64(c as f64);
        let mut out = vec![T::zero(); xv.len()];
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean *= inv_c;
            let mut var = T::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_c;
            let r_std = (var + eps).sqrt().recip();
            rstd[r] = r_std;
            for i in 0..c {
                let xh = (row[i] - mean) * r_std;
                xhat[r * c + i] = xh;
                out[r * c + i] = gv[i] * xh + bv[i];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            Tensor::new(shape, out),
            needs,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Inverted dropout: identity in eval graphs; in train graphs each
    /// element is zeroed with probability `p` and survivors are scaled by
    /// 1/(1-p) so the expectation is unchanged.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(DiffError::Invalid {
                op: "dropout",
                detail: format!("probability {} outside [0, 1)", p),
            });
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let n = self.nodes[x.0].value.numel();
        let factor: Vec<T> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let xv = self.nodes[x.0].value.data();
        let out: Vec<T> = xv.iter().zip(&factor).map(|(&v, &f)| v * f).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out), needs, Op::Dropout { x, factor }))
    }

    // ----- reductions -----

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut s = T::zero();
        for &v in self.nodes[x.0].value.data() {
            s += v;
        }
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), needs, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].value.numel();
        let mut s = T::zero();
        for &v in self.nodes[x.0].value.data() {
            s += v;
        }
        let needs = self.needs(x);
        self.push(
            Tensor::scalar(s / T::from_f64(n as f64)),
            needs,
            Op::MeanAll(x),
        )
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(DiffError::Shape {
                op: "mean_axis",
                detail: format!("axis {} of {:?}", axis, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::one() / T::from_f64(len as f64);
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xv[base + i];
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(out_shape, out), needs, Op::MeanAxis { x, axis }))
    }

    // ----- pointwise unary -----

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v.abs());
        let needs = self.needs(x);
        self.push(value, needs, Op::Abs(x))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v.exp());
        let needs = self.needs(x);
        self.push(value, needs, Op::Exp(x))
    }

    // ----- shape ops -----

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.nodes[x.0].value.numel() {
            return Err(DiffError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(x), shape),
            });
        }
        let value = Tensor::new(shape, self.nodes[x.0].value.data().to_vec());
        let needs = self.needs(x);
        Ok(self.push(value, needs, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| {
                if p >= shape.len() || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(DiffError::Shape {
                op: "permute",
                detail: format!("perm {:?} of {:?}", perm, shape),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let mut out = vec![T::zero(); self.nodes[x.0].value.numel()];
        kernels::permuted_copy(self.nodes[x.0].value.data(), &shape, perm, &mut out);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(out_shape, out),
            needs,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Contiguous range `start..start+len` along one axis.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(DiffError::Shape {
                op: "slice",
                detail: format!("axis {} range {}..{} of {:?}", axis, start, start + len, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let alen = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(out_shape, out),
            needs,
            Op::Slice { x, axis, start },
        ))
    }

    /// Repeat a size-1 axis `n` times.
    pub fn expand(&mut self, x: NodeId, axis: usize, n: usize) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] != 1 || n == 0 {
            return Err(DiffError::Shape {
                op: "expand",
                detail: format!("axis {} of {:?} to {}", axis, shape, n),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&xv[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(out_shape, out), needs, Op::Expand { x, axis }))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *inputs.first().ok_or(DiffError::Invalid {
            op: "concat",
            detail: "no inputs".to_string(),
        })?;
        let base_shape = self.shape(first).to_vec();
        if axis >= base_shape.len() {
            return Err(DiffError::Shape {
                op: "concat",
                detail: format!("axis {} of {:?}", axis, base_shape),
            });
        }
        let mut axis_total = 0;
        for &id in inputs {
            let s = self.shape(id);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(DiffError::Shape {
                    op: "concat",
                    detail: format!("{:?} vs {:?} along axis {}", s, base_shape, axis),
                });
            }
            axis_total += s[axis];
        }
        let outer: usize = base_shape[..axis].iter().product();
        let inner: usize = base_shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for &id in inputs {
                let alen = self.shape(id)[axis];
                let data = self.nodes[id.0].value.data();
                out.extend_from_slice(&data[o * alen * inner..(o + 1) * alen * inner]);
            }
        }
        let mut out_shape = base_shape;
        out_shape[axis] = axis_total;
        let needs = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            Tensor::new(out_shape, out),
            needs,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    // ----- pooling -----

    /// Returns (oh, ow, n, h, w, c) for an NHWC pooling op.
    fn pool_shape(
        &self,
        op: &'static str,
        x: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let shape = self.shape(x);
        if shape.len() != 4 {
            return Err(DiffError::Shape {
                op,
                detail: format!("expected NHWC, got {:?}", shape),
            });
        }
        let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        match (
            kernels::window_out(h, kernel, stride, 0),
            kernels::window_out(w, kernel, stride, 0),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow, n, h, w, c)),
            _ => Err(DiffError::Shape {
                op,
                detail: format!("kernel {} stride {} on {}x{}", kernel, stride, h, w),
            }),
        }
    }

    pub fn avg_pool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let (oh, ow, n, h, w, c) = self.pool_shape("avg_pool2d", x, kernel, stride)?;
        let xv = self.nodes[x.0].value.data();
        let inv = T::one() / T::from_f64((kernel * kernel) as f64);
        let mut out = vec![T::zero(); n * oh * ow * c];
        for ni in 0..n {
            for ohi in 0..oh {
                for owi in 0..ow {
                    for khi in 0..kernel {
                        for kwi in 0..kernel {
                            let src = ((ni * h + ohi * stride + khi) * w + owi * stride + kwi) * c;
                            let dst = ((ni * oh + ohi) * ow + owi) * c;
                            for ci in 0..c {
                                out[dst + ci] += xv[src + ci];
                            }
                        }
                    }
                }
            }
        }
        for v in &mut out {
            *v *= inv;
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, oh, ow, c], out),
            needs,
            Op::AvgPool { x, kernel, stride },
        ))
    }

    pub fn max_pool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let (oh, ow, n, h, w, c) = self.pool_shape("max_pool2d", x, kernel, stride)?;
        let xv = self.nodes[x.0].value.data();
        let mut out = vec![T::zero(); n * oh * ow * c];
        let mut argmax = vec![0usize; n * oh * ow * c];
        for ni in 0..n {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let dst = ((ni * oh + ohi) * ow + owi) * c;
                    for ci in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0;
                        for khi in 0..kernel {
                            for kwi in 0..kernel {
                                let src =
                                    ((ni * h + ohi * stride + khi) * w + owi * stride + kwi) * c + ci;
                                if xv[src] > best {
                                    best = xv[src];
                                    best_idx = src;
                                }
                            }
                        }
                        out[dst + ci] = best;
                        argmax[dst + ci] = best_idx;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, oh, ow, c], out),
            needs,
            Op::MaxPool { x, argmax },
        ))
    }

    /// Row lookup: `table[v, c]` indexed by `indices` gives `[len, c]`.
    /// Backward scatter-adds into the table rows.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(DiffError::Shape {
                op: "embedding",
                detail: format!("table {:?}", shape),
            });
        }
        let (v, c) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(DiffError::Invalid {
                op: "embedding",
                detail: format!("index {} out of {} rows", bad, v),
            });
        }
        let tv = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), c], out),
            needs,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    // ----- backward -----

    /// Reverse sweep from a scalar output. Fills `grad` on every
    /// reachable node with `needs_grad`. Errors if the output is not a
    /// scalar or if a backward pass already ran on this tape.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        if self.nodes[out.0].value.numel() != 1 {
            return Err(DiffError::NonScalarOutput(
                self.nodes[out.0].value.shape().to_vec(),
            ));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::new(
            self.nodes[out.0].value.shape().to_vec(),
            vec![T::one()],
        ));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.accumulate_inputs(i, g.data(), &mut grads);
            grads[i] = Some(g);
        }
        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.needs_grad {
                node.grad = grad;
            }
        }
        Ok(())
    }

    /// Clear gradients so the recorded tape can run backward again.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn accumulate_inputs(&self, i: usize, g: &[T], grads: &mut [Option<Tensor<T>>]) {
        // Adds `delta` into grads[id], allocating zeros on first touch.
        // Skips nodes that do not need gradients.
        macro_rules! acc {
            ($id:expr, $f:expr) => {
                if self.nodes[$id.0].needs_grad {
                    let slot = grads[$id.0].get_or_insert_with(|| {
                        Tensor::zeros(self.nodes[$id.0].value.shape().to_vec())
                    });
                    let dst = slot.data_mut();
                    $f(dst);
                }
            };
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let big_is_a = self.nodes[a.0].value.numel() >= self.nodes[b.0].value.numel();
                acc!(a, |dst: &mut [T]| if big_is_a {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                } else {
                    kernels::fold_suffix_add(g, dst);
                });
                acc!(b, |dst: &mut [T]| if big_is_a {
                    kernels::fold_suffix_add(g, dst);
                } else {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::Sub(a, b) => {
                let big_is_a = self.nodes[a.0].value.numel() >= self.nodes[b.0].value.numel();
                acc!(a, |dst: &mut [T]| if big_is_a {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                } else {
                    kernels::fold_suffix_add(g, dst);
                });
                acc!(b, |dst: &mut [T]| {
                    let bl = dst.len();
                    for (j, &gv) in g.iter().enumerate() {
                        dst[j % bl] -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                acc!(a, |dst: &mut [T]| {
                    let al = dst.len();
                    let bl = bv.len();
                    for (j, &gv) in g.iter().enumerate() {
                        dst[j % al] += gv * bv[j % bl];
                    }
                });
                acc!(b, |dst: &mut [T]| {
                    let bl = dst.len();
                    let al = av.len();
                    for (j, &gv) in g.iter().enumerate() {
                        dst[j % bl] += gv * av[j % al];
                    }
                });
            }
            Op::Scale(x, c) => {
                acc!(x, |dst: &mut [T]| for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv * *c;
                });
            }
            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].value.shape()[1];
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                acc!(a, |dst: &mut [T]| {
                    // dA = G @ B^T
                    T::gemm(m, n, k, T::one(), g, false, bv, true, T::one(), dst);
                });
                acc!(b, |dst: &mut [T]| {
                    // dB = A^T @ G
                    T::gemm(k, m, n, T::one(), av, true, g, false, T::one(), dst);
                });
            }
            Op::Bmm(a, b) => {
                let (bs, m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1], s[2])
                };
                let n = self.nodes[b.0].value.shape()[2];
                let av = self.nodes[a.0].value.data();
                let bv = self.nodes[b.0].value.data();
                acc!(a, |dst: &mut [T]| for bi in 0..bs {
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        &bv[bi * k * n..(bi + 1) * k * n],
                        true,
                        T::one(),
                        &mut dst[bi * m * k..(bi + 1) * m * k],
                    );
                });
                acc!(b, |dst: &mut [T]| for bi in 0..bs {
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        &av[bi * m * k..(bi + 1) * m * k],
                        true,
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        T::one(),
                        &mut dst[bi * k * n..(bi + 1) * k * n],
                    );
                });
            }
            Op::Conv2d {
                x,
                w,
                stride,
                pad,
                cols,
            } => {
                let sx = self.nodes[x.0].value.shape();
                let (n, h, wd, c) = (sx[0], sx[1], sx[2], sx[3]);
                let sw = self.nodes[w.0].value.shape();
                let (kh, kw, cout) = (sw[0], sw[1], sw[3]);
                let rows = g.len() / cout;
                let kdim = kh * kw * c;
                acc!(w, |dst: &mut [T]| {
                    // dW = cols^T @ G
                    T::gemm(kdim, rows, cout, T::one(), cols, true, g, false, T::one(), dst);
                });
                acc!(x, |dst: &mut [T]| {
                    // dcols = G @ W^T, then scatter back to image layout
                    let wv = self.nodes[w.0].value.data();
                    let mut dcols = vec![T::zero(); rows * kdim];
                    T::gemm(rows, cout, kdim, T::one(), g, false, wv, true, T::zero(), &mut dcols);
                    kernels::col2im_add(&dcols, n, h, wd, c, kh, kw, *stride, *pad, dst);
                });
            }
            Op::Relu(x) => {
                let xv = self.nodes[x.0].value.data();
                acc!(x, |dst: &mut [T]| for (j, &gv) in g.iter().enumerate() {
                    if xv[j] > T::zero() {
                        dst[j] += gv;
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.nodes[x.0].value.data();
                acc!(x, |dst: &mut [T]| for (j, &gv) in g.iter().enumerate() {
                    let v = xv[j].as_f64();
                    let phi = libm::erf(v / std::f64::consts::SQRT_2).mul_add(0.5, 0.5);
                    let dens = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    dst[j] += gv * T::from_f64(phi + v * dens);
                });
            }
            Op::Softmax(x) => {
                let yv = self.nodes[i].value.data();
                let c = *self.nodes[i].value.shape().last().unwrap();
                acc!(x, |dst: &mut [T]| for r in 0..yv.len() / c {
                    let y = &yv[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let mut dot = T::zero();
                    for (gv, yv) in gr.iter().zip(y) {
                        dot += *gv * *yv;
                    }
                    for j in 0..c {
                        dst[r * c + j] += y[j] * (gr[j] - dot);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = *self.nodes[x.0].value.shape().last().unwrap();
                let rows = xhat.len() / c;
                let gv = self.nodes[gamma.0].value.data();
                let inv_c = T::one() / T::from_f64(c as f64);
                acc!(x, |dst: &mut [T]| for r in 0..rows {
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..c {
                        let d = g[r * c + j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xhat[r * c + j];
                    }
                    mean_d *= inv_c;
                    mean_dx *= inv_c;
                    for j in 0..c {
                        let d = g[r * c + j] * gv[j];
                        dst[r * c + j] += rstd[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                    }
                });
                acc!(gamma, |dst: &mut [T]| for r in 0..rows {
                    for j in 0..c {
                        dst[j] += g[r * c + j] * xhat[r * c + j];
                    }
                });
                acc!(beta, |dst: &mut [T]| for r in 0..rows {
                    for j in 0..c {
                        dst[j] += g[r * c + j];
                    }
                });
            }
            Op::Dropout { x, factor } => {
                acc!(x, |dst: &mut [T]| for (j, &gv) in g.iter().enumerate() {
                    dst[j] += gv * factor[j];
                });
            }
            Op::SumAll(x) => {
                acc!(x, |dst: &mut [T]| for d in dst.iter_mut() {
                    *d += g[0];
                });
            }
            Op::MeanAll(x) => {
                let inv = T::one() / T::from_f64(self.nodes[x.0].value.numel() as f64);
                acc!(x, |dst: &mut [T]| for d in dst.iter_mut() {
                    *d += g[0] * inv;
                });
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.nodes[x.0].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = T::one() / T::from_f64(len as f64);
                acc!(x, |dst: &mut [T]| for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for j in 0..inner {
                            dst[base + j] += g[o * inner + j] * inv;
                        }
                    }
                });
            }
            Op::Abs(x) => {
                let xv = self.nodes[x.0].value.data();
                acc!(x, |dst: &mut [T]| for (j, &gv) in g.iter().enumerate() {
                    // Subgradient 0 at the kink.
                    if xv[j] > T::zero() {
                        dst[j] += gv;
                    } else if xv[j] < T::zero() {
                        dst[j] -= gv;
                    }
                });
            }
            Op::Exp(x) => {
                let yv = self.nodes[i].value.data();
                acc!(x, |dst: &mut [T]| for (j, &gv) in g.iter().enumerate() {
                    dst[j] += gv * yv[j];
                });
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for &id in inputs {
                    let alen = self.nodes[id.0].value.shape()[*axis];
                    acc!(id, |dst: &mut [T]| for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let d = o * alen * inner;
                        for j in 0..alen * inner {
                            dst[d + j] += g[src + j];
                        }
                    });
                    offset += alen;
                }
            }
            Op::Reshape(x) => {
                acc!(x, |dst: &mut [T]| for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += gv;
                });
            }
            Op::Permute { x, perm } => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                acc!(x, |dst: &mut [T]| {
                    let inv = kernels::invert_perm(perm);
                    let mut back = vec![T::zero(); g.len()];
                    kernels::permuted_copy(g, &out_shape, &inv, &mut back);
                    for (d, &gv) in dst.iter_mut().zip(&back) {
                        *d += gv;
                    }
                });
            }
            Op::Slice { x, axis, start } => {
                let shape = self.nodes[x.0].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let alen = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let len = self.nodes[i].value.shape()[*axis];
                acc!(x, |dst: &mut [T]| for o in 0..outer {
                    let d = (o * alen + start) * inner;
                    let s = o * len * inner;
                    for j in 0..len * inner {
                        dst[d + j] += g[s + j];
                    }
                });
            }
            Op::Expand { x, axis } => {
                let out_shape = self.nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let n = out_shape[*axis];
                let inner: usize = out_shape[*axis + 1..].iter().product();
                acc!(x, |dst: &mut [T]| for o in 0..outer {
                    for a in 0..n {
                        let s = (o * n + a) * inner;
                        for j in 0..inner {
                            dst[o * inner + j] += g[s + j];
                        }
                    }
                });
            }
            Op::AvgPool { x, kernel, stride } => {
                let sx = self.nodes[x.0].value.shape();
                let (n, h, w, c) = (sx[0], sx[1], sx[2], sx[3]);
                let so = self.nodes[i].value.shape();
                let (oh, ow) = (so[1], so[2]);
                let inv = T::one() / T::from_f64((kernel * kernel) as f64);
                acc!(x, |dst: &mut [T]| for ni in 0..n {
                    for ohi in 0..oh {
                        for owi in 0..ow {
                            let src = ((ni * oh + ohi) * ow + owi) * c;
                            for khi in 0..*kernel {
                                for kwi in 0..*kernel {
                                    let d = ((ni * h + ohi * stride + khi) * w
                                        + owi * stride
                                        + kwi)
                                        * c;
                                    for ci in 0..c {
                                        dst[d + ci] += g[src + ci] * inv;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::MaxPool { x, argmax } => {
                acc!(x, |dst: &mut [T]| for (j, &gv) in g.iter().enumerate() {
                    dst[argmax[j]] += gv;
                });
            }
            Op::Embedding { table, indices } => {
                let c = self.nodes[table.0].value.shape()[1];
                acc!(table, |dst: &mut [T]| for (r, &idx) in indices.iter().enumerate() {
                    for j in 0..c {
                        dst[idx * c + j] += g[r * c + j];
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn broadcast_add_and_backward() {
        let mut g = Graph::inference();
        let a = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.input(t(&[3], &[10.0, 20.0, 30.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let m = g.sum_all(s);
        g.backward(m).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[1.0; 6]);
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn incompatible_broadcast_rejected() {
        let mut g: Graph<f64> = Graph::inference();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2]));
        assert!(matches!(g.add(a, b), Err(DiffError::Shape { .. })));
    }

    #[test]
    fn matmul_forward_and_grads() {
        let mut g = Graph::inference();
        let a = g.input(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.input(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
        let s = g.sum_all(c);
        g.backward(s).unwrap();
        // dA = 1 @ B^T
        assert_eq!(g.grad(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
        // dB = A^T @ 1
        assert_eq!(g.grad(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn second_backward_errors() {
        let mut g = Graph::inference();
        let a = g.input(t(&[1], &[2.0]));
        let y = g.mul(a, a).unwrap();
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(DiffError::BackwardTwice)));
        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[4.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut g = Graph::inference();
        let a = g.input(t(&[2], &[1.0, 2.0]));
        assert!(matches!(
            g.backward(a),
            Err(DiffError::NonScalarOutput(_))
        ));
    }

    #[test]
    fn duplicate_param_name_rejected() {
        let mut g: Graph<f32> = Graph::new(true, 0);
        g.param("w", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(
            g.param("w", Tensor::zeros(vec![2])),
            Err(DiffError::DuplicateParam(_))
        ));
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut g = Graph::inference();
        let x = g.input(t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        let v = g.value(y).data();
        let s0: f64 = v[..3].iter().sum();
        let s1: f64 = v[3..].iter().sum();
        assert!((s0 - 1.0).abs() < 1e-12 && (s1 - 1.0).abs() < 1e-12);
        assert!((v[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let mut g: Graph<f64> = Graph::inference();
        let x = g.input(t(&[4], &[1.0, 1.0, 1.0, 1.0]));
        let y = g.dropout(x, 0.5).unwrap();
        assert_eq!(x, y);

        let mut g: Graph<f64> = Graph::new(true, 7);
        let x = g.input(Tensor::full(vec![10_000], 1.0));
        let y = g.dropout(x, 0.25).unwrap();
        let v = g.value(y).data();
        let kept = v.iter().filter(|&&e| e != 0.0).count();
        assert!(v.iter().all(|&e| e == 0.0 || (e - 4.0 / 3.0).abs() < 1e-12));
        assert!((kept as f64 / 10_000.0 - 0.75).abs() < 0.02);
    }

    #[test]
    fn dropout_masks_reproduce_across_graphs() {
        let build = |seed: u64| {
            let mut g: Graph<f64> = Graph::new(true, seed);
            let x = g.input(Tensor::full(vec![64], 1.0));
            let y = g.dropout(x, 0.5).unwrap();
            g.value(y).data().to_vec()
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3), build(4));
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut g = Graph::inference();
        let x = g.input(t(&[2, 4], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let left = g.slice(x, 1, 0, 2).unwrap();
        let right = g.slice(x, 1, 2, 2).unwrap();
        let back = g.concat(&[left, right], 1).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }

    #[test]
    fn expand_backward_sums() {
        let mut g = Graph::inference();
        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let e = g.expand(x, 0, 3).unwrap();
        assert_eq!(g.shape(e), &[3, 2]);
        let s = g.sum_all(e);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn embedding_backward_scatter_adds() {
        let mut g = Graph::inference();
        let table = g.input(t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let rows = g.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(rows).data(), &[4.0, 5.0, 0.0, 1.0, 4.0, 5.0]);
        let s = g.sum_all(rows);
        g.backward(s).unwrap();
        assert_eq!(g.grad(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn mean_axis_drops_axis() {
        let mut g = Graph::inference();
        let x = g.input(t(&[2, 2, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let m = g.mean_axis(x, 1).unwrap();
        assert_eq!(g.shape(m), &[2, 2]);
        assert_eq!(g.value(m).data(), &[1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::inference();
        let x = g.input(t(&[1, 2, 2, 1], &[1.0, 5.0, 3.0, 2.0]));
        let y = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
