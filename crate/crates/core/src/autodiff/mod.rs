//! Dense-tensor engine with reverse-mode automatic differentiation.
//!
//! The engine is a tape: a [`Graph`] records every operation in topological
//! order as it executes, [`Graph::backward`] replays the tape in reverse to
//! populate gradients on `requires_grad` leaves. Training runs in `f32`;
//! gradient verification ([`check_gradients`]) runs the same code in `f64`
//! against central finite differences.
//!
//! A graph and its tensors are confined to one thread during
//! forward/backward. Immutable parameter snapshots may be shared across
//! threads for parallel inference.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState, Moments};
pub use gradcheck::{check_gradients, eval_scalar};
pub use graph::{Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised while building or differentiating a graph.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("backward already ran on this graph; build a fresh graph per step")]
    BackwardTwice,
    #[error("duplicate parameter name in graph: {0}")]
    DuplicateParam(String),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

/// Element type the engine is generic over: `f32` for training, `f64` for
/// gradient verification.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Row-major GEMM `c = alpha * a @ b + beta * c`.
    ///
    /// `ta`/`tb` mark an operand as stored transposed: with `ta` the `a`
    /// buffer holds a `[k, m]` row-major matrix used here as `[m, k]`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    ) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}
