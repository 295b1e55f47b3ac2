//! Relative camera pose regression at desk scale.
//!
//! The crate is organized around five subsystems:
//!
//! - [`geometry`]: exact SO(3)/SE(3) math in `f64` — rotation
//!   parameterizations (quaternion, 6D, 9D), orthogonalization, pose
//!   composition, and error metrics.
//! - [`autodiff`]: a dense-tensor engine with reverse-mode automatic
//!   differentiation and an Adam optimizer, generic over `f32`/`f64`.
//! - [`model`]: the Relformer network — siamese CNN backbone, paired
//!   feature-map aggregation with transformer encoders, and dual regression
//!   heads, plus the global-descriptor and conv-aggregator ablation variants.
//! - [`loss`]: the learned-weight relative-pose objective with
//!   interchangeable rotation targets.
//! - [`dataset`]: synthetic scene generation, pinhole point-splat rendering,
//!   pose-labelled storage, and descriptor-based pair construction.
//!
//! [`checkpoint`] ties them together with a versioned binary container for
//! model weights, optimizer state, and the model configuration.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod verify;

pub use autodiff::{Graph, NodeId, Tensor};
pub use geometry::{Pose, RelativePose, Rotation};
pub use model::{ModelConfig, Relformer};
