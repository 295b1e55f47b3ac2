//! Synthetic scenes, pinhole rendering, retrieval descriptors, pair
//! construction, and on-disk storage.
//!
//! A scene is a colored point cloud in a box. A camera trajectory is a
//! bounded random walk that keeps looking at a drifting interior target.
//! Views are rendered by z-buffered point splatting, paired by descriptor
//! similarity, and stored as plain CSV plus raw binary tensors so the
//! artifacts stay inspectable without custom tooling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Scalar, Tensor};
use crate::geometry::{relative_pose, Pose, RelativePose, Rotation};
use crate::model::Relformer;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("scene params: {0}")]
    Params(String),
    #[error("empty view: {covered:.2}% of pixels covered, need {required:.0}%")]
    EmptyView { covered: f64, required: f64 },
    #[error("descriptor: {0}")]
    Descriptor(String),
    #[error("need at least {need} views, have {have}")]
    TooFewViews { need: usize, have: usize },
    #[error("empty descriptor index")]
    EmptyIndex,
    #[error("unknown view id {0}")]
    UnknownView(u32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, detail: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

// ----- seeding -----

fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for stream `stream`, element `index`, derived
/// from one top-level seed. Distinct (stream, index) pairs give
/// independent-looking streams without shared state.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

// ----- scenes -----

#[derive(Clone, Copy, Debug)]
pub struct SceneParams {
    /// Landmark count, at least 200.
    pub landmarks: usize,
    /// Side length in meters of the cube the landmarks fill, centered at
    /// the origin.
    pub extent: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            landmarks: 800,
            extent: 4.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.landmarks < 200 {
            return Err(DatasetError::Params(format!(
                "need at least 200 landmarks, got {}",
                self.landmarks
            )));
        }
        if !(self.extent > 0.0) || !self.extent.is_finite() {
            return Err(DatasetError::Params(format!(
                "extent must be positive and finite, got {}",
                self.extent
            )));
        }
        Ok(())
    }
}

/// A colored point cloud in an axis-aligned cube around the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u32,
    pub seed: u64,
    pub positions: Vec<Vector3<f64>>,
    /// RGB in [0, 1], one per landmark.
    pub colors: Vec<[f32; 3]>,
    /// Cube side length.
    pub extent: f64,
}

impl Scene {
    pub fn half_extent(&self) -> f64 {
        self.extent / 2.0
    }
}

/// Landmarks uniform in the cube; colors follow three low-frequency
/// sinusoidal fields of position plus per-point noise, so appearance
/// varies smoothly across space and carries location information.
pub fn generate_scene(id: u32, seed: u64, params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = params.extent / 2.0;

    // One wave vector and phase per color channel.
    let mut waves = [(Vector3::zeros(), 0.0); 3];
    for w in &mut waves {
        let dir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let dir = if dir.norm() < 1e-6 { Vector3::x() } else { dir.normalize() };
        let freq = rng.gen_range(0.8..1.8);
        *w = (dir * freq, rng.gen_range(0.0..std::f64::consts::TAU));
    }

    let mut positions = Vec::with_capacity(params.landmarks);
    let mut colors = Vec::with_capacity(params.landmarks);
    for _ in 0..params.landmarks {
        let p = Vector3::new(
            rng.gen_range(-half..half),
            rng.gen_range(-half..half),
            rng.gen_range(-half..half),
        );
        let mut c = [0.0f32; 3];
        for (ch, (wave, phase)) in waves.iter().enumerate() {
            let base = 0.5 + 0.35 * (wave.dot(&p) + phase).sin();
            let noise = rng.gen_range(-0.1..0.1);
            c[ch] = (base + noise).clamp(0.0, 1.0) as f32;
        }
        positions.push(p);
        colors.push(c);
    }
    Ok(Scene {
        id,
        seed,
        positions,
        colors,
        extent: params.extent,
    })
}

// ----- trajectories -----

/// Per-step translation bound in meters.
pub const STEP_TRANSLATION: f64 = 0.3;
/// Per-step rotation bound in degrees.
pub const STEP_ROTATION_DEG: f64 = 15.0;

/// Smooth random walk: camera positions stay inside 1.5x the scene
/// extent, consecutive steps move at most [`STEP_TRANSLATION`] meters and
/// turn at most [`STEP_ROTATION_DEG`] degrees, and the camera tracks a
/// drifting target in the central region so views face the interior.
pub fn sample_trajectory(scene: &Scene, seed: u64, count: usize) -> Vec<Pose> {
    assert!(count >= 2, "a trajectory needs at least two poses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = scene.half_extent();
    let bound = 1.5 * half;
    let up = Vector3::z();
    let rot_limit = STEP_ROTATION_DEG.to_radians();

    let mut pos = Vector3::new(
        rng.gen_range(-half..half),
        rng.gen_range(-half..half),
        rng.gen_range(-half..half),
    );
    let mut target = Vector3::new(
        rng.gen_range(-0.5 * half..0.5 * half),
        rng.gen_range(-0.5 * half..0.5 * half),
        rng.gen_range(-0.5 * half..0.5 * half),
    );
    let mut rot = Rotation::look_at_rdf(target - pos, up).unwrap_or_else(|_| Rotation::identity());

    let mut poses = Vec::with_capacity(count);
    poses.push(Pose::new(pos, rot.clone()));
    while poses.len() < count {
        // Bounded step; reject until inside the allowed region.
        let mut next = pos;
        for attempt in 0..64 {
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let dir = if dir.norm() < 1e-9 { Vector3::x() } else { dir.normalize() };
            let cand = pos + dir * rng.gen_range(0.0..STEP_TRANSLATION);
            if cand.iter().all(|v| v.abs() <= bound) {
                next = cand;
                break;
            }
            if attempt == 63 {
                // Walled in; drift toward the center instead.
                next = pos * 0.9;
            }
        }
        pos = next;

        for t in target.iter_mut() {
            *t += rng.gen_range(-0.15..0.15);
            *t = t.clamp(-0.7 * half, 0.7 * half);
        }

        let desired = Rotation::look_at_rdf(target - pos, up).unwrap_or_else(|_| rot.clone());
        let angle = rot.angle_to(&desired);
        rot = if angle > rot_limit {
            rot.slerp(&desired, rot_limit / angle)
        } else {
            desired
        };
        poses.push(Pose::new(pos, rot.clone()));
    }
    poses
}

// ----- rendering -----

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pinhole camera with the given horizontal field of view.
    pub fn square(res: usize, fov_deg: f64) -> Self {
        let f = (res as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Intrinsics {
            width: res,
            height: res,
            fx: f,
            fy: f,
            cx: res as f64 / 2.0,
            cy: res as f64 / 2.0,
        }
    }
}

/// Minimum landmark depth considered visible, in meters.
const NEAR_PLANE: f64 = 0.05;
/// Splat radius in pixels at 1 m depth, before clamping.
const SPLAT_SCALE: f64 = 2.2;
/// Fraction of pixels a view must cover to count as non-empty.
pub const MIN_COVERAGE: f64 = 0.05;

/// Project a world point through a camera-to-world pose. Returns
/// `(u, v, depth)` in continuous pixel coordinates, or None behind the
/// near plane. A point on the optical axis lands exactly on the
/// principal point.
pub fn project(pose: &Pose, intr: &Intrinsics, p: Vector3<f64>) -> Option<(f64, f64, f64)> {
    let cam = pose.world_to_camera(p);
    if cam.z < NEAR_PLANE {
        return None;
    }
    let u = intr.fx * cam.x / cam.z + intr.cx;
    let v = intr.fy * cam.y / cam.z + intr.cy;
    Some((u, v, cam.z))
}

/// Z-buffered point-splat render over a gray background. The splat
/// radius shrinks with depth. Deterministic: landmarks are drawn in
/// order and only a strictly smaller depth overwrites a pixel.
pub fn render_view(scene: &Scene, pose: &Pose, intr: &Intrinsics) -> Result<Tensor<f32>> {
    let (w, h) = (intr.width, intr.height);
    let mut image = vec![0.5f32; h * w * 3];
    let mut depth = vec![f64::INFINITY; h * w];
    let max_radius = (w.min(h) as f64 / 8.0).max(1.0);

    for (p, c) in scene.positions.iter().zip(&scene.colors) {
        let Some((u, v, z)) = project(pose, intr, *p) else {
            continue;
        };
        let r = (SPLAT_SCALE / z).clamp(0.7, max_radius);
        let r2 = r * r;
        let u_lo = (u - r).floor().max(0.0) as usize;
        let u_hi = ((u + r).ceil() as isize).min(w as isize - 1);
        let v_lo = (v - r).floor().max(0.0) as usize;
        let v_hi = ((v + r).ceil() as isize).min(h as isize - 1);
        if u_hi < 0 || v_hi < 0 || u_lo >= w || v_lo >= h {
            continue;
        }
        for py in v_lo..=(v_hi as usize) {
            for px in u_lo..=(u_hi as usize) {
                let du = px as f64 + 0.5 - u;
                let dv = py as f64 + 0.5 - v;
                if du * du + dv * dv > r2 {
                    continue;
                }
                let idx = py * w + px;
                if z < depth[idx] {
                    depth[idx] = z;
                    image[idx * 3..idx * 3 + 3].copy_from_slice(c);
                }
            }
        }
    }

    let covered = depth.iter().filter(|d| d.is_finite()).count();
    let fraction = covered as f64 / (h * w) as f64;
    if fraction < MIN_COVERAGE {
        return Err(DatasetError::EmptyView {
            covered: fraction * 100.0,
            required: MIN_COVERAGE * 100.0,
        });
    }
    Ok(Tensor::new(vec![h, w, 3], image))
}

/// One rendered, pose-labelled image.
#[derive(Clone, Debug)]
pub struct View {
    pub scene_id: u32,
    pub view_id: u32,
    pub pose: Pose,
    /// `[h, w, 3]`, values in [0, 1].
    pub image: Tensor<f32>,
}

// ----- descriptors and retrieval -----

/// Unit-norm global descriptors keyed by view id.
#[derive(Clone, Debug, Default)]
pub struct DescriptorIndex {
    entries: Vec<(u32, Vec<f64>)>,
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-30)
}

impl DescriptorIndex {
    pub fn new() -> Self {
        DescriptorIndex::default()
    }

    /// Normalizes and stores. A zero descriptor or reused id is an error.
    pub fn insert(&mut self, view_id: u32, descriptor: Vec<f64>) -> Result<()> {
        if self.entries.iter().any(|(id, _)| *id == view_id) {
            return Err(DatasetError::Descriptor(format!(
                "view {view_id} inserted twice"
            )));
        }
        let norm: f64 = descriptor.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(DatasetError::Descriptor(format!(
                "view {view_id} has a zero descriptor"
            )));
        }
        let unit: Vec<f64> = descriptor.iter().map(|x| x / norm).collect();
        self.entries.push((view_id, unit));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn get(&self, view_id: u32) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(id, _)| *id == view_id)
            .map(|(_, d)| d.as_slice())
    }

    /// All non-excluded entries ranked by descending cosine similarity,
    /// ties broken by ascending view id.
    fn ranked(&self, query: &[f64], exclude: Option<u32>) -> Vec<(f64, u32)> {
        let mut scored: Vec<(f64, u32)> = self
            .entries
            .iter()
            .filter(|(id, _)| Some(*id) != exclude)
            .map(|(id, d)| (cosine(query, d), *id))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        scored
    }

    /// Best match by cosine similarity; equal scores resolve to the
    /// lowest view id.
    pub fn nearest(&self, query: &[f64], exclude: Option<u32>) -> Result<u32> {
        self.ranked(query, exclude)
            .first()
            .map(|(_, id)| *id)
            .ok_or(DatasetError::EmptyIndex)
    }

    /// The `k` best matches, same ordering rules as [`nearest`].
    ///
    /// [`nearest`]: DescriptorIndex::nearest
    pub fn k_nearest(&self, query: &[f64], k: usize, exclude: Option<u32>) -> Result<Vec<u32>> {
        let ranked = self.ranked(query, exclude);
        if ranked.len() < k {
            return Err(DatasetError::TooFewViews {
                need: k + exclude.is_some() as usize,
                have: self.entries.len(),
            });
        }
        Ok(ranked[..k].iter().map(|(_, id)| *id).collect())
    }
}

/// Pooled final-stage backbone features, L2-normalized, one per image.
/// The backbone substitutes for a dedicated retrieval network: it is
/// only required to map overlapping views to nearby descriptors, which
/// average pooling of conv features does even untrained.
pub fn compute_descriptors<T: Scalar>(
    model: &Relformer<T>,
    images: &[Tensor<f32>],
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        let cfg = model.config();
        let mut batch = Vec::with_capacity(chunk.len() * chunk[0].numel());
        for img in chunk {
            batch.extend(img.data().iter().map(|&v| T::from_f64(v as f64)));
        }
        let shape = vec![chunk.len(), cfg.image, cfg.image, cfg.in_channels];
        let mut g: Graph<T> = Graph::inference();
        let input = g.input(Tensor::new(shape, batch));
        let pooled = model.pooled_final_stage(&mut g, input)?;
        let value = g.value(pooled);
        let c = value.shape()[1];
        for row in value.data().chunks(c) {
            let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(DatasetError::Descriptor(
                    "pooled features are all zero".to_string(),
                ));
            }
            out.push(row.iter().map(|x| x / norm).collect());
        }
    }
    Ok(out)
}

// ----- pairs -----

/// A training sample: which view to regress from which reference, the
/// ground-truth relative pose between them, and the reference pose for
/// absolute recovery.
#[derive(Clone, Debug)]
pub struct PairRecord {
    pub query_id: u32,
    pub ref_id: u32,
    pub rel: RelativePose,
    pub ref_pose: Pose,
}

/// For every view, pair it with its `k` nearest non-self neighbors by
/// descriptor similarity. Labels are computed from the stored poses, so
/// composing `ref_pose` with `rel` recovers the query pose.
pub fn build_pairs(
    poses: &BTreeMap<u32, Pose>,
    index: &DescriptorIndex,
    k: usize,
) -> Result<Vec<PairRecord>> {
    if k == 0 {
        return Err(DatasetError::Params("k must be at least 1".to_string()));
    }
    if index.len() < k + 1 {
        return Err(DatasetError::TooFewViews {
            need: k + 1,
            have: index.len(),
        });
    }
    let mut pairs = Vec::with_capacity(index.len() * k);
    for (query_id, descriptor) in &index.entries {
        let query_pose = poses
            .get(query_id)
            .ok_or(DatasetError::UnknownView(*query_id))?;
        for ref_id in index.k_nearest(descriptor, k, Some(*query_id))? {
            let ref_pose = poses.get(&ref_id).ok_or(DatasetError::UnknownView(ref_id))?;
            pairs.push(PairRecord {
                query_id: *query_id,
                ref_id,
                rel: relative_pose(ref_pose, query_pose),
                ref_pose: ref_pose.clone(),
            });
        }
    }
    Ok(pairs)
}

// ----- augmentation -----

/// Bilinear resize of an `[h, w, 3]` image.
pub fn resize_bilinear(img: &Tensor<f32>, oh: usize, ow: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let data = img.data();
    let mut out = vec![0.0f32; oh * ow * 3];
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    for oy in 0..oh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..ow {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v00 = data[(y0 * w + x0) * 3 + c] as f64;
                let v01 = data[(y0 * w + x1) * 3 + c] as f64;
                let v10 = data[(y1 * w + x0) * 3 + c] as f64;
                let v11 = data[(y1 * w + x1) * 3 + c] as f64;
                let top = v00 * (1.0 - wx) + v01 * wx;
                let bot = v10 * (1.0 - wx) + v11 * wx;
                out[(oy * ow + ox) * 3 + c] = (top * (1.0 - wy) + bot * wy) as f32;
            }
        }
    }
    Tensor::new(vec![oh, ow, 3], out)
}

/// Train-time augmentation: upscale by 1.14x, then take a random crop at
/// the original resolution.
pub fn crop_augment(img: &Tensor<f32>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let bh = ((h as f64) * 1.14).round() as usize;
    let bw = ((w as f64) * 1.14).round() as usize;
    let big = resize_bilinear(img, bh, bw);
    let oy = rng.gen_range(0..=bh - h);
    let ox = rng.gen_range(0..=bw - w);
    let mut out = vec![0.0f32; h * w * 3];
    let bdata = big.data();
    for y in 0..h {
        let src = ((oy + y) * bw + ox) * 3;
        let dst = y * w * 3;
        out[dst..dst + w * 3].copy_from_slice(&bdata[src..src + w * 3]);
    }
    Tensor::new(vec![h, w, 3], out)
}

/// Photometric jitter hook. Intentionally the identity: the pipelines
/// this one mirrors jitter brightness, contrast, and saturation here,
/// but synthetic splat colors carry the position signal, so perturbing
/// them is out of scope. The hook keeps the call site where it belongs.
pub fn color_jitter(img: Tensor<f32>) -> Tensor<f32> {
    img
}

// ----- binary tensor files -----

const TENSOR_MAGIC: &[u8; 4] = b"RTSR";
const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

fn write_tensor_header(
    out: &mut impl Write,
    dtype: u8,
    shape: &[usize],
) -> std::io::Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    out.write_u8(1)?; // version
    out.write_u8(dtype)?;
    out.write_u8(shape.len() as u8)?;
    for &d in shape {
        out.write_u64::<LittleEndian>(d as u64)?;
    }
    Ok(())
}

fn read_tensor_header(path: &Path, inp: &mut impl Read) -> Result<(u8, Vec<usize>)> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != TENSOR_MAGIC {
        return Err(format_err(path, "bad magic, not a tensor file"));
    }
    let version = inp.read_u8().map_err(|e| io_err(path, e))?;
    if version != 1 {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let dtype = inp.read_u8().map_err(|e| io_err(path, e))?;
    let rank = inp.read_u8().map_err(|e| io_err(path, e))? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(inp.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))? as usize);
    }
    Ok((dtype, shape))
}

pub fn write_tensor_f32(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write_tensor_header(&mut out, DTYPE_F32, t.shape()).map_err(|e| io_err(path, e))?;
    for &v in t.data() {
        out.write_f32::<LittleEndian>(v).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_tensor_f32(path: &Path) -> Result<Tensor<f32>> {
    let mut inp = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let (dtype, shape) = read_tensor_header(path, &mut inp)?;
    if dtype != DTYPE_F32 {
        return Err(format_err(path, format!("dtype code {dtype}, expected f32")));
    }
    let numel = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(inp.read_f32::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    Ok(Tensor::new(shape, data))
}

pub fn write_tensor_f64(path: &Path, t: &Tensor<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    write_tensor_header(&mut out, DTYPE_F64, t.shape()).map_err(|e| io_err(path, e))?;
    for &v in t.data() {
        out.write_f64::<LittleEndian>(v).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_tensor_f64(path: &Path) -> Result<Tensor<f64>> {
    let mut inp = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let (dtype, shape) = read_tensor_header(path, &mut inp)?;
    if dtype != DTYPE_F64 {
        return Err(format_err(path, format!("dtype code {dtype}, expected f64")));
    }
    let numel = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(inp.read_f64::<LittleEndian>().map_err(|e| io_err(path, e))?);
    }
    Ok(Tensor::new(shape, data))
}

// ----- scene directory layout -----

pub fn scene_dir_name(index: usize) -> String {
    format!("scene{index:02}")
}

pub fn view_file_name(view_id: u32) -> String {
    format!("view{view_id:04}.tsr")
}

const POSES_HEADER: &str = "view_id,tx,ty,tz,r11,r12,r13,r21,r22,r23,r31,r32,r33";

/// Writes `poses.csv` plus one tensor file per view into `dir`.
/// Pose floats print in shortest round-trip decimal, so re-reading is
/// bit-exact.
pub fn write_views(dir: &Path, views: &[View]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let poses_path = dir.join("poses.csv");
    let mut out = BufWriter::new(File::create(&poses_path).map_err(|e| io_err(&poses_path, e))?);
    writeln!(out, "{POSES_HEADER}").map_err(|e| io_err(&poses_path, e))?;
    for view in views {
        let p = view.pose.position;
        let m = view.pose.rotation.matrix();
        write!(out, "{},{},{},{}", view.view_id, p.x, p.y, p.z).map_err(|e| io_err(&poses_path, e))?;
        for r in 0..3 {
            for c in 0..3 {
                write!(out, ",{}", m[(r, c)]).map_err(|e| io_err(&poses_path, e))?;
            }
        }
        writeln!(out).map_err(|e| io_err(&poses_path, e))?;
        write_tensor_f32(&dir.join(view_file_name(view.view_id)), &view.image)?;
    }
    out.flush().map_err(|e| io_err(&poses_path, e))
}

pub fn read_poses(dir: &Path) -> Result<BTreeMap<u32, Pose>> {
    let path = dir.join("poses.csv");
    let file = BufReader::new(File::open(&path).map_err(|e| io_err(&path, e))?);
    let mut lines = file.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == POSES_HEADER => {}
        _ => return Err(format_err(&path, "missing or wrong header")),
    }
    let mut poses = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(format_err(
                &path,
                format!("line {}: expected 13 fields, got {}", lineno + 2, fields.len()),
            ));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| format_err(&path, format!("line {}: bad float '{s}'", lineno + 2)))
        };
        let view_id: u32 = fields[0].trim().parse().map_err(|_| {
            format_err(&path, format!("line {}: bad view id '{}'", lineno + 2, fields[0]))
        })?;
        let position = Vector3::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        let mut m = nalgebra::Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = parse(fields[4 + r * 3 + c])?;
            }
        }
        let rotation = Rotation::from_matrix(m)
            .map_err(|e| format_err(&path, format!("line {}: {e}", lineno + 2)))?;
        if poses.insert(view_id, Pose::new(position, rotation)).is_some() {
            return Err(format_err(&path, format!("duplicate view id {view_id}")));
        }
    }
    Ok(poses)
}

pub fn read_view_image(dir: &Path, view_id: u32) -> Result<Tensor<f32>> {
    read_tensor_f32(&dir.join(view_file_name(view_id)))
}

pub fn write_pairs(dir: &Path, pairs: &[PairRecord]) -> Result<()> {
    let path = dir.join("pairs.csv");
    let mut out = BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
    writeln!(out, "query_id,ref_id").map_err(|e| io_err(&path, e))?;
    for p in pairs {
        writeln!(out, "{},{}", p.query_id, p.ref_id).map_err(|e| io_err(&path, e))?;
    }
    out.flush().map_err(|e| io_err(&path, e))
}

pub fn read_pair_ids(dir: &Path) -> Result<Vec<(u32, u32)>> {
    let path = dir.join("pairs.csv");
    let file = BufReader::new(File::open(&path).map_err(|e| io_err(&path, e))?);
    let mut lines = file.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "query_id,ref_id" => {}
        _ => return Err(format_err(&path, "missing or wrong header")),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (q, r) = line.split_once(',').ok_or_else(|| {
            format_err(&path, format!("line {}: expected two fields", lineno + 2))
        })?;
        let bad = |s: &str| format_err(&path, format!("line {}: bad id '{s}'", lineno + 2));
        out.push((
            q.trim().parse().map_err(|_| bad(q))?,
            r.trim().parse().map_err(|_| bad(r))?,
        ));
    }
    Ok(out)
}

/// Rebuild full pair records from stored ids and poses.
pub fn pairs_from_ids(
    ids: &[(u32, u32)],
    poses: &BTreeMap<u32, Pose>,
) -> Result<Vec<PairRecord>> {
    ids.iter()
        .map(|&(query_id, ref_id)| {
            let query = poses.get(&query_id).ok_or(DatasetError::UnknownView(query_id))?;
            let reference = poses.get(&ref_id).ok_or(DatasetError::UnknownView(ref_id))?;
            Ok(PairRecord {
                query_id,
                ref_id,
                rel: relative_pose(reference, query),
                ref_pose: reference.clone(),
            })
        })
        .collect()
}

/// Descriptors as a `[n, c]` tensor in ascending view-id order, with ids
/// alongside so sparse id sets survive.
pub fn write_descriptors(dir: &Path, index: &DescriptorIndex) -> Result<()> {
    let mut entries: Vec<(u32, Vec<f64>)> = index.entries.clone();
    entries.sort_by_key(|(id, _)| *id);
    let n = entries.len();
    let c = entries.first().map_or(0, |(_, d)| d.len());
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * c);
    for (id, d) in &entries {
        ids.push(*id as f64);
        data.extend_from_slice(d);
    }
    write_tensor_f64(&dir.join("descriptor_ids.tsr"), &Tensor::new(vec![n], ids))?;
    write_tensor_f64(&dir.join("descriptors.tsr"), &Tensor::new(vec![n, c], data))
}

pub fn read_descriptors(dir: &Path) -> Result<DescriptorIndex> {
    let ids = read_tensor_f64(&dir.join("descriptor_ids.tsr"))?;
    let data = read_tensor_f64(&dir.join("descriptors.tsr"))?;
    let n = data.shape()[0];
    let c = data.shape()[1];
    if ids.numel() != n {
        return Err(format_err(
            &dir.join("descriptors.tsr"),
            format!("{} ids for {} rows", ids.numel(), n),
        ));
    }
    // Rows were stored normalized; re-normalizing would disturb the last
    // bits, so validate instead and take them as-is.
    let mut index = DescriptorIndex::new();
    for (i, &id) in ids.data().iter().enumerate() {
        let row = data.data()[i * c..(i + 1) * c].to_vec();
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format_err(
                &dir.join("descriptors.tsr"),
                format!("row {i} has norm {norm}, expected unit"),
            ));
        }
        index.entries.push((id as u32, row));
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angular_error_deg;
    use crate::model::{Aggregator, ModelConfig};
    use crate::geometry::RotationKind;

    fn test_scene(seed: u64) -> Scene {
        generate_scene(0, seed, &SceneParams::default()).unwrap()
    }

    fn tiny_model() -> Relformer<f32> {
        let cfg = ModelConfig {
            image: 64,
            in_channels: 3,
            stage_channels: vec![4, 8],
            hidden: 16,
            layers: 1,
            heads: 2,
            mlp: 16,
            dropout: 0.0,
            rot: RotationKind::SixD,
            agg: Aggregator::Baseline,
        };
        Relformer::new(cfg, 0).unwrap()
    }

    #[test]
    fn scenes_are_deterministic_per_seed() {
        assert_eq!(test_scene(5), test_scene(5));
        assert_ne!(test_scene(5).positions, test_scene(6).positions);
    }

    #[test]
    fn landmarks_stay_inside_the_extent() {
        let params = SceneParams {
            landmarks: 500,
            extent: 4.0,
        };
        let scene = generate_scene(1, 9, &params).unwrap();
        assert_eq!(scene.positions.len(), 500);
        assert!(scene
            .positions
            .iter()
            .all(|p| p.iter().all(|v| v.abs() <= 2.0)));
        assert!(scene
            .colors
            .iter()
            .all(|c| c.iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn colors_correlate_with_position() {
        // Nearby landmarks look more alike than distant ones on average;
        // that is what makes location recoverable from appearance.
        let scene = test_scene(3);
        let dist = |a: [f32; 3], b: [f32; 3]| -> f64 {
            a.iter()
                .zip(&b)
                .map(|(x, y)| ((x - y) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut near = Vec::new();
        let mut far = Vec::new();
        for i in 0..scene.positions.len() {
            for j in (i + 1)..scene.positions.len().min(i + 40) {
                let d = (scene.positions[i] - scene.positions[j]).norm();
                let c = dist(scene.colors[i], scene.colors[j]);
                if d < 0.5 {
                    near.push(c);
                } else if d > 2.5 {
                    far.push(c);
                }
            }
        }
        assert!(near.len() > 30 && far.len() > 30);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&near) < mean(&far),
            "near {} vs far {}",
            mean(&near),
            mean(&far)
        );
    }

    #[test]
    fn trajectories_respect_the_step_bounds() {
        let scene = test_scene(7);
        let poses = sample_trajectory(&scene, 21, 60);
        assert_eq!(poses.len(), 60);
        let bound = 1.5 * scene.half_extent();
        for pose in &poses {
            assert!(pose.position.iter().all(|v| v.abs() <= bound + 1e-12));
        }
        for w in poses.windows(2) {
            let step = (w[1].position - w[0].position).norm();
            assert!(step <= STEP_TRANSLATION + 1e-12, "step {step}");
            let turn = angular_error_deg(&w[0].rotation, &w[1].rotation);
            assert!(turn <= STEP_ROTATION_DEG + 1e-6, "turn {turn}");
        }
        let again = sample_trajectory(&scene, 21, 60);
        for (a, b) in poses.iter().zip(&again) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.rotation.matrix(), b.rotation.matrix());
        }
    }

    #[test]
    fn optical_axis_point_projects_to_the_principal_point() {
        let intr = Intrinsics::square(64, 90.0);
        let pose = Pose::identity();
        // Camera looks along +z from the origin.
        let (u, v, z) = project(&pose, &intr, Vector3::new(0.0, 0.0, 3.7)).unwrap();
        assert_eq!(u, intr.cx);
        assert_eq!(v, intr.cy);
        assert_eq!(z, 3.7);
        assert!(project(&pose, &intr, Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = test_scene(11);
        let poses = sample_trajectory(&scene, 4, 2);
        let intr = Intrinsics::square(64, 90.0);
        let a = render_view(&scene, &poses[0], &intr).unwrap();
        let b = render_view(&scene, &poses[0], &intr).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), &[64, 64, 3]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn moving_the_camera_right_shifts_splats_left() {
        // A compact cloud that projects to a blob well inside the frame,
        // so the centroid can actually move.
        let params = SceneParams {
            landmarks: 300,
            extent: 1.0,
        };
        let scene = generate_scene(0, 13, &params).unwrap();
        let intr = Intrinsics::square(64, 90.0);
        // Outside the cloud, looking straight at it along +x.
        let pos = Vector3::new(-1.4, 0.0, 0.0);
        let rot = Rotation::look_at_rdf(Vector3::x(), Vector3::z()).unwrap();
        let pose_a = Pose::new(pos, rot.clone());
        let right_world = rot.rotate(Vector3::x());
        let pose_b = Pose::new(pos + 0.25 * right_world, rot);

        let centroid_col = |img: &Tensor<f32>| -> f64 {
            let mut wsum = 0.0;
            let mut n = 0.0;
            for y in 0..64 {
                for x in 0..64 {
                    let px = &img.data()[(y * 64 + x) * 3..(y * 64 + x) * 3 + 3];
                    if px != [0.5, 0.5, 0.5] {
                        wsum += x as f64;
                        n += 1.0;
                    }
                }
            }
            wsum / n
        };
        let a = render_view(&scene, &pose_a, &intr).unwrap();
        let b = render_view(&scene, &pose_b, &intr).unwrap();
        assert!(
            centroid_col(&b) < centroid_col(&a) - 1.0,
            "centroid moved {} -> {}",
            centroid_col(&a),
            centroid_col(&b)
        );
    }

    #[test]
    fn looking_away_from_the_scene_is_an_empty_view() {
        let scene = test_scene(17);
        let intr = Intrinsics::square(64, 90.0);
        // From outside the cloud looking further out.
        let pose = Pose::new(
            Vector3::new(-2.9, 0.0, 0.0),
            Rotation::look_at_rdf(-Vector3::x(), Vector3::z()).unwrap(),
        );
        assert!(matches!(
            render_view(&scene, &pose, &intr),
            Err(DatasetError::EmptyView { .. })
        ));
    }

    #[test]
    fn descriptors_are_unit_norm_with_backbone_width() {
        let model = tiny_model();
        let scene = test_scene(19);
        let poses = sample_trajectory(&scene, 23, 3);
        let intr = Intrinsics::square(64, 90.0);
        let images: Vec<Tensor<f32>> = poses
            .iter()
            .map(|p| render_view(&scene, p, &intr).unwrap())
            .collect();
        let descs = compute_descriptors(&model, &images).unwrap();
        assert_eq!(descs.len(), 3);
        for d in &descs {
            assert_eq!(d.len(), 8, "descriptor width is the last stage width");
            let norm: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        // Identical images give cosine exactly at the top of the range.
        let twice = compute_descriptors(&model, &[images[0].clone(), images[0].clone()]).unwrap();
        assert!((cosine(&twice[0], &twice[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_neighbor_rules() {
        let mut index = DescriptorIndex::new();
        index.insert(4, vec![1.0, 0.0]).unwrap();
        index.insert(9, vec![0.0, 1.0]).unwrap();
        // Exact match wins.
        assert_eq!(index.nearest(&[0.0, 1.0], None).unwrap(), 9);
        // Higher similarity wins: query at 25 degrees from id 4.
        let q = [0.9, 0.42];
        assert_eq!(index.nearest(&q, None).unwrap(), 4);
        // Tie (duplicate descriptors) resolves to the lowest id.
        index.insert(2, vec![1.0, 0.0]).unwrap();
        assert_eq!(index.nearest(&[1.0, 0.0], None).unwrap(), 2);
        assert_eq!(index.nearest(&[1.0, 0.0], Some(2)).unwrap(), 4);
        // Exclusion plus k ranking.
        assert_eq!(index.k_nearest(&[1.0, 0.0], 2, Some(2)).unwrap(), vec![4, 9]);
        assert!(index.k_nearest(&[1.0, 0.0], 3, Some(2)).is_err());
        let empty = DescriptorIndex::new();
        assert!(matches!(
            empty.nearest(&[1.0], None),
            Err(DatasetError::EmptyIndex)
        ));
    }

    #[test]
    fn nearest_matches_a_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut index = DescriptorIndex::new();
        let mut raw = Vec::new();
        for id in 0..50u32 {
            let d: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            index.insert(id, d.clone()).unwrap();
            raw.push(d);
        }
        for _ in 0..1000 {
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut best = (f64::NEG_INFINITY, 0u32);
            for (id, d) in raw.iter().enumerate() {
                let s = cosine(&q, d);
                if s > best.0 {
                    best = (s, id as u32);
                }
            }
            assert_eq!(index.nearest(&q, None).unwrap(), best.1);
        }
    }

    #[test]
    fn pairs_recover_the_query_pose() {
        let scene = test_scene(37);
        let poses_vec = sample_trajectory(&scene, 41, 12);
        let mut poses = BTreeMap::new();
        let mut index = DescriptorIndex::new();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for (i, p) in poses_vec.iter().enumerate() {
            poses.insert(i as u32, p.clone());
            let d: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            index.insert(i as u32, d).unwrap();
        }
        let pairs = build_pairs(&poses, &index, 3).unwrap();
        assert_eq!(pairs.len(), 12 * 3);
        for pair in &pairs {
            assert_ne!(pair.query_id, pair.ref_id, "self pair");
            let recovered = pair.ref_pose.compose(&pair.rel);
            let query = &poses[&pair.query_id];
            assert!((recovered.position - query.position).norm() < 1e-12);
            assert!(
                recovered
                    .rotation
                    .matrix()
                    .iter()
                    .zip(query.rotation.matrix().iter())
                    .all(|(a, b)| (a - b).abs() < 1e-12)
            );
        }
        assert!(build_pairs(&poses, &index, 12).is_err());
    }

    #[test]
    fn consecutive_views_look_more_alike_than_cross_scene_pairs() {
        let model = tiny_model();
        let intr = Intrinsics::square(64, 90.0);
        let render_run = |scene: &Scene, seed: u64, n: usize| -> Vec<Vec<f64>> {
            let poses = sample_trajectory(scene, seed, n);
            let images: Vec<Tensor<f32>> = poses
                .iter()
                .map(|p| render_view(scene, p, &intr).unwrap())
                .collect();
            compute_descriptors(&model, &images).unwrap()
        };
        let scene_a = test_scene(47);
        let scene_b = generate_scene(1, 53, &SceneParams::default()).unwrap();
        let da = render_run(&scene_a, 59, 26);
        let db = render_run(&scene_b, 61, 26);

        let consec: Vec<f64> = da.windows(2).map(|w| cosine(&w[0], &w[1])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let cross: Vec<f64> = (0..100)
            .map(|_| {
                let i = rng.gen_range(0..da.len());
                let j = rng.gen_range(0..db.len());
                cosine(&da[i], &db[j])
            })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let cross_mean = mean(&cross);
        let cross_sem = (cross
            .iter()
            .map(|v| (v - cross_mean).powi(2))
            .sum::<f64>()
            / (cross.len() - 1) as f64)
            .sqrt()
            / (cross.len() as f64).sqrt();
        assert!(
            mean(&consec) > cross_mean + 3.0 * cross_sem,
            "consecutive {} vs cross {} (sem {})",
            mean(&consec),
            cross_mean,
            cross_sem
        );
    }

    #[test]
    fn tensor_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t32 = Tensor::new(vec![2, 3], vec![1.0f32, -0.5, 0.25, 3e-8, 1e20, -0.0]);
        let p32 = dir.path().join("a.tsr");
        write_tensor_f32(&p32, &t32).unwrap();
        let back = read_tensor_f32(&p32).unwrap();
        assert_eq!(back.shape(), t32.shape());
        assert_eq!(back.data(), t32.data());

        let t64 = Tensor::new(vec![3], vec![std::f64::consts::PI, -1.0, 1e-300]);
        let p64 = dir.path().join("b.tsr");
        write_tensor_f64(&p64, &t64).unwrap();
        assert_eq!(read_tensor_f64(&p64).unwrap().data(), t64.data());
        // Mismatched dtype is rejected.
        assert!(read_tensor_f32(&p64).is_err());
        assert!(read_tensor_f32(dir.path().join("missing.tsr").as_path()).is_err());
    }

    #[test]
    fn scene_directory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scene = test_scene(71);
        let poses = sample_trajectory(&scene, 73, 5);
        let intr = Intrinsics::square(32, 90.0);
        let views: Vec<View> = poses
            .iter()
            .enumerate()
            .map(|(i, p)| View {
                scene_id: 0,
                view_id: i as u32,
                pose: p.clone(),
                image: render_view(&scene, p, &intr).unwrap(),
            })
            .collect();
        write_views(dir.path(), &views).unwrap();

        let loaded = read_poses(dir.path()).unwrap();
        assert_eq!(loaded.len(), 5);
        for view in &views {
            let p = &loaded[&view.view_id];
            // Shortest round-trip decimal text preserves every bit.
            assert_eq!(p.position, view.pose.position);
            assert_eq!(p.rotation.matrix(), view.pose.rotation.matrix());
            let img = read_view_image(dir.path(), view.view_id).unwrap();
            assert_eq!(img.data(), view.image.data());
        }

        let mut poses_map = BTreeMap::new();
        for v in &views {
            poses_map.insert(v.view_id, v.pose.clone());
        }
        let mut index = DescriptorIndex::new();
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        for v in &views {
            index
                .insert(v.view_id, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
        }
        let pairs = build_pairs(&poses_map, &index, 2).unwrap();
        write_pairs(dir.path(), &pairs).unwrap();
        let ids = read_pair_ids(dir.path()).unwrap();
        assert_eq!(ids.len(), pairs.len());
        let rebuilt = pairs_from_ids(&ids, &poses_map).unwrap();
        for (a, b) in pairs.iter().zip(&rebuilt) {
            assert_eq!(a.query_id, b.query_id);
            assert_eq!(a.ref_id, b.ref_id);
            assert_eq!(a.rel.delta_position, b.rel.delta_position);
        }

        write_descriptors(dir.path(), &index).unwrap();
        let loaded_index = read_descriptors(dir.path()).unwrap();
        assert_eq!(loaded_index.len(), index.len());
        for id in index.ids() {
            assert_eq!(loaded_index.get(id).unwrap(), index.get(id).unwrap());
        }
    }

    #[test]
    fn crop_augmentation_keeps_shape_and_varies_with_seed() {
        let scene = test_scene(83);
        let poses = sample_trajectory(&scene, 89, 2);
        let intr = Intrinsics::square(64, 90.0);
        let img = render_view(&scene, &poses[0], &intr).unwrap();
        let up = resize_bilinear(&img, 73, 73);
        assert_eq!(up.shape(), &[73, 73, 3]);

        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r1b = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = crop_augment(&img, &mut r1);
        let a2 = crop_augment(&img, &mut r1b);
        let b = crop_augment(&img, &mut r2);
        assert_eq!(a.shape(), img.shape());
        assert_eq!(a.data(), a2.data());
        assert_ne!(a.data(), b.data());
        // The jitter hook is the identity.
        assert_eq!(color_jitter(img.clone()).data(), img.data());
    }

    #[test]
    fn derived_seeds_separate_streams() {
        let a = derive_seed(7, 1, 0);
        assert_eq!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(7, 1, 1));
        assert_ne!(a, derive_seed(7, 2, 0));
        assert_ne!(a, derive_seed(8, 1, 0));
    }
}
