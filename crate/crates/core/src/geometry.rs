//! Exact rotation and pose math in `f64`.
//!
//! Rotations live as proper orthonormal matrices wrapped in [`Rotation`];
//! the three regression encodings (unit quaternion, 6D Gram-Schmidt, 9D
//! SVD-projected) convert to and from that canonical form. Poses are
//! camera-to-world: the rotation columns are the camera right/down/forward
//! axes expressed in world coordinates, and the position is the camera
//! center in the world frame.
//!
//! Relative pose convention between poses 1 and 2:
//! `delta_x = x2 - x1` (world frame) and `delta_R = R1^T * R2`, so that
//! `x2 = x1 + delta_x` and `R2 = R1 * delta_R`.

use nalgebra::{Quaternion, UnitQuaternion, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nalgebra::{Matrix3, Vector3};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("quaternion norm {0:.3e} is too small to normalize")]
    ZeroQuaternion(f64),
    #[error("6d encoding is degenerate: {0}")]
    DegenerateSixD(&'static str),
    #[error("9d encoding has no unique nearest rotation")]
    DegenerateNineD,
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("rotation encoding expects {expected} values, got {got}")]
    EncodingLength { expected: usize, got: usize },
    #[error("view direction is parallel to the up axis")]
    DegenerateLookAt,
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// A proper rotation (orthonormal, determinant +1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wrap a matrix that is already known to be a rotation (for example
    /// the output of a product of rotations).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Validate and wrap a matrix. Orthonormality and determinant are
    /// checked to 1e-6, loose enough for values that survived a text
    /// round-trip but tight enough to reject reflections and garbage.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let gram = m.transpose() * m;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho_err > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotARotation(format!(
                "orthonormality error {ortho_err:.3e}, determinant {det:.6}"
            )));
        }
        Ok(Rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if norm < 1e-12 {
            return Err(GeometryError::NotARotation("zero rotation axis".to_string()));
        }
        let unit = nalgebra::Unit::new_unchecked(axis / norm);
        Ok(Rotation(
            UnitQuaternion::from_axis_angle(&unit, angle)
                .to_rotation_matrix()
                .into_inner(),
        ))
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    // ----- quaternion encoding, [w, x, y, z] -----

    /// Normalizes the input, so any scalar multiple of a unit quaternion
    /// decodes to the same rotation.
    pub fn from_quat(q: [f64; 4]) -> Result<Self> {
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if norm < 1e-12 {
            return Err(GeometryError::ZeroQuaternion(norm));
        }
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
        Ok(Rotation(uq.to_rotation_matrix().into_inner()))
    }

    /// Canonical unit quaternion: `w >= 0`, and when `w == 0` the first
    /// nonzero of x, y, z is positive. Both hemispheres encode the same
    /// rotation; pinning one makes the encoding a function.
    ///
    /// Shepperd's branch selection divides by the largest of the four
    /// quaternion components, so no branch is catastrophically cancelled,
    /// and exact inputs (permutation-like matrices) give exact zeros.
    pub fn to_quat(&self) -> [f64; 4] {
        let m = &self.0;
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        canonicalize_quat(q)
    }

    // ----- 6D encoding: first two matrix columns, stacked -----

    pub fn to_sixd(&self) -> [f64; 6] {
        let m = &self.0;
        [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
    }

    /// Gram-Schmidt recovery: normalize the first vector, orthogonalize
    /// and normalize the second, complete with a cross product.
    pub fn from_sixd(s: [f64; 6]) -> Result<Self> {
        let a = Vector3::new(s[0], s[1], s[2]);
        let b = Vector3::new(s[3], s[4], s[5]);
        let na = a.norm();
        if na < 1e-12 {
            return Err(GeometryError::DegenerateSixD("first vector is zero"));
        }
        let c1 = a / na;
        let proj = b - c1 * c1.dot(&b);
        let np = proj.norm();
        if np < 1e-12 {
            return Err(GeometryError::DegenerateSixD(
                "second vector is parallel to the first",
            ));
        }
        let c2 = proj / np;
        let c3 = c1.cross(&c2);
        Ok(Rotation(Matrix3::from_columns(&[c1, c2, c3])))
    }

    // ----- 9D encoding: full matrix, row-major -----

    pub fn to_nined(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Nearest rotation under the Frobenius norm: given the SVD
    /// `M = U S V^T`, take `R = U diag(1, 1, det(U V^T)) V^T`. The
    /// projection is unique iff the two smallest singular values do not
    /// both vanish.
    pub fn from_nined(v: [f64; 9]) -> Result<Self> {
        let m = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        let svd = SVD::new(m, true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::DegenerateNineD),
        };
        let mut sv = [
            svd.singular_values[0],
            svd.singular_values[1],
            svd.singular_values[2],
        ];
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if sv[1] + sv[2] < 1e-12 {
            return Err(GeometryError::DegenerateNineD);
        }
        let d = (u * v_t).determinant();
        let fixup = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
        Ok(Rotation(u * fixup * v_t))
    }

    /// Geodesic angle to another rotation, radians in [0, pi].
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        let trace = (self.0.transpose() * other.0).trace();
        (0.5 * (trace - 1.0)).clamp(-1.0, 1.0).acos()
    }

    /// Shortest-path spherical interpolation, `t` in [0, 1].
    pub fn slerp(&self, other: &Rotation, t: f64) -> Rotation {
        let qa = self.to_quat();
        let mut qb = other.to_quat();
        let dot: f64 = qa.iter().zip(&qb).map(|(a, b)| a * b).sum();
        if dot < 0.0 {
            for c in &mut qb {
                *c = -*c;
            }
        }
        let ua = UnitQuaternion::from_quaternion(Quaternion::new(qa[0], qa[1], qa[2], qa[3]));
        let ub = UnitQuaternion::from_quaternion(Quaternion::new(qb[0], qb[1], qb[2], qb[3]));
        let q = ua.try_slerp(&ub, t, 1e-12).unwrap_or(ua);
        Rotation(q.to_rotation_matrix().into_inner())
    }

    /// Camera-to-world rotation whose forward axis points along `forward`
    /// with right/down/forward columns, `world_up` fixing the roll.
    pub fn look_at_rdf(forward: Vector3<f64>, world_up: Vector3<f64>) -> Result<Self> {
        let nf = forward.norm();
        if nf < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let f = forward / nf;
        let r = f.cross(&world_up);
        let nr = r.norm();
        if nr < 1e-9 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let right = r / nr;
        let down = f.cross(&right);
        Ok(Rotation(Matrix3::from_columns(&[right, down, f])))
    }
}

fn canonicalize_quat(mut q: [f64; 4]) -> [f64; 4] {
    let flip = match q[0].partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Less) => true,
        Some(std::cmp::Ordering::Greater) => false,
        _ => {
            let first = q[1..].iter().find(|c| **c != 0.0);
            matches!(first, Some(c) if *c < 0.0)
        }
    };
    if flip {
        for c in &mut q {
            *c = -*c;
        }
    }
    q
}

/// Camera pose: position of the camera center in the world frame plus the
/// camera-to-world rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rotation) -> Self {
        Pose { position, rotation }
    }

    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            rotation: Rotation::identity(),
        }
    }

    /// Apply a relative pose: `x2 = x1 + dx`, `R2 = R1 * dR`.
    pub fn compose(&self, rel: &RelativePose) -> Pose {
        Pose {
            position: self.position + rel.delta_position,
            rotation: self.rotation.compose(&rel.delta_rotation),
        }
    }

    pub fn world_to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix().transpose() * (p - self.position)
    }

    pub fn camera_to_world(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.position
    }
}

/// Motion from pose 1 to pose 2: world-frame position difference and the
/// rotation taking frame 1 axes to frame 2 axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub delta_position: Vector3<f64>,
    pub delta_rotation: Rotation,
}

impl RelativePose {
    pub fn identity() -> Self {
        RelativePose {
            delta_position: Vector3::zeros(),
            delta_rotation: Rotation::identity(),
        }
    }
}

/// Relative pose such that `b == a.compose(relative_pose(a, b))`.
pub fn relative_pose(a: &Pose, b: &Pose) -> RelativePose {
    RelativePose {
        delta_position: b.position - a.position,
        delta_rotation: Rotation::from_matrix_unchecked(
            a.rotation.matrix().transpose() * b.rotation.matrix(),
        ),
    }
}

/// Euclidean distance between two positions, meters.
pub fn position_error(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a - b).norm()
}

/// Geodesic rotation error, degrees in [0, 180].
pub fn angular_error_deg(a: &Rotation, b: &Rotation) -> f64 {
    a.angle_to(b).to_degrees()
}

/// Which encoding the rotation head regresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationKind {
    #[serde(rename = "quat")]
    Quat,
    #[serde(rename = "6d")]
    SixD,
    #[serde(rename = "9d")]
    NineD,
}

impl RotationKind {
    pub const ALL: [RotationKind; 3] = [RotationKind::Quat, RotationKind::SixD, RotationKind::NineD];

    /// Regression target width.
    pub fn dim(self) -> usize {
        match self {
            RotationKind::Quat => 4,
            RotationKind::SixD => 6,
            RotationKind::NineD => 9,
        }
    }

    pub fn encode(self, r: &Rotation) -> Vec<f64> {
        match self {
            RotationKind::Quat => r.to_quat().to_vec(),
            RotationKind::SixD => r.to_sixd().to_vec(),
            RotationKind::NineD => r.to_nined().to_vec(),
        }
    }

    pub fn decode(self, v: &[f64]) -> Result<Rotation> {
        if v.len() != self.dim() {
            return Err(GeometryError::EncodingLength {
                expected: self.dim(),
                got: v.len(),
            });
        }
        match self {
            RotationKind::Quat => Rotation::from_quat([v[0], v[1], v[2], v[3]]),
            RotationKind::SixD => Rotation::from_sixd([v[0], v[1], v[2], v[3], v[4], v[5]]),
            RotationKind::NineD => Rotation::from_nined([
                v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
            ]),
        }
    }
}

impl std::fmt::Display for RotationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RotationKind::Quat => "quat",
            RotationKind::SixD => "6d",
            RotationKind::NineD => "9d",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RotationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "quat" => Ok(RotationKind::Quat),
            "6d" => Ok(RotationKind::SixD),
            "9d" => Ok(RotationKind::NineD),
            other => Err(format!("unknown rotation encoding '{other}' (quat, 6d, 9d)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rz90() -> Rotation {
        Rotation::from_matrix(Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)).unwrap()
    }

    fn rx90() -> Rotation {
        Rotation::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)).unwrap()
    }

    fn assert_rotation_eq(a: &Rotation, b: &Rotation, tol: f64) {
        let d = (a.matrix() - b.matrix()).abs().max();
        assert!(d <= tol, "rotations differ by {d:.3e}:\n{a:?}\nvs\n{b:?}");
    }

    // Strategy: random rotations from quaternions with comfortably
    // nonzero norm.
    fn arb_rotation() -> impl Strategy<Value = Rotation> {
        proptest::array::uniform4(-1.0f64..1.0)
            .prop_filter("quaternion norm", |q| {
                q.iter().map(|c| c * c).sum::<f64>().sqrt() > 0.1
            })
            .prop_map(|q| Rotation::from_quat(q).unwrap())
    }

    fn arb_vec3(extent: f64) -> impl Strategy<Value = Vector3<f64>> {
        proptest::array::uniform3(-extent..extent).prop_map(|v| Vector3::new(v[0], v[1], v[2]))
    }

    #[test]
    fn quarter_turn_about_z_encodes_to_known_values() {
        // Hand-computed for R = Rz(90 deg).
        let r = rz90();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = r.to_quat();
        assert_abs_diff_eq!(q[0], h, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[3], h, epsilon = 1e-12);

        assert_eq!(r.to_sixd(), [0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(r.to_nined(), [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn gram_schmidt_of_skewed_frame_is_identity() {
        // (1,0,0) and (1,1,0): the second vector loses its projection on
        // the first and normalizes to (0,1,0); the cross gives (0,0,1).
        let r = Rotation::from_sixd([1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_rotation_eq(&r, &Rotation::identity(), 1e-15);
    }

    #[test]
    fn angular_errors_for_quarter_and_half_turns() {
        let id = Rotation::identity();
        assert_abs_diff_eq!(angular_error_deg(&id, &rz90()), 90.0, epsilon = 1e-9);
        let rz180 =
            Rotation::from_matrix(Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0))
                .unwrap();
        assert_abs_diff_eq!(angular_error_deg(&id, &rz180), 180.0, epsilon = 1e-9);
        assert_abs_diff_eq!(angular_error_deg(&rz90(), &rz90()), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn compose_then_relative_recovers_hand_computed_case() {
        // p1 at (1,2,3) facing Rz90; move 1m along world x and pitch by
        // Rx90. All products verified by hand.
        let p1 = Pose::new(Vector3::new(1.0, 2.0, 3.0), rz90());
        let rel = RelativePose {
            delta_position: Vector3::new(1.0, 0.0, 0.0),
            delta_rotation: rx90(),
        };
        let p2 = p1.compose(&rel);
        assert_abs_diff_eq!(p2.position, Vector3::new(2.0, 2.0, 3.0), epsilon = 1e-15);
        let expected_r2 =
            Rotation::from_matrix(Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0))
                .unwrap();
        assert_rotation_eq(&p2.rotation, &expected_r2, 1e-15);

        let back = relative_pose(&p1, &p2);
        assert_abs_diff_eq!(back.delta_position, rel.delta_position, epsilon = 1e-15);
        assert_rotation_eq(&back.delta_rotation, &rel.delta_rotation, 1e-15);
    }

    #[test]
    fn reflection_is_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Rotation::from_matrix(m).is_err());
    }

    #[test]
    fn degenerate_encodings_are_rejected() {
        assert!(Rotation::from_quat([0.0; 4]).is_err());
        assert!(Rotation::from_sixd([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).is_err());
        assert!(Rotation::from_sixd([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
        assert!(Rotation::from_nined([0.0; 9]).is_err());
        assert!(RotationKind::Quat.decode(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn nined_projects_a_noisy_matrix_back_onto_rotations() {
        let r = rz90();
        let mut v = r.to_nined();
        // Deterministic off-manifold perturbation.
        for (i, e) in v.iter_mut().enumerate() {
            *e += 0.05 * ((i as f64 * 2.39).sin());
        }
        let back = Rotation::from_nined(v).unwrap();
        let gram = back.matrix().transpose() * back.matrix();
        assert!((gram - Matrix3::identity()).abs().max() < 1e-12);
        assert_abs_diff_eq!(back.matrix().determinant(), 1.0, epsilon = 1e-12);
        // Still close to where it started.
        assert!(angular_error_deg(&r, &back) < 10.0);
    }

    #[test]
    fn quat_hemisphere_is_canonical_at_w_zero() {
        // 180 degrees about (1,-1,0)/sqrt(2): R = 2*a*a^T - I has exact
        // integer entries, so w comes out exactly zero. The natural
        // quaternion is (0, s, -s, 0) up to sign; the tie-break picks the
        // one whose first nonzero component is positive.
        let r = Rotation::from_matrix(Matrix3::new(
            0.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0,
        ))
        .unwrap();
        let q = r.to_quat();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(q[0], 0.0);
        assert_abs_diff_eq!(q[1], h, epsilon = 1e-15);
        assert_abs_diff_eq!(q[2], -h, epsilon = 1e-15);
        assert_eq!(q[3], 0.0);
    }

    #[test]
    fn sixd_is_continuous_across_the_antipode_and_quat_is_not() {
        // Walk the rotation angle through 180 degrees. The quaternion
        // encoding switches hemispheres there; the 6d encoding does not
        // notice.
        let axis = Vector3::new(0.3, -0.5, 0.8);
        let delta = 1e-3;
        let steps = 40;
        let mut max_quat_jump = 0.0f64;
        let mut max_sixd_jump = 0.0f64;
        let enc = |theta: f64| {
            let r = Rotation::from_axis_angle(axis, theta).unwrap();
            (r.to_quat(), r.to_sixd())
        };
        let start = std::f64::consts::PI - delta * (steps as f64) / 2.0;
        let (mut prev_q, mut prev_s) = enc(start);
        for i in 1..=steps {
            let (q, s) = enc(start + delta * i as f64);
            let qj: f64 = q
                .iter()
                .zip(&prev_q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let sj: f64 = s
                .iter()
                .zip(&prev_s)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            max_quat_jump = max_quat_jump.max(qj);
            max_sixd_jump = max_sixd_jump.max(sj);
            prev_q = q;
            prev_s = s;
        }
        assert!(max_quat_jump > 1.0, "quat jump {max_quat_jump}");
        assert!(max_sixd_jump <= 2.0 * delta, "6d jump {max_sixd_jump}");
    }

    #[test]
    fn look_at_builds_right_down_forward_axes() {
        // Looking along +x with z up: right is -y, down is -z.
        let r = Rotation::look_at_rdf(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        let m = r.matrix();
        assert_abs_diff_eq!(m.column(0).into_owned(), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.column(1).into_owned(), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.column(2).into_owned(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);

        assert!(Rotation::look_at_rdf(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.0, 0.0, 1.0))
            .is_err());
    }

    #[test]
    fn world_camera_transforms_invert_each_other() {
        let pose = Pose::new(Vector3::new(1.0, -2.0, 0.5), rz90());
        let p = Vector3::new(0.3, 0.4, 2.0);
        let cam = pose.world_to_camera(p);
        assert_abs_diff_eq!(pose.camera_to_world(cam), p, epsilon = 1e-12);
        // The camera center maps to the camera origin.
        assert_abs_diff_eq!(
            pose.world_to_camera(pose.position),
            Vector3::zeros(),
            epsilon = 1e-12
        );
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(r in arb_rotation(), kind in proptest::sample::select(&RotationKind::ALL[..])) {
            let enc = kind.encode(&r);
            prop_assert_eq!(enc.len(), kind.dim());
            let back = kind.decode(&enc).unwrap();
            let d = (r.matrix() - back.matrix()).abs().max();
            prop_assert!(d < 1e-9, "round trip error {}", d);
        }

        #[test]
        fn decoded_rotations_are_orthonormal(r in arb_rotation()) {
            for kind in RotationKind::ALL {
                let back = kind.decode(&kind.encode(&r)).unwrap();
                let gram = back.matrix().transpose() * back.matrix();
                prop_assert!((gram - Matrix3::identity()).abs().max() < 1e-9);
                prop_assert!((back.matrix().determinant() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn quat_encoding_stays_on_the_upper_hemisphere(r in arb_rotation()) {
            let q = r.to_quat();
            prop_assert!(q[0] >= 0.0);
            let norm: f64 = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }

        #[test]
        fn compose_inverts_relative_pose(
            t1 in arb_vec3(5.0),
            r1 in arb_rotation(),
            t2 in arb_vec3(5.0),
            r2 in arb_rotation(),
        ) {
            let a = Pose::new(t1, r1);
            let b = Pose::new(t2, r2);
            let rel = relative_pose(&a, &b);
            let back = a.compose(&rel);
            prop_assert!((back.position - b.position).norm() < 1e-12);
            let d = (back.rotation.matrix() - b.rotation.matrix()).abs().max();
            prop_assert!(d < 1e-12, "rotation error {}", d);
        }

        #[test]
        fn angular_error_is_a_metric_on_test_points(a in arb_rotation(), b in arb_rotation()) {
            let e_ab = angular_error_deg(&a, &b);
            let e_ba = angular_error_deg(&b, &a);
            prop_assert!((e_ab - e_ba).abs() < 1e-9);
            prop_assert!((0.0..=180.0 + 1e-9).contains(&e_ab));
            // acos near 1 amplifies rounding to sqrt(eps): the self
            // distance is zero only to about 1e-5 degrees.
            prop_assert!(angular_error_deg(&a, &a) < 1e-5);
        }

        #[test]
        fn slerp_endpoints_and_midpoint(a in arb_rotation(), b in arb_rotation()) {
            assert_rotation_eq(&a.slerp(&b, 0.0), &a, 1e-9);
            assert_rotation_eq(&a.slerp(&b, 1.0), &b, 1e-9);
            let mid = a.slerp(&b, 0.5);
            let half = angular_error_deg(&a, &b) / 2.0;
            prop_assert!((angular_error_deg(&a, &mid) - half).abs() < 1e-6);
            prop_assert!((angular_error_deg(&mid, &b) - half).abs() < 1e-6);
        }
    }
}
