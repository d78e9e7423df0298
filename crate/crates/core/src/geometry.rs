//! Rotations, pinhole projection, point-set distances and forward kinematics.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (camera-frame z = {0})")]
    BehindCamera(f64),
    #[error("point set is empty")]
    EmptySet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}

/// Minimum camera-frame depth accepted by [`CameraModel::project`].
pub const MIN_DEPTH: f64 = 1e-6;

/// Unit quaternion rotation. `q` and `-q` compare equal.
#[derive(Clone, Copy, Debug)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds from raw quaternion coefficients, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Rotation(UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(UnitQuaternion::new_normalize(q.into_inner()))
    }

    /// Rotation vector (axis times angle in radians).
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(*v))
    }

    pub fn about(axis: Axis, angle: f64) -> Self {
        Rotation(UnitQuaternion::from_axis_angle(&axis.unit(), angle))
    }

    /// Rotation vector with angle in `[0, π]`.
    pub fn to_axis_angle(&self) -> Vector3<f64> {
        let q = self.canonical();
        q.scaled_axis()
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = Rotation3::from_matrix_unchecked(*m);
        Rotation(UnitQuaternion::from_rotation_matrix(&r))
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        *self.0.to_rotation_matrix().matrix()
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// `[w, x, y, z]` with `w >= 0`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.canonical();
        [q.w, q.i, q.j, q.k]
    }

    fn canonical(&self) -> UnitQuaternion<f64> {
        if self.0.w < 0.0 {
            UnitQuaternion::new_unchecked(-self.0.into_inner())
        } else {
            self.0
        }
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.as_ref();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    /// First two columns of the rotation matrix, column-major.
    pub fn to_6d(&self) -> [f64; 6] {
        let m = self.to_matrix();
        [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
    }

    /// Inverse of [`Rotation::to_6d`]; the columns are re-orthonormalized.
    pub fn from_6d(r: &[f64; 6]) -> Self {
        let a = Vector3::new(r[0], r[1], r[2]);
        let b = Vector3::new(r[3], r[4], r[5]);
        let c0 = a.normalize();
        let c1 = (b - c0 * c0.dot(&b)).normalize();
        let c2 = c0.cross(&c1);
        Self::from_matrix(&Matrix3::from_columns(&[c0, c1, c2]))
    }

    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        geodesic_distance(self, other) <= tol
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        let a = self.0.as_ref();
        let b = other.0.as_ref();
        a == b || *a == -*b
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(UnitQuaternion::new_normalize((self.0 * rhs.0).into_inner()))
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Serialize for Rotation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.wxyz().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(serde::de::Error::custom("quaternion must be finite and nonzero"));
        }
        // already-unit values are kept verbatim so files round-trip bit for bit
        if (n - 1.0).abs() < 1e-12 {
            return Ok(Rotation(UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))));
        }
        Ok(Rotation::from_wxyz(w, x, y, z))
    }
}

/// Angle of the relative rotation `a⁻¹ b`, in `[0, π]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    (a.inverse() * *b).angle()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> nalgebra::Unit<Vector3<f64>> {
        match self {
            Axis::X => Vector3::x_axis(),
            Axis::Y => Vector3::y_axis(),
            Axis::Z => Vector3::z_axis(),
        }
    }

    fn order(self) -> u8 {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }
}

/// Rigid transform: rotation followed by translation.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
}

impl Transform {
    pub fn new(rotation: Rotation, position: Vector3<f64>) -> Self {
        Transform { rotation, position }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.position
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Transform { rotation: inv, position: -inv.rotate(&self.position) }
    }

    pub fn compose(&self, other: &Transform) -> Transform {
        Transform { rotation: self.rotation * other.rotation, position: self.apply(&other.position) }
    }
}

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    /// World-to-camera rotation.
    pub rotation: Rotation,
    /// World-to-camera translation (meters).
    pub translation: Vector3<f64>,
}

impl CameraModel {
    /// Default intrinsics: `f = W / 2`, principal point at the image center.
    pub fn new(width: f64, height: f64, rotation: Rotation, translation: Vector3<f64>) -> Self {
        CameraModel { focal: width / 2.0, cx: width / 2.0, cy: height / 2.0, width, height, rotation, translation }
    }

    /// Camera at `eye` looking at `target` with world `up` pointing to the top of the image.
    pub fn look_at(width: f64, height: f64, eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = Rotation::from_matrix(&rot);
        let translation = -rotation.rotate(&eye);
        Self::new(width, height, rotation, translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.inverse().rotate(&self.translation)
    }

    pub fn project_camera_frame(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if !(pc.z > MIN_DEPTH) {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        Ok(Vector2::new(self.focal * pc.x / pc.z + self.cx, self.focal * pc.y / pc.z + self.cy))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        self.project_camera_frame(&self.to_camera(p))
    }

    /// World point at camera-frame depth `depth` on the ray through `pixel`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let pc = Vector3::new((pixel.x - self.cx) / self.focal * depth, (pixel.y - self.cy) / self.focal * depth, depth);
        self.rotation.inverse().rotate(&(pc - self.translation))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width && px.y >= 0.0 && px.y <= self.height
    }

    pub fn diagonal(&self) -> f64 {
        (self.width * self.width + self.height * self.height).sqrt()
    }
}

/// Mean over `a` of the squared distance to the nearest point of `b`.
pub fn one_sided_chamfer(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptySet);
    }
    let sum: f64 = a.iter().map(|p| nearest_squared(p, b).1).sum();
    Ok(sum / a.len() as f64)
}

/// Index and squared distance of the nearest point in a nonempty set. Ties go to the lower index.
pub fn nearest_squared(p: &Vector3<f64>, set: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Body,
    Hand,
}

/// One revolute degree of freedom with limits in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dof {
    pub axis: Axis,
    pub lower: f64,
    pub upper: f64,
}

impl Dof {
    pub fn new(axis: Axis, lower: f64, upper: f64) -> Self {
        Dof { axis, lower, upper }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn half_range(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, in the parent's frame (meters).
    pub offset: Vector3<f64>,
    /// Hinges applied parent-side first. Axes must follow the z, y, x order.
    #[serde(default)]
    pub dofs: Vec<Dof>,
    pub kind: JointKind,
}

/// Articulated kinematic tree. Joint 0 is the root; parents precede children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SkeletonDef", into = "SkeletonDef")]
pub struct Skeleton {
    joints: Vec<Joint>,
    fingertips: Vec<usize>,
    wrists: [usize; 2],
    dof_start: Vec<usize>,
    children: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonDef {
    joints: Vec<Joint>,
    fingertips: Vec<usize>,
    wrists: [usize; 2],
}

impl TryFrom<SkeletonDef> for Skeleton {
    type Error = GeometryError;
    fn try_from(d: SkeletonDef) -> Result<Self, Self::Error> {
        Skeleton::new(d.joints, d.fingertips, d.wrists)
    }
}

impl From<Skeleton> for SkeletonDef {
    fn from(s: Skeleton) -> Self {
        SkeletonDef { joints: s.joints, fingertips: s.fingertips, wrists: s.wrists }
    }
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, fingertips: Vec<usize>, wrists: [usize; 2]) -> Result<Self, GeometryError> {
        let n = joints.len();
        if n == 0 {
            return Err(GeometryError::InvalidSkeleton("no joints".into()));
        }
        if joints[0].parent.is_some() {
            return Err(GeometryError::InvalidSkeleton("joint 0 must be the root".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (j, joint) in joints.iter().enumerate().skip(1) {
            match joint.parent {
                Some(p) if p < j => children[p].push(j),
                _ => {
                    return Err(GeometryError::InvalidSkeleton(format!(
                        "joint {j} ({}) must have a parent with a smaller index",
                        joint.name
                    )))
                }
            }
        }
        let mut dof_start = Vec::with_capacity(n + 1);
        let mut count = 0;
        for joint in &joints {
            dof_start.push(count);
            let mut last = None;
            for d in &joint.dofs {
                if !(d.lower <= d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                    return Err(GeometryError::InvalidSkeleton(format!("joint {} has bad limits", joint.name)));
                }
                if let Some(prev) = last {
                    if d.axis.order() <= prev {
                        return Err(GeometryError::InvalidSkeleton(format!(
                            "joint {} dof axes must follow z, y, x order",
                            joint.name
                        )));
                    }
                }
                last = Some(d.axis.order());
            }
            count += joint.dofs.len();
        }
        dof_start.push(count);
        if wrists.iter().any(|&w| w >= n) || wrists[0] == wrists[1] {
            return Err(GeometryError::InvalidSkeleton("two distinct wrist joints required".into()));
        }
        if fingertips.iter().any(|&f| f >= n) {
            return Err(GeometryError::InvalidSkeleton("fingertip id out of range".into()));
        }
        Ok(Skeleton { joints, fingertips, wrists, dof_start, children })
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, j: usize) -> &Joint {
        &self.joints[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn fingertips(&self) -> &[usize] {
        &self.fingertips
    }

    /// `[left, right]`.
    pub fn wrists(&self) -> [usize; 2] {
        self.wrists
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn body_joints(&self) -> Vec<usize> {
        (0..self.joints.len()).filter(|&j| self.joints[j].kind == JointKind::Body).collect()
    }

    pub fn hand_joints(&self) -> Vec<usize> {
        (0..self.joints.len()).filter(|&j| self.joints[j].kind == JointKind::Hand).collect()
    }

    /// Ancestors of `j` from the root down to (and including) `j`.
    pub fn chain(&self, j: usize) -> Vec<usize> {
        let mut out = vec![j];
        let mut cur = j;
        while let Some(p) = self.joints[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn is_ancestor(&self, a: usize, j: usize) -> bool {
        let mut cur = j;
        while let Some(p) = self.joints[cur].parent {
            if p == a {
                return true;
            }
            cur = p;
        }
        false
    }

    /// Hand joints (plus the wrist) hanging off wrist `side` (0 left, 1 right).
    pub fn hand_of(&self, side: usize) -> Vec<usize> {
        let w = self.wrists[side];
        let mut out = vec![w];
        out.extend((0..self.joints.len()).filter(|&j| self.is_ancestor(w, j)));
        out
    }

    pub fn dof_count(&self) -> usize {
        self.dof_start[self.joints.len()]
    }

    pub fn dof_range(&self, j: usize) -> std::ops::Range<usize> {
        self.dof_start[j]..self.dof_start[j + 1]
    }

    /// Flattened limits in dof order.
    pub fn dofs(&self) -> Vec<Dof> {
        self.joints.iter().flat_map(|j| j.dofs.iter().copied()).collect()
    }

    pub fn local_rotation(&self, j: usize, angles: &[f64]) -> Rotation {
        self.joints[j].dofs.iter().zip(angles).fold(Rotation::identity(), |acc, (d, &a)| acc * Rotation::about(d.axis, a))
    }

    /// Projects a local rotation onto the joint's hinges (exact when the rotation is representable).
    pub fn angles_from_rotation(&self, j: usize, r: &Rotation) -> Vec<f64> {
        let dofs = &self.joints[j].dofs;
        if dofs.is_empty() {
            return Vec::new();
        }
        if dofs.len() == 1 {
            let axis = dofs[0].axis.unit();
            let q = r.quaternion().as_ref();
            let s = q.imag().dot(&axis);
            return vec![2.0 * s.atan2(q.w)].into_iter().map(wrap_angle).collect();
        }
        let (roll, pitch, yaw) = r.quaternion().euler_angles();
        dofs.iter()
            .map(|d| match d.axis {
                Axis::Z => yaw,
                Axis::Y => pitch,
                Axis::X => roll,
            })
            .collect()
    }

    pub fn pose_from_angles(&self, root_translation: Vector3<f64>, root_orientation: Rotation, angles: &[f64]) -> Pose {
        let local = (0..self.joints.len()).map(|j| self.local_rotation(j, &angles[self.dof_range(j)])).collect();
        Pose { root_translation, root_orientation, local }
    }

    pub fn angles_from_pose(&self, pose: &Pose) -> Vec<f64> {
        (0..self.joints.len()).flat_map(|j| self.angles_from_rotation(j, &pose.local[j])).collect()
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::identity(self.joints.len())
    }

    /// Default desk skeleton: 13 body joints and 2 × 6 finger joints, arms hanging along -z,
    /// facing +y, with the right side on +x.
    pub fn desk() -> Self {
        use std::f64::consts::PI;
        let mut joints = Vec::new();
        let mut push = |name: &str, parent: Option<usize>, offset: [f64; 3], dofs: Vec<Dof>, kind: JointKind| {
            joints.push(Joint { name: name.into(), parent, offset: Vector3::from(offset), dofs, kind });
            joints.len() - 1
        };
        let b = JointKind::Body;
        let pelvis = push("pelvis", None, [0.0, 0.0, 0.0], vec![], b);
        let spine1 = push(
            "spine1",
            Some(pelvis),
            [0.0, 0.0, 0.10],
            vec![Dof::new(Axis::Z, -0.5, 0.5), Dof::new(Axis::Y, -0.4, 0.4), Dof::new(Axis::X, -0.7, 0.3)],
            b,
        );
        let spine2 = push(
            "spine2",
            Some(spine1),
            [0.0, 0.0, 0.15],
            vec![Dof::new(Axis::Z, -0.4, 0.4), Dof::new(Axis::Y, -0.3, 0.3), Dof::new(Axis::X, -0.5, 0.3)],
            b,
        );
        let neck = push("neck", Some(spine2), [0.0, 0.0, 0.22], vec![Dof::new(Axis::Z, -0.8, 0.8), Dof::new(Axis::X, -0.6, 0.6)], b);
        push("head", Some(neck), [0.0, 0.0, 0.10], vec![], b);
        let mut wrists = [0; 2];
        let mut fingertips = Vec::new();
        let mut hand_roots = [0; 2];
        for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
            let p = if side == 0 { "l_" } else { "r_" };
            let clav = push(&format!("{p}clavicle"), Some(spine2), [0.03 * sign, 0.0, 0.18], vec![Dof::new(Axis::Y, -0.3, 0.3)], b);
            let (ab_lo, ab_hi) = if sign < 0.0 { (-0.4, 1.6) } else { (-1.6, 0.4) };
            let shoulder = push(
                &format!("{p}shoulder"),
                Some(clav),
                [0.14 * sign, 0.0, 0.0],
                vec![Dof::new(Axis::Z, -1.2, 1.2), Dof::new(Axis::Y, ab_lo, ab_hi), Dof::new(Axis::X, -1.0, 2.2)],
                b,
            );
            let elbow = push(&format!("{p}elbow"), Some(shoulder), [0.0, 0.0, -0.27], vec![Dof::new(Axis::X, 0.0, 2.4)], b);
            let wrist = push(
                &format!("{p}wrist"),
                Some(elbow),
                [0.0, 0.0, -0.25],
                vec![Dof::new(Axis::Z, -1.2, 1.2), Dof::new(Axis::Y, -0.6, 0.6), Dof::new(Axis::X, -1.0, 1.0)],
                b,
            );
            wrists[side] = wrist;
            hand_roots[side] = wrist;
        }
        for side in 0..2 {
            let sign = if side == 0 { -1.0 } else { 1.0 };
            let p = if side == 0 { "l_" } else { "r_" };
            for (f, dx) in [-0.025, 0.0, 0.025].iter().enumerate() {
                let knuckle = push(
                    &format!("{p}finger{f}_base"),
                    Some(hand_roots[side]),
                    [dx * sign, 0.0, -0.08],
                    vec![Dof::new(Axis::X, -0.3, PI / 2.0)],
                    JointKind::Hand,
                );
                let tip = push(
                    &format!("{p}finger{f}_tip"),
                    Some(knuckle),
                    [0.0, 0.0, -0.04],
                    vec![Dof::new(Axis::X, 0.0, 1.6)],
                    JointKind::Hand,
                );
                fingertips.push(tip);
            }
        }
        Skeleton::new(joints, fingertips, wrists).expect("desk skeleton is valid")
    }
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x < -PI {
        x += 2.0 * PI;
    }
    x
}

/// Root placement plus one local rotation per joint. The root slot of `local` is unused:
/// the root's world rotation is `root_orientation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root_translation: Vector3<f64>,
    pub root_orientation: Rotation,
    pub local: Vec<Rotation>,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Pose { root_translation: Vector3::zeros(), root_orientation: Rotation::identity(), local: vec![Rotation::identity(); joints] }
    }

    pub fn is_finite(&self) -> bool {
        self.root_translation.iter().all(|v| v.is_finite())
            && self.local.iter().chain(std::iter::once(&self.root_orientation)).all(|r| r.wxyz().iter().all(|v| v.is_finite()))
    }
}

/// World transform of every joint.
pub fn forward_kinematics(skel: &Skeleton, pose: &Pose) -> Result<Vec<Transform>, GeometryError> {
    let n = skel.joint_count();
    if pose.local.len() != n {
        return Err(GeometryError::ShapeMismatch(format!("pose has {} rotations, skeleton has {n} joints", pose.local.len())));
    }
    let mut out: Vec<Transform> = Vec::with_capacity(n);
    out.push(Transform::new(pose.root_orientation, pose.root_translation));
    for j in 1..n {
        let joint = &skel.joints[j];
        let parent = out[joint.parent.expect("non-root joint has a parent")];
        out.push(Transform {
            rotation: parent.rotation * pose.local[j],
            position: parent.position + parent.rotation.rotate(&joint.offset),
        });
    }
    Ok(out)
}

/// Joint positions only.
pub fn joint_positions(skel: &Skeleton, pose: &Pose) -> Result<Vec<Vector3<f64>>, GeometryError> {
    Ok(forward_kinematics(skel, pose)?.into_iter().map(|t| t.position).collect())
}
