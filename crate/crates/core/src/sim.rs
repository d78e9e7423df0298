//! Deterministic fixed-timestep simulator: a fixed-base PD-actuated humanoid in hinge
//! coordinates, one free rigid object, a static table and a ground plane.
//!
//! Each substep solves one linear system over the humanoid's joint velocities and the object's
//! twist. PD springs, contact springs/dampers and regularized Coulomb friction are treated
//! implicitly in velocity, which keeps stiff gains and light finger links stable.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{forward_kinematics, JointKind, Pose, Rotation, Skeleton, Transform};
use crate::mesh::{MeshError, TriMesh};
use crate::scenario::{Scenario, TableSpec, FINGERTIP_RADIUS, FINGERTIP_SITE, PALM_SITE};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation diverged at t = {0:.4} s")]
    NonFiniteState(f64),
    #[error("penetration of {depth:.4} m at reset exceeds {limit} m")]
    PenetrationAtReset { depth: f64, limit: f64 },
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("action has {got} entries, expected {expected}")]
    ActionShape { got: usize, expected: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Penetration allowed when placing the humanoid at a reference frame.
pub const RESET_PENETRATION_LIMIT: f64 = 0.005;
/// Contact sensors per hand: palm then fingertips.
pub const SENSORS_PER_HAND: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsParams {
    pub gravity: Vector3<f64>,
    /// Control step (seconds).
    pub dt: f64,
    pub substeps: usize,
    pub friction: f64,
    /// Penalty contact stiffness (N/m) and damping (N·s/m), per contact point.
    pub stiffness: f64,
    pub damping: f64,
    /// Tangential speed below which friction turns viscous (m/s).
    pub slip_velocity: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            gravity: Vector3::new(0.0, 0.0, -9.81),
            dt: 1.0 / 60.0,
            substeps: 4,
            friction: 0.6,
            stiffness: 1e4,
            damping: 1e2,
            slip_velocity: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub body_kp: f64,
    pub body_kd: f64,
    pub hand_kp: f64,
    pub hand_kd: f64,
    pub body_torque_limit: f64,
    pub hand_torque_limit: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        PdGains { body_kp: 2000.0, body_kd: 60.0, hand_kp: 10.0, hand_kd: 0.1, body_torque_limit: 1000.0, hand_torque_limit: 5.0 }
    }
}

/// Mass properties of the link driven by a joint. Inertia is isotropic about the center of mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub mass: f64,
    /// Center of mass in the joint frame.
    pub com: Vector3<f64>,
    pub inertia: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSphere {
    pub joint: usize,
    pub offset: Vector3<f64>,
    pub radius: f64,
    /// (hand side, sensor slot)
    pub sensor: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Humanoid {
    pub skeleton: Skeleton,
    pub root: Transform,
    pub links: Vec<LinkParams>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub torque_limit: Vec<f64>,
    pub spheres: Vec<ContactSphere>,
    /// Dofs moving each joint (ancestors' and its own), root first.
    pub chains: Vec<Vec<usize>>,
}

const LINK_DENSITY: f64 = 1000.0;

impl Humanoid {
    /// Links as solid rods along the mean child offset; hand spheres at the palm and fingertips.
    pub fn from_skeleton(skeleton: Skeleton, root: Transform, gains: &PdGains) -> Self {
        let n = skeleton.joint_count();
        let mut links = Vec::with_capacity(n);
        for j in 0..n {
            let kids = skeleton.children(j);
            let mean = if kids.is_empty() {
                Vector3::zeros()
            } else {
                kids.iter().map(|&c| skeleton.joint(c).offset).sum::<Vector3<f64>>() / kids.len() as f64
            };
            let length = if kids.is_empty() { 0.05 } else { mean.norm().max(0.02) };
            let radius = if skeleton.joint(j).kind == JointKind::Hand { 0.008 } else { 0.04 };
            let mass = LINK_DENSITY * std::f64::consts::PI * radius * radius * length;
            let inertia = mass * (3.0 * radius * radius + length * length) / 12.0;
            links.push(LinkParams { mass, com: 0.5 * mean, inertia });
        }
        let mut kp = Vec::new();
        let mut kd = Vec::new();
        let mut torque_limit = Vec::new();
        for joint in skeleton.joints() {
            for _ in &joint.dofs {
                let hand = joint.kind == JointKind::Hand;
                kp.push(if hand { gains.hand_kp } else { gains.body_kp });
                kd.push(if hand { gains.hand_kd } else { gains.body_kd });
                torque_limit.push(if hand { gains.hand_torque_limit } else { gains.body_torque_limit });
            }
        }
        let mut spheres = Vec::new();
        for side in 0..2 {
            let wrist = skeleton.wrists()[side];
            spheres.push(ContactSphere { joint: wrist, offset: Vector3::from(PALM_SITE), radius: 0.025, sensor: Some((side, 0)) });
            let tips: Vec<usize> = skeleton.fingertips().iter().copied().filter(|&t| skeleton.is_ancestor(wrist, t)).collect();
            for (k, &tip) in tips.iter().enumerate().take(SENSORS_PER_HAND - 1) {
                spheres.push(ContactSphere { joint: tip, offset: Vector3::from(FINGERTIP_SITE), radius: FINGERTIP_RADIUS, sensor: Some((side, k + 1)) });
            }
        }
        let chains = (0..n)
            .map(|j| skeleton.chain(j).into_iter().filter(|&a| skeleton.parent(a).is_some()).flat_map(|a| skeleton.dof_range(a)).collect())
            .collect();
        Humanoid { skeleton, root, links, kp, kd, torque_limit, spheres, chains }
    }

    pub fn dof_count(&self) -> usize {
        self.skeleton.dof_count()
    }
}

/// Convex collision proxy: supporting planes (outward normal, offset) and corner vertices,
/// in the body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexProxy {
    pub planes: Vec<(Vector3<f64>, f64)>,
    pub corners: Vec<Vector3<f64>>,
}

impl ConvexProxy {
    /// Hull faces of the mesh are those with every vertex on their inner side; corners are
    /// vertices touching at least three distinct hull planes. Exact for convex meshes.
    pub fn from_mesh(mesh: &TriMesh) -> Self {
        let scale = mesh.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-9);
        let tol = 1e-9 * scale;
        let mut planes: Vec<(Vector3<f64>, f64)> = Vec::new();
        for f in 0..mesh.faces.len() {
            let n = mesh.face_normal(f);
            if n.norm() < 1e-15 {
                continue;
            }
            let n = n.normalize();
            let d = n.dot(&mesh.vertices[mesh.faces[f][0]]);
            if mesh.vertices.iter().all(|v| n.dot(v) <= d + tol) && !planes.iter().any(|(m, e)| (m - n).norm() < 1e-9 && (e - d).abs() < tol) {
                planes.push((n, d));
            }
        }
        let corners = mesh
            .vertices
            .iter()
            .copied()
            .filter(|v| planes.iter().filter(|(n, d)| (n.dot(v) - d).abs() <= tol).count() >= 3)
            .collect();
        ConvexProxy { planes, corners }
    }

    /// Largest plane distance and its plane: the signed distance inside, a lower bound outside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, (n, d)) in self.planes.iter().enumerate() {
            let s = n.dot(p) - d;
            if s > best.0 {
                best = (s, i);
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidObject {
    pub mesh: TriMesh,
    pub proxy: ConvexProxy,
    pub mass: f64,
    /// Principal inertia in the body frame (body axes are principal).
    pub inertia: Vector3<f64>,
}

impl RigidObject {
    /// Inertia from the proxy's bounding box as a solid box of the given mass.
    pub fn new(mesh: TriMesh, mass: f64) -> Self {
        let proxy = ConvexProxy::from_mesh(&mesh);
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for v in &mesh.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let e = hi - lo;
        let inertia = Vector3::new(e.y * e.y + e.z * e.z, e.x * e.x + e.z * e.z, e.x * e.x + e.y * e.y) * mass / 12.0;
        RigidObject { mesh, proxy, mass, inertia }
    }
}

/// Axis-aligned static box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticBox {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl StaticBox {
    pub fn from_table(t: &TableSpec) -> Self {
        let c = Vector3::new(t.center[0], t.center[1], 0.0);
        StaticBox { min: c - Vector3::new(t.dims.x / 2.0, t.dims.y / 2.0, 0.0), max: c + Vector3::new(t.dims.x / 2.0, t.dims.y / 2.0, t.dims.z) }
    }

    /// Signed distance (inside negative) and outward normal of the nearest face, for points
    /// inside or within `margin` of the box.
    fn query(&self, p: &Vector3<f64>, margin: f64) -> Option<(f64, Vector3<f64>)> {
        let mut best = (f64::NEG_INFINITY, Vector3::zeros());
        for k in 0..3 {
            let mut n = Vector3::zeros();
            n[k] = 1.0;
            let hi = p[k] - self.max[k];
            if hi > best.0 {
                best = (hi, n);
            }
            let lo = self.min[k] - p[k];
            if lo > best.0 {
                best = (lo, -n);
            }
        }
        if best.0 < margin {
            Some(best)
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsWorld {
    pub params: PhysicsParams,
    pub humanoid: Humanoid,
    pub object: RigidObject,
    pub object_initial: Transform,
    pub table: Option<StaticBox>,
    pub ground: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Vector3<f64>,
    pub orientation: Rotation,
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl ObjectState {
    pub fn at_rest(pose: &Transform) -> Self {
        ObjectState { position: pose.position, orientation: pose.rotation, linear: Vector3::zeros(), angular: Vector3::zeros() }
    }

    pub fn transform(&self) -> Transform {
        Transform::new(self.orientation, self.position)
    }

    /// Position, 6D orientation, linear and angular velocity.
    pub fn to_vector(&self) -> [f64; 15] {
        let mut out = [0.0; 15];
        out[..3].copy_from_slice(self.position.as_slice());
        out[3..9].copy_from_slice(&self.orientation.to_6d());
        out[9..12].copy_from_slice(self.linear.as_slice());
        out[12..].copy_from_slice(self.angular.as_slice());
        out
    }

    /// Inverse of [`ObjectState::to_vector`]; the 6D part is re-orthonormalized.
    pub fn from_vector(v: &[f64; 15]) -> Self {
        let mut r = [0.0; 6];
        r.copy_from_slice(&v[3..9]);
        ObjectState {
            position: Vector3::new(v[0], v[1], v[2]),
            orientation: Rotation::from_6d(&r),
            linear: Vector3::new(v[9], v[10], v[11]),
            angular: Vector3::new(v[12], v[13], v[14]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    /// Hinge angles and rates of the humanoid.
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub object: ObjectState,
    /// Mean contact-force magnitude per sensor over the last step (N), `[hand][slot]`.
    pub sensors: [[f64; SENSORS_PER_HAND]; 2],
}

/// Normalized PD targets, one per hinge.
#[derive(Clone, Debug, PartialEq)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn zeros(n: usize) -> Self {
        Action(vec![0.0; n])
    }

    /// Clamps to [-1, 1] and maps linearly onto each dof's limits.
    pub fn targets(&self, skel: &Skeleton) -> Vec<f64> {
        skel.dofs().iter().zip(&self.0).map(|(d, &a)| d.mid() + a.clamp(-1.0, 1.0) * d.half_range()).collect()
    }

    /// Inverse of [`Action::targets`].
    pub fn from_targets(skel: &Skeleton, targets: &[f64]) -> Self {
        Action(skel.dofs().iter().zip(targets).map(|(d, &q)| if d.half_range() > 0.0 { (q - d.mid()) / d.half_range() } else { 0.0 }).collect())
    }
}

/// World-frame kinematics of every joint.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyKinematics {
    pub frames: Vec<Transform>,
    pub linear: Vec<Vector3<f64>>,
    pub angular: Vec<Vector3<f64>>,
}

impl BodyKinematics {
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.position).collect()
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Per-substep kinematic quantities of the humanoid.
struct Kin {
    /// Joint pivot positions and rotations.
    pos: Vec<Vector3<f64>>,
    rot: Vec<Rotation>,
    /// World hinge axes.
    axis: Vec<Vector3<f64>>,
    /// Joint owning each dof.
    owner: Vec<usize>,
    com: Vec<Vector3<f64>>,
    omega: Vec<Vector3<f64>>,
    vel: Vec<Vector3<f64>>,
}

struct Contact {
    /// Relative-velocity Jacobian (3 × N).
    jac: DMatrix<f64>,
    normal: Vector3<f64>,
    depth: f64,
    sensor: Option<(usize, usize)>,
}

impl PhysicsWorld {
    pub fn new(params: PhysicsParams, humanoid: Humanoid, object: RigidObject, object_initial: Transform, table: Option<StaticBox>, ground: Option<f64>) -> Result<Self, SimError> {
        let world = PhysicsWorld { params, humanoid, object, object_initial, table, ground };
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidWorld(m.into()));
        if !(self.params.dt > 0.0) || self.params.substeps == 0 {
            return bad("dt must be positive with at least one substep");
        }
        if !(self.object.mass > 0.0) || self.humanoid.links.iter().any(|l| !(l.mass > 0.0)) {
            return bad("masses must be positive");
        }
        if self.params.stiffness < 0.0 || self.params.damping < 0.0 || self.params.friction < 0.0 {
            return bad("contact parameters must be nonnegative");
        }
        let n = self.humanoid.dof_count();
        if self.humanoid.kp.len() != n || self.humanoid.kd.len() != n || self.humanoid.torque_limit.len() != n {
            return bad("gain vectors must have one entry per dof");
        }
        if self.humanoid.links.len() != self.humanoid.skeleton.joint_count() {
            return bad("one link per joint required");
        }
        Ok(())
    }

    pub fn dof_count(&self) -> usize {
        self.humanoid.dof_count()
    }

    /// Builds the desk world from a scenario.
    pub fn from_scenario(scenario: &Scenario, params: PhysicsParams, gains: &PdGains) -> Result<Self, SimError> {
        let root = Transform::new(scenario.root_orientation, scenario.root_translation);
        let humanoid = Humanoid::from_skeleton(scenario.skeleton.clone(), root, gains);
        let object = RigidObject::new(scenario.object_mesh(), scenario.object.mass);
        PhysicsWorld::new(params, humanoid, object, scenario.object_initial_pose(), Some(StaticBox::from_table(&scenario.table)), Some(0.0))
    }

    pub fn pose_of(&self, q: &[f64]) -> Pose {
        self.humanoid.skeleton.pose_from_angles(self.humanoid.root.position, self.humanoid.root.rotation, q)
    }

    /// Humanoid at `pose` with zero velocity (or the given hinge rates) and the object at its
    /// initial pose, at rest.
    pub fn reset(&self, pose: &Pose, velocities: Option<&[f64]>) -> Result<SimState, SimError> {
        let n = self.dof_count();
        let q = self.humanoid.skeleton.angles_from_pose(pose);
        let qd = match velocities {
            Some(v) if v.len() == n => v.to_vec(),
            Some(v) => return Err(SimError::ActionShape { got: v.len(), expected: n }),
            None => vec![0.0; n],
        };
        let state = SimState { time: 0.0, q, qd, object: ObjectState::at_rest(&self.object_initial), sensors: [[0.0; SENSORS_PER_HAND]; 2] };
        let depth = self.max_penetration(&state);
        if depth > RESET_PENETRATION_LIMIT {
            return Err(SimError::PenetrationAtReset { depth, limit: RESET_PENETRATION_LIMIT });
        }
        Ok(state)
    }

    pub fn max_penetration(&self, state: &SimState) -> f64 {
        let kin = self.kinematics_internal(&state.q, &state.qd);
        self.contacts(&kin, &state.object).iter().map(|c| c.depth).fold(0.0, f64::max)
    }

    /// Joint frames and velocities.
    pub fn body_kinematics(&self, state: &SimState) -> BodyKinematics {
        let kin = self.kinematics_internal(&state.q, &state.qd);
        BodyKinematics {
            frames: kin.pos.iter().zip(&kin.rot).map(|(p, r)| Transform::new(*r, *p)).collect(),
            linear: kin.vel,
            angular: kin.omega,
        }
    }

    pub fn read_contact_forces(&self, state: &SimState) -> [[f64; SENSORS_PER_HAND]; 2] {
        state.sensors
    }

    /// World positions of the contact spheres.
    pub fn sphere_centers(&self, state: &SimState) -> Vec<Vector3<f64>> {
        let pose = self.pose_of(&state.q);
        let fk = forward_kinematics(&self.humanoid.skeleton, &pose).expect("state matches skeleton");
        self.humanoid.spheres.iter().map(|s| fk[s.joint].apply(&s.offset)).collect()
    }

    fn kinematics_internal(&self, q: &[f64], qd: &[f64]) -> Kin {
        let h = &self.humanoid;
        let skel = &h.skeleton;
        let n = skel.joint_count();
        let mut k = Kin {
            pos: Vec::with_capacity(n),
            rot: Vec::with_capacity(n),
            axis: vec![Vector3::zeros(); skel.dof_count()],
            owner: vec![0; skel.dof_count()],
            com: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            vel: Vec::with_capacity(n),
        };
        for j in 0..n {
            let joint = skel.joint(j);
            let (p, mut r, mut w, v) = match joint.parent {
                None => (h.root.position, h.root.rotation, Vector3::zeros(), Vector3::zeros()),
                Some(pa) => {
                    let p = k.pos[pa] + k.rot[pa].rotate(&joint.offset);
                    (p, k.rot[pa], k.omega[pa], k.vel[pa] + k.omega[pa].cross(&(p - k.pos[pa])))
                }
            };
            if joint.parent.is_some() {
                for (i, d) in skel.dof_range(j).zip(&joint.dofs) {
                    let a = r.rotate(&d.axis.unit());
                    k.axis[i] = a;
                    k.owner[i] = j;
                    w += a * qd[i];
                    r = r * Rotation::about(d.axis, q[i]);
                }
            }
            k.com.push(p + r.rotate(&h.links[j].com));
            k.pos.push(p);
            k.rot.push(r);
            k.omega.push(w);
            k.vel.push(v);
        }
        k
    }

    /// Joint-space mass matrix.
    fn mass_matrix(&self, kin: &Kin) -> DMatrix<f64> {
        let nd = self.dof_count();
        let mut m = DMatrix::zeros(nd, nd);
        for (j, link) in self.humanoid.links.iter().enumerate() {
            let dofs = &self.humanoid.chains[j];
            let cols: Vec<(Vector3<f64>, Vector3<f64>)> = dofs.iter().map(|&d| (kin.axis[d].cross(&(kin.com[j] - kin.pos[kin.owner[d]])), kin.axis[d])).collect();
            for (a, &da) in dofs.iter().enumerate() {
                for (b, &db) in dofs.iter().enumerate().skip(a) {
                    let v = link.mass * cols[a].0.dot(&cols[b].0) + link.inertia * cols[a].1.dot(&cols[b].1);
                    m[(da, db)] += v;
                    if a != b {
                        m[(db, da)] += v;
                    }
                }
            }
        }
        m
    }

    /// Inverse dynamics: joint forces needed for accelerations `qdd` under gravity.
    pub fn inverse_dynamics(&self, q: &[f64], qd: &[f64], qdd: &[f64]) -> Vec<f64> {
        let kin = self.kinematics_internal(q, qd);
        self.rnea(&kin, qd, qdd)
    }

    fn rnea(&self, kin: &Kin, qd: &[f64], qdd: &[f64]) -> Vec<f64> {
        let skel = &self.humanoid.skeleton;
        let n = skel.joint_count();
        let g = self.params.gravity;
        let mut alpha = vec![Vector3::zeros(); n];
        let mut acc = vec![Vector3::zeros(); n];
        let mut force = vec![Vector3::zeros(); n];
        let mut moment = vec![Vector3::zeros(); n];
        for j in 0..n {
            let Some(pa) = skel.parent(j) else { continue };
            let r = kin.pos[j] - kin.pos[pa];
            acc[j] = acc[pa] + alpha[pa].cross(&r) + kin.omega[pa].cross(&kin.omega[pa].cross(&r));
            let mut w = kin.omega[pa];
            let mut al = alpha[pa];
            for i in skel.dof_range(j) {
                let s = kin.axis[i] * qd[i];
                al += kin.axis[i] * qdd[i] + w.cross(&s);
                w += s;
            }
            alpha[j] = al;
        }
        for (j, link) in self.humanoid.links.iter().enumerate() {
            let rc = kin.com[j] - kin.pos[j];
            let ac = acc[j] + alpha[j].cross(&rc) + kin.omega[j].cross(&kin.omega[j].cross(&rc));
            let f = link.mass * (ac - g);
            force[j] = f;
            moment[j] = kin.com[j].cross(&f) + link.inertia * alpha[j];
        }
        for j in (1..n).rev() {
            let pa = skel.parent(j).expect("non-root");
            let (f, m) = (force[j], moment[j]);
            force[pa] += f;
            moment[pa] += m;
        }
        let mut tau = vec![0.0; self.dof_count()];
        for (i, t) in tau.iter_mut().enumerate() {
            let j = kin.owner[i];
            *t = kin.axis[i].dot(&(moment[j] - kin.pos[j].cross(&force[j])));
        }
        tau
    }

    fn contacts(&self, kin: &Kin, obj: &ObjectState) -> Vec<Contact> {
        let nd = self.dof_count();
        let n = nd + 6;
        let mut out = Vec::new();
        let xo = obj.position;
        let ro = obj.orientation;
        let roi = ro.inverse();
        let point_jac = |joint: usize, x: &Vector3<f64>, jac: &mut DMatrix<f64>| {
            for &d in &self.humanoid.chains[joint] {
                let c = kin.axis[d].cross(&(x - kin.pos[kin.owner[d]]));
                jac.fixed_view_mut::<3, 1>(0, d).copy_from(&c);
            }
        };
        for s in &self.humanoid.spheres {
            let x = kin.pos[s.joint] + kin.rot[s.joint].rotate(&s.offset);
            // sphere vs object proxy
            let local = roi.rotate(&(x - xo));
            let (sd, plane) = self.object.proxy.signed_distance(&local);
            if sd < s.radius {
                let normal = ro.rotate(&self.object.proxy.planes[plane].0);
                let contact_point = x - normal * sd;
                let mut jac = DMatrix::zeros(3, n);
                point_jac(s.joint, &contact_point, &mut jac);
                let r = contact_point - xo;
                jac.fixed_view_mut::<3, 3>(0, nd).copy_from(&(-Matrix3::identity()));
                jac.fixed_view_mut::<3, 3>(0, nd + 3).copy_from(&skew(&r));
                out.push(Contact { jac, normal, depth: s.radius - sd, sensor: s.sensor });
            }
            for (sd, normal) in self.static_queries(&x, s.radius) {
                let mut jac = DMatrix::zeros(3, n);
                point_jac(s.joint, &(x - normal * sd), &mut jac);
                out.push(Contact { jac, normal, depth: s.radius - sd, sensor: s.sensor });
            }
        }
        for c in &self.object.proxy.corners {
            let x = xo + ro.rotate(c);
            for (sd, normal) in self.static_queries(&x, 0.0) {
                let mut jac = DMatrix::zeros(3, n);
                jac.fixed_view_mut::<3, 3>(0, nd).copy_from(&Matrix3::identity());
                jac.fixed_view_mut::<3, 3>(0, nd + 3).copy_from(&(-skew(&(x - xo))));
                out.push(Contact { jac, normal, depth: -sd, sensor: None });
            }
        }
        out
    }

    /// Table and ground contacts of a point with clearance `radius`.
    fn static_queries(&self, x: &Vector3<f64>, radius: f64) -> Vec<(f64, Vector3<f64>)> {
        let mut out = Vec::new();
        if let Some(table) = &self.table {
            if let Some(hit) = table.query(x, radius) {
                out.push(hit);
            }
        }
        if let Some(z) = self.ground {
            let sd = x.z - z;
            if sd < radius {
                out.push((sd, Vector3::z()));
            }
        }
        out
    }

    /// Advances one control step.
    pub fn step(&self, state: &SimState, action: &Action) -> Result<SimState, SimError> {
        let nd = self.dof_count();
        if action.0.len() != nd {
            return Err(SimError::ActionShape { got: action.0.len(), expected: nd });
        }
        if action.0.iter().any(|a| !a.is_finite()) {
            return Err(SimError::NonFiniteState(state.time));
        }
        let targets = action.targets(&self.humanoid.skeleton);
        let mut s = state.clone();
        let mut sensors = [[0.0; SENSORS_PER_HAND]; 2];
        let substeps = self.params.substeps;
        for _ in 0..substeps {
            let impulses = self.substep(&mut s, &targets)?;
            for (side, slot, f) in impulses {
                sensors[side][slot] += f / substeps as f64;
            }
        }
        s.sensors = sensors;
        s.time = state.time + self.params.dt;
        Ok(s)
    }

    fn substep(&self, s: &mut SimState, targets: &[f64]) -> Result<Vec<(usize, usize, f64)>, SimError> {
        let p = &self.params;
        let h = p.dt / p.substeps as f64;
        let hum = &self.humanoid;
        let nd = self.dof_count();
        let n = nd + 6;
        let kin = self.kinematics_internal(&s.q, &s.qd);

        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (nd, nd)).copy_from(&self.mass_matrix(&kin));
        let rot = s.object.orientation.to_matrix();
        let inertia = rot * Matrix3::from_diagonal(&self.object.inertia) * rot.transpose();
        for i in 0..3 {
            a[(nd + i, nd + i)] = self.object.mass;
        }
        a.view_mut((nd + 3, nd + 3), (3, 3)).copy_from(&inertia);

        let mut u = DVector::zeros(n);
        for i in 0..nd {
            u[i] = s.qd[i];
        }
        u.fixed_rows_mut::<3>(nd).copy_from(&s.object.linear);
        u.fixed_rows_mut::<3>(nd + 3).copy_from(&s.object.angular);
        let mut rhs = &a * &u;

        // forces evaluated at the current state
        let mut f0 = DVector::zeros(n);
        let bias = self.rnea(&kin, &s.qd, &vec![0.0; nd]);
        for i in 0..nd {
            // a saturated spring becomes a constant torque; damping stays implicit either way
            let spring = hum.kp[i] * (targets[i] - s.q[i]);
            let limit = hum.torque_limit[i];
            if spring.abs() <= limit {
                f0[i] = spring - bias[i];
                a[(i, i)] += h * hum.kd[i] + h * h * hum.kp[i];
            } else {
                f0[i] = spring.clamp(-limit, limit) - bias[i];
                a[(i, i)] += h * hum.kd[i];
            }
        }
        f0.fixed_rows_mut::<3>(nd).copy_from(&(self.object.mass * p.gravity));
        let w = s.object.angular;
        f0.fixed_rows_mut::<3>(nd + 3).copy_from(&(-w.cross(&(inertia * w))));

        let contacts = self.contacts(&kin, &s.object);
        let mut active = Vec::with_capacity(contacts.len());
        for c in &contacts {
            let v = &c.jac * &u;
            let vn = c.normal.dot(&v.fixed_rows::<3>(0).into_owned());
            let fn_trial = p.stiffness * c.depth - p.damping * vn;
            if fn_trial <= 0.0 {
                continue;
            }
            let vt = v.fixed_rows::<3>(0).into_owned() - c.normal * vn;
            let eta = p.friction * fn_trial / vt.norm().max(p.slip_velocity);
            let nn = c.normal * c.normal.transpose();
            let local = nn * (h * p.stiffness + p.damping) + (Matrix3::identity() - nn) * eta;
            let jt = c.jac.transpose();
            a += h * &jt * DMatrix::from_column_slice(3, 3, local.as_slice()) * &c.jac;
            f0 += &jt * DVector::from_column_slice((c.normal * (p.stiffness * c.depth)).as_slice());
            active.push((c, local));
        }
        rhs += h * f0;
        let u_next = a.cholesky().ok_or(SimError::NonFiniteState(s.time))?.solve(&rhs);
        if u_next.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFiniteState(s.time));
        }

        let mut readings = Vec::new();
        for (c, local) in active {
            if let Some((side, slot)) = c.sensor {
                let v = (&c.jac * &u_next).fixed_rows::<3>(0).into_owned();
                let f = c.normal * (p.stiffness * c.depth) - local * v;
                let fn_ = f.dot(&c.normal).max(0.0);
                let ft = f - c.normal * f.dot(&c.normal);
                readings.push((side, slot, (fn_ * fn_ + ft.norm_squared()).sqrt()));
            }
        }

        let skel = &hum.skeleton;
        let dofs = skel.dofs();
        for i in 0..nd {
            let mut qd = u_next[i];
            let mut q = s.q[i] + h * qd;
            if q < dofs[i].lower {
                q = dofs[i].lower;
                qd = qd.max(0.0);
            } else if q > dofs[i].upper {
                q = dofs[i].upper;
                qd = qd.min(0.0);
            }
            s.q[i] = q;
            s.qd[i] = qd;
        }
        let v = u_next.fixed_rows::<3>(nd).into_owned();
        let w = u_next.fixed_rows::<3>(nd + 3).into_owned();
        // exact for constant gravity: x + h v + h²g/2 with v already including h g
        s.object.position += h * v - 0.5 * h * h * p.gravity;
        s.object.orientation = Rotation::from_axis_angle(&(h * w)) * s.object.orientation;
        s.object.linear = v;
        s.object.angular = w;
        if !s.object.position.iter().all(|x| x.is_finite()) {
            return Err(SimError::NonFiniteState(s.time));
        }
        Ok(readings)
    }

    /// Kinetic plus gravitational potential energy (potential zero at z = 0).
    pub fn mechanical_energy(&self, state: &SimState) -> f64 {
        let kin = self.kinematics_internal(&state.q, &state.qd);
        let g = self.params.gravity;
        let mut e = 0.0;
        for (j, link) in self.humanoid.links.iter().enumerate() {
            let v = kin.vel[j] + kin.omega[j].cross(&(kin.com[j] - kin.pos[j]));
            e += 0.5 * link.mass * v.norm_squared() + 0.5 * link.inertia * kin.omega[j].norm_squared() - link.mass * g.dot(&kin.com[j]);
        }
        let o = &state.object;
        let rot = o.orientation.to_matrix();
        let inertia = rot * Matrix3::from_diagonal(&self.object.inertia) * rot.transpose();
        e + 0.5 * self.object.mass * o.linear.norm_squared() + 0.5 * o.angular.dot(&(inertia * o.angular)) - self.object.mass * g.dot(&o.position)
    }

    /// Joint-space mass matrix at `q` (for tests and diagnostics).
    pub fn joint_mass_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let kin = self.kinematics_internal(q, &vec![0.0; q.len()]);
        self.mass_matrix(&kin)
    }
}

/// Scene file: the inputs needed to rebuild a [`PhysicsWorld`]. Paths are relative to the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub skeleton: PathBuf,
    pub object_mesh: PathBuf,
    pub object_mass: f64,
    pub object_position: Vector3<f64>,
    pub object_orientation: Rotation,
    pub root_translation: Vector3<f64>,
    pub root_orientation: Rotation,
    pub table: Option<TableSpec>,
    pub ground_height: Option<f64>,
    pub gains: PdGains,
    pub physics: PhysicsParams,
}

/// Skeleton file wrapper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFile {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub skeleton: Skeleton,
}

impl SceneConfig {
    pub fn for_scenario(scenario: &Scenario, skeleton: PathBuf, object_mesh: PathBuf) -> Self {
        let init = scenario.object_initial_pose();
        SceneConfig {
            format_version: 1,
            skeleton,
            object_mesh,
            object_mass: scenario.object.mass,
            object_position: init.position,
            object_orientation: init.rotation,
            root_translation: scenario.root_translation,
            root_orientation: scenario.root_orientation,
            table: Some(scenario.table.clone()),
            ground_height: Some(0.0),
            gains: PdGains::default(),
            physics: PhysicsParams::default(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, SimError> {
        let s: SceneConfig = toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| SimError::Parse(e.to_string()))?;
        if s.format_version != 1 {
            return Err(SimError::Parse(format!("unsupported format-version {}", s.format_version)));
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, toml::to_string(self).map_err(|e| SimError::Parse(e.to_string()))?)?;
        Ok(())
    }

    /// Loads the referenced skeleton and mesh (relative to `base`) and builds the world.
    pub fn build(&self, base: &Path) -> Result<PhysicsWorld, SimError> {
        let skel_text = std::fs::read_to_string(base.join(&self.skeleton))?;
        let skel: SkeletonFile = toml::from_str(&skel_text).map_err(|e| SimError::Parse(e.to_string()))?;
        let mesh = TriMesh::read_obj(&base.join(&self.object_mesh))?;
        let root = Transform::new(self.root_orientation, self.root_translation);
        let humanoid = Humanoid::from_skeleton(skel.skeleton, root, &self.gains);
        PhysicsWorld::new(
            self.physics.clone(),
            humanoid,
            RigidObject::new(mesh, self.object_mass),
            Transform::new(self.object_orientation, self.object_position),
            self.table.as_ref().map(StaticBox::from_table),
            self.ground_height,
        )
    }
}
