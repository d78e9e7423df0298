use hoimimic::geometry::{Axis, Dof, Joint, JointKind, Rotation, Skeleton, Transform};
use hoimimic::mesh::TriMesh;
use hoimimic::scenario::Scenario;
use hoimimic::sim::{Action, ContactSphere, Humanoid, LinkParams, ObjectState, PdGains, PhysicsParams, PhysicsWorld, RigidObject, StaticBox, SENSORS_PER_HAND};
use nalgebra::Vector3;

fn desk() -> (Scenario, PhysicsWorld) {
    let s = Scenario::desk_slide(0);
    let w = PhysicsWorld::from_scenario(&s, PhysicsParams::default(), &PdGains::default()).unwrap();
    (s, w)
}

fn hold_action(w: &PhysicsWorld, q: &[f64]) -> Action {
    Action::from_targets(&w.humanoid.skeleton, q)
}

#[test]
fn ballistic_drop() {
    let (s, mut w) = desk();
    w.table = None;
    w.ground = None;
    let pose = s.ground_truth().unwrap().poses[0].clone();
    let mut st = w.reset(&pose, None).unwrap();
    st.object.position = Vector3::new(2.0, 2.0, 5.0);
    let z0 = st.object.position.z;
    let a = hold_action(&w, &st.q);
    let steps = 30;
    for _ in 0..steps {
        st = w.step(&st, &a).unwrap();
    }
    let t = steps as f64 * w.params.dt;
    let expected = -0.5 * 9.81 * t * t;
    assert!((st.object.position.z - z0 - expected).abs() < 1e-3);
}

#[test]
fn resting_object_and_determinism() {
    let (s, w) = desk();
    let pose = s.ground_truth().unwrap().poses[0].clone();
    let st0 = w.reset(&pose, None).unwrap();
    let a = hold_action(&w, &st0.q);
    let run = || {
        let mut st = st0.clone();
        for _ in 0..60 {
            st = w.step(&st, &a).unwrap();
        }
        st
    };
    let a1 = run();
    let a2 = run();
    assert_eq!(a1, a2);
    let drift = (a1.object.position - st0.object.position).norm();
    assert!(drift < 1e-3);
}

#[test]
fn replay_ground_truth_pushes_the_box() {
    let (s, w) = desk();
    let gt = s.ground_truth().unwrap();
    let mut st = w.reset(&gt.poses[0], None).unwrap();
    let steps = ((s.frames - 1) as f64 / s.fps / w.params.dt) as usize;
    let mut max_err: f64 = 0.0;
    for k in 0..steps {
        let t = (k + 1) as f64 * w.params.dt;
        let f = gt.frame_at(t);
        st = w.step(&st, &hold_action(&w, &gt.angles[f])).unwrap();
        let kin = w.body_kinematics(&st);
        let err = kin.positions().iter().zip(&gt.joints[f]).map(|(a, b)| (a - b).norm()).sum::<f64>() / gt.joints[f].len() as f64;
        max_err = max_err.max(err);
    }
    let moved = st.object.position - gt.object_poses[0].position;
    assert!(moved.y > 0.05, "box moved {:?}", moved.as_slice());
    assert!(max_err < 0.1);
}

fn hinge(name: &str, parent: usize, offset: [f64; 3]) -> Joint {
    Joint { name: name.into(), parent: Some(parent), offset: Vector3::from(offset), dofs: vec![Dof::new(Axis::X, -3.0, 3.0)], kind: JointKind::Body }
}

fn fixed(name: &str, parent: usize, offset: [f64; 3]) -> Joint {
    Joint { name: name.into(), parent: Some(parent), offset: Vector3::from(offset), dofs: vec![], kind: JointKind::Body }
}

fn root() -> Joint {
    Joint { name: "root".into(), parent: None, offset: Vector3::zeros(), dofs: vec![], kind: JointKind::Body }
}

/// Unactuated rig built from `joints`, root at `base`, with custom links and spheres.
fn rig(joints: Vec<Joint>, base: Vector3<f64>, links: Vec<LinkParams>, spheres: Vec<ContactSphere>, table: bool) -> PhysicsWorld {
    let n = joints.len();
    let skel = Skeleton::new(joints, vec![n - 1], [1, n - 1]).unwrap();
    let gains = PdGains { body_kp: 0.0, body_kd: 0.0, hand_kp: 0.0, hand_kd: 0.0, ..PdGains::default() };
    let mut h = Humanoid::from_skeleton(skel, Transform::new(Rotation::identity(), base), &gains);
    h.links = links;
    h.spheres = spheres;
    let object = RigidObject::new(TriMesh::subdivided_box(Vector3::new(0.05, 0.05, 0.05), 1), 0.3);
    let far = Transform::new(Rotation::identity(), Vector3::new(5.0, 5.0, 5.0));
    let params = PhysicsParams { gravity: Vector3::new(0.0, 0.0, -9.81), ..PhysicsParams::default() };
    let tbl = table.then(|| StaticBox::from_table(&Default::default()));
    PhysicsWorld::new(params, h, object, far, tbl, None).unwrap()
}

fn link(mass: f64, com: [f64; 3], inertia: f64) -> LinkParams {
    LinkParams { mass, com: Vector3::from(com), inertia }
}

#[test]
fn sensors_read_static_load_and_are_local() {
    let m = 0.4;
    let sphere = |off: [f64; 3], slot| ContactSphere { joint: 1, offset: Vector3::from(off), radius: 0.02, sensor: Some((0, slot)) };
    let w = rig(
        vec![root(), hinge("arm", 0, [0.0; 3]), fixed("tip", 1, [0.0, 0.3, 0.0])],
        Vector3::new(0.0, 0.0, 0.8 + 0.02),
        vec![link(1.0, [0.0; 3], 0.01), link(m, [0.0, 0.3, 0.0], 1e-4), link(1e-6, [0.0; 3], 1e-9)],
        vec![sphere([-0.05, 0.3, 0.0], 0), sphere([0.05, 0.3, 0.0], 1), sphere([-0.05, 0.3, 0.1], 2), sphere([0.05, 0.3, 0.1], 3)],
        true,
    );
    let pose = w.pose_of(&[0.0]);
    let mut st = w.reset(&pose, None).unwrap();
    let a = Action::zeros(1);
    for _ in 0..120 {
        st = w.step(&st, &a).unwrap();
    }
    let f = w.read_contact_forces(&st);
    let nonzero = f[0].iter().filter(|&&x| x > 0.0).count();
    assert_eq!(nonzero, 2, "{f:?}");
    assert_eq!(f[1], [0.0; SENSORS_PER_HAND]);
    let total: f64 = f[0].iter().sum();
    assert!((total - m * 9.81).abs() < 0.1 * m * 9.81, "total {total} vs {}", m * 9.81);
}

#[test]
fn free_hand_reads_zero() {
    let (s, w) = desk();
    let gt = s.ground_truth().unwrap();
    let mut st = w.reset(&gt.poses[0], None).unwrap();
    let a = hold_action(&w, &gt.angles[0]);
    for _ in 0..10 {
        st = w.step(&st, &a).unwrap();
    }
    assert_eq!(w.read_contact_forces(&st), [[0.0; SENSORS_PER_HAND]; 2]);
}

fn pendulum(gravity: bool) -> PhysicsWorld {
    let mut w = rig(
        vec![root(), hinge("upper", 0, [0.0; 3]), hinge("lower", 1, [0.0, 0.3, 0.0]), fixed("tip", 2, [0.0, 0.25, 0.0])],
        Vector3::new(0.0, 0.0, 1.0),
        vec![link(1.0, [0.0; 3], 0.01), link(1.0, [0.0, 0.15, 0.0], 0.008), link(0.7, [0.0, 0.125, 0.0], 0.004), link(1e-6, [0.0; 3], 1e-9)],
        vec![],
        false,
    );
    w.params.friction = 0.0;
    if !gravity {
        w.params.gravity = Vector3::zeros();
    }
    w
}

#[test]
fn unactuated_pendulum_conserves_energy() {
    let w = pendulum(true);
    let mut st = w.reset(&w.pose_of(&[-1.0, 0.3]), None).unwrap();
    let e0 = w.mechanical_energy(&st);
    let a = Action::zeros(2);
    let (mut worst, mut ke_max): (f64, f64) = (0.0, 0.0);
    for _ in 0..60 {
        st = w.step(&st, &a).unwrap();
        let e = w.mechanical_energy(&st);
        worst = worst.max((e - e0).abs());
        let m = w.joint_mass_matrix(&st.q);
        let qd = nalgebra::DVector::from_vec(st.qd.clone());
        ke_max = ke_max.max(0.5 * qd.dot(&(&m * &qd)));
    }
    assert!(ke_max > 0.3);
    // total energy (potential zero at z = 0), plus a tighter bound against the swing's kinetic scale
    assert!(worst < 0.01 * e0.abs(), "energy drift {worst} vs total {e0}");
    assert!(worst < 0.02 * ke_max, "energy drift {worst} vs kinetic scale {ke_max}");
}

#[test]
fn zero_gains_mean_gravity_only() {
    let w = pendulum(true);
    let st = w.reset(&w.pose_of(&[0.2, -0.4]), None).unwrap();
    // the first substep from rest accelerates as M⁻¹(-g(q)), independent of the action
    let a = w.step(&st, &Action(vec![0.9, -0.9])).unwrap();
    let b = w.step(&st, &Action(vec![-0.3, 0.1])).unwrap();
    assert_eq!(a, b);
}

#[test]
fn free_object_keeps_momentum() {
    let (s, mut w) = desk();
    w.table = None;
    w.ground = None;
    w.params.gravity = Vector3::zeros();
    let mut st = w.reset(&s.ground_truth().unwrap().poses[0], None).unwrap();
    st.object = ObjectState {
        position: Vector3::new(3.0, 3.0, 3.0),
        orientation: Rotation::identity(),
        linear: Vector3::new(0.3, -0.2, 0.5),
        angular: Vector3::new(0.0, 0.0, 0.0),
    };
    let a = hold_action(&w, &st.q);
    let v0 = st.object.linear;
    for _ in 0..60 {
        st = w.step(&st, &a).unwrap();
        assert!((st.object.linear - v0).norm() < 1e-12);
    }
}

#[test]
fn reset_with_reference_velocities() {
    let w = pendulum(false);
    let q0 = [0.1, 0.2];
    let q1 = [0.12, 0.17];
    let fd: Vec<f64> = q0.iter().zip(&q1).map(|(a, b)| (b - a) / w.params.dt).collect();
    let st = w.reset(&w.pose_of(&q0), Some(&fd)).unwrap();
    assert_eq!(st.qd, fd);
    let next = w.step(&st, &Action::zeros(2)).unwrap();
    for (v, r) in next.qd.iter().zip(&fd) {
        assert!((v - r).abs() < 0.05 * r.abs(), "{v} vs {r}");
    }
}

#[test]
fn reset_is_exact_and_repeatable() {
    let (s, w) = desk();
    let pose = s.ground_truth().unwrap().poses[0].clone();
    let a = w.reset(&pose, None).unwrap();
    let b = w.reset(&pose, None).unwrap();
    assert_eq!(a, b);
    let again = w.pose_of(&a.q);
    for (x, y) in pose.local.iter().zip(&again.local) {
        assert!(x.approx_eq(y, 1e-12));
    }
}

#[test]
fn deep_penetration_is_rejected_at_reset() {
    let (s, mut w) = desk();
    w.object_initial.position.y -= 0.05;
    let pose = s.ground_truth().unwrap().poses[35].clone();
    assert!(matches!(w.reset(&pose, None), Err(hoimimic::sim::SimError::PenetrationAtReset { .. })));
}
