mod common;

use std::f64::consts::E;

use common::*;
use hoimimic::geometry::{forward_kinematics, geodesic_distance, CameraModel, Rotation, Skeleton, Transform};
use hoimimic::mesh::TriMesh;
use hoimimic::rewards::*;
use hoimimic::rl::TrainingInputs;
use hoimimic::scenario::Scenario;
use hoimimic::sim::Action;
use hoimimic::targets::{synth_reference, NoiseConfig};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame(skel: &Skeleton, rng: &mut ChaCha8Rng) -> HumanFrame {
    let angles: Vec<f64> = skel.dofs().iter().map(|d| rng.random_range(d.lower..=d.upper)).collect();
    let pose = skel.pose_from_angles(random_point(rng, 0.2), random_rotation(rng), &angles);
    let fk = forward_kinematics(skel, &pose).unwrap();
    let mut local = pose.local.clone();
    local[0] = pose.root_orientation;
    HumanFrame {
        positions: fk.iter().map(|t| t.position).collect(),
        velocities: random_points(rng, skel.joint_count(), 1.0),
        local,
        global: fk.iter().map(|t| t.rotation).collect(),
    }
}

fn unit_config() -> RewardConfig {
    RewardConfig { jp: 1.0, jv: 1.0, jr: 1.0, lp: 1.0, lr: 1.0, pw: 1.0, object: 1.0, ..RewardConfig::default() }
}

#[test]
fn perfect_tracking_is_one() {
    let skel = Skeleton::desk();
    let f = frame(&skel, &mut ChaCha8Rng::seed_from_u64(1));
    let r = human_tracking_reward(&skel, &f, &f, 0.0, &RewardConfig::default()).unwrap();
    assert_eq!(r.product(), 1.0);
}

#[test]
fn unit_position_error_gives_inverse_e() {
    let skel = Skeleton::desk();
    let reference = frame(&skel, &mut ChaCha8Rng::seed_from_u64(2));
    let mut sim = reference.clone();
    // a rigid shift moves every joint by 1 m and leaves wrist-relative terms untouched
    sim.positions.iter_mut().for_each(|p| p.x += 1.0);
    let r = human_tracking_reward(&skel, &sim, &reference, 0.0, &unit_config()).unwrap();
    assert!((r.jp - 1.0 / E).abs() < 1e-12);
    assert!((r.product() - 1.0 / E).abs() < 1e-12);
}

/// Independent recomputation of every human factor.
fn human_oracle(skel: &Skeleton, sim: &HumanFrame, reference: &HumanFrame, power: f64, c: &RewardConfig) -> [f64; 6] {
    let n = skel.joint_count() as f64;
    let mut jp = 0.0;
    let mut jv = 0.0;
    let mut jr = 0.0;
    for j in 0..skel.joint_count() {
        jp += (sim.positions[j] - reference.positions[j]).norm_squared() / n;
        jv += (sim.velocities[j] - reference.velocities[j]).norm_squared() / n;
        let m = sim.local[j].to_matrix().transpose() * reference.local[j].to_matrix();
        jr += ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().powi(2) / n;
    }
    let mut lp = 0.0;
    let mut lr = 0.0;
    let mut count = 0.0;
    for side in 0..2 {
        let w = skel.wrists()[side];
        for j in skel.hand_of(side) {
            if j == w {
                continue;
            }
            let a = sim.positions[j] - sim.positions[w];
            let b = reference.positions[j] - reference.positions[w];
            lp += (a - b).norm_squared();
            let ra = sim.global[w].to_matrix().transpose() * sim.global[j].to_matrix();
            let rb = reference.global[w].to_matrix().transpose() * reference.global[j].to_matrix();
            let m = ra.transpose() * rb;
            lr += ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().powi(2);
            count += 1.0;
        }
    }
    [
        (-c.jp * jp).exp(),
        (-c.jv * jv).exp(),
        (-c.jr * jr).exp(),
        (-c.lp * lp / count).exp(),
        (-c.lr * lr / count).exp(),
        (-c.pw * power).exp(),
    ]
}

#[test]
fn human_reward_matches_term_oracle() {
    let skel = Skeleton::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = RewardConfig::default();
    for _ in 0..200 {
        let (a, b) = (frame(&skel, &mut rng), frame(&skel, &mut rng));
        let power = rng.random_range(0.0..50.0);
        let r = human_tracking_reward(&skel, &a, &b, power, &config).unwrap();
        let o = human_oracle(&skel, &a, &b, power, &config);
        for (x, y) in [r.jp, r.jv, r.jr, r.lp, r.lr, r.pw].iter().zip(&o) {
            // the trace formula is only accurate to ~1e-8 rad near zero angle
            assert!((x - y).abs() < 1e-7, "{x} vs {y}");
        }
    }
}

#[test]
fn human_reward_rejects_mismatched_frames() {
    let skel = Skeleton::desk();
    let a = frame(&skel, &mut ChaCha8Rng::seed_from_u64(4));
    let mut b = a.clone();
    b.positions.pop();
    assert!(matches!(human_tracking_reward(&skel, &a, &b, 0.0, &RewardConfig::default()), Err(RewardError::ShapeMismatch(_))));
}

struct ObjectCase {
    cam: CameraModel,
    vertices: Vec<Vector3<f64>>,
    ids: Vec<usize>,
}

fn object_case() -> ObjectCase {
    let cam = CameraModel::look_at(1024.0, 576.0, Vector3::new(0.3, -1.5, 0.8), Vector3::zeros(), Vector3::z());
    let mesh = TriMesh::subdivided_box(Vector3::new(0.1, 0.08, 0.05), 2);
    let ids = (0..mesh.vertices.len()).step_by(2).collect();
    ObjectCase { cam, vertices: mesh.vertices, ids }
}

fn pixels(c: &ObjectCase, pose: &Transform) -> Vec<Vector2<f64>> {
    c.ids.iter().map(|&i| c.cam.project(&pose.apply(&c.vertices[i])).unwrap()).collect()
}

#[test]
fn object_reward_examples() {
    let c = object_case();
    let pose = Transform::new(Rotation::identity(), Vector3::zeros());
    let vis = vec![true; c.ids.len()];
    let px = pixels(&c, &pose);
    let config = unit_config();
    assert_eq!(object_tracking_reward(&pose, &c.vertices, &c.ids, &px, &vis, &c.cam, &config).unwrap(), 1.0);
    let shifted: Vec<Vector2<f64>> = px.iter().map(|p| p + Vector2::new(0.6, 0.8)).collect();
    let r = object_tracking_reward(&pose, &c.vertices, &c.ids, &shifted, &vis, &c.cam, &config).unwrap();
    assert!((r - 1.0 / E).abs() < 1e-12);
}

#[test]
fn object_reward_matches_projection_oracle() {
    let c = object_case();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = RewardConfig::default();
    for _ in 0..200 {
        let reference = Transform::new(Rotation::from_axis_angle(&random_point(&mut rng, 0.3)), random_point(&mut rng, 0.05));
        let pose = Transform::new(Rotation::from_axis_angle(&random_point(&mut rng, 0.3)), random_point(&mut rng, 0.05));
        let px = pixels(&c, &reference);
        let vis: Vec<bool> = c.ids.iter().map(|_| rng.random_bool(0.8)).collect();
        let r = object_tracking_reward(&pose, &c.vertices, &c.ids, &px, &vis, &c.cam, &config).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for (k, &i) in c.ids.iter().enumerate() {
            if vis[k] {
                let q = c.cam.rotation.rotate(&(pose.rotation.rotate(&c.vertices[i]) + pose.position)) + c.cam.translation;
                let p = Vector2::new(c.cam.focal * q.x / q.z + c.cam.cx, c.cam.focal * q.y / q.z + c.cam.cy);
                sum += (p - px[k]).norm_squared();
                n += 1.0;
            }
        }
        let oracle = if n > 0.0 { (-config.object * sum / n).exp() } else { 1.0 };
        assert!((r - oracle).abs() < 1e-9);
    }
}

#[test]
fn vertices_behind_the_camera_are_charged_the_cap() {
    let cam = CameraModel::new(1024.0, 576.0, Rotation::identity(), Vector3::zeros());
    let vertices = [Vector3::new(0.0, 0.0, -1.0)];
    let config = RewardConfig { object: 1e-6, behind_camera_error_px: 1000.0, ..RewardConfig::default() };
    let pose = Transform::new(Rotation::identity(), Vector3::zeros());
    let r = object_tracking_reward(&pose, &vertices, &[0], &[Vector2::new(512.0, 288.0)], &[true], &cam, &config).unwrap();
    assert!((r - (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn contact_reward_examples() {
    let c = RewardConfig::default();
    let far = [Vector3::new(3.0, 0.0, 0.0)];
    let obj = [Vector3::zeros(), Vector3::new(0.0, 0.1, 0.0)];
    let none = contact_reward([&[0.0; 4], &[9.0; 4]], [&far, &far], &obj, [false, false], &c).unwrap();
    assert_eq!(none.product(), 1.0);

    let touching = [Vector3::zeros()];
    let half = contact_reward([&[2.0, 0.0, 5.0, 0.0], &[0.0; 4]], [&touching, &far], &obj, [true, false], &c).unwrap();
    assert_eq!(half.ratio[0], 0.5);
    assert_eq!(half.force, 0.5);
    assert_eq!(half.d, 0.0);
    assert_eq!(half.distance, 0.5);

    // both hands labeled: force factors multiply
    let both = contact_reward([&[2.0, 2.0, 2.0, 0.0], &[2.0, 0.0, 0.0, 0.0]], [&touching, &touching], &obj, [true, true], &c).unwrap();
    assert!((both.force - 0.75 * 0.25).abs() < 1e-15);
}

#[test]
fn contact_distance_is_root_chamfer_of_labeled_hands() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = RewardConfig::default();
    for _ in 0..100 {
        let left = random_points(&mut rng, 7, 0.2);
        let right = random_points(&mut rng, 7, 0.2);
        let obj = random_points(&mut rng, 30, 0.1);
        let r = contact_reward([&[0.0; 4], &[0.0; 4]], [&left, &right], &obj, [false, true], &c).unwrap();
        let d2 = chamfer_oracle(&right, &obj);
        assert!((r.d - d2.sqrt()).abs() < 1e-12);
        assert!((r.distance - 1.0 / (1.0 + (c.contact_distance * d2).exp())).abs() < 1e-12);
    }
}

#[test]
fn hybrid_reward_is_the_product() {
    assert_eq!(hybrid_reward(1.0, 1.0, 1.0), 1.0);
    assert_eq!(hybrid_reward(0.5, 1.0, 1.0), 0.5);
    assert_eq!(hybrid_reward(1.0, 1.0, 0.5), 0.5);
}

#[test]
fn step_reward_equals_product_of_components() {
    let scenario = Scenario::desk_slide(0);
    let synth = synth_reference(&scenario, &NoiseConfig::default(), 0).unwrap();
    let inputs = TrainingInputs { scenario, target: synth.target, object_poses: None };
    let mut config = hoimimic::rl::TrainerConfig::default();
    config.reward.contact_distance = 100.0;
    let env = inputs.env(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ep = env.reset(20).unwrap();
    let skel = &env.world.humanoid.skeleton;
    for _ in 0..40 {
        let action = Action((0..env.action_dim()).map(|_| rng.random_range(-0.3..0.3)).collect());
        let out = env.step(&mut ep, &action).unwrap();
        let t = out.frame;
        let s = &ep.sim;
        let kin = env.world.body_kinematics(s);
        let sim = HumanFrame::from_sim(skel, &kin, &s.q);
        let h = human_tracking_reward(skel, &sim, &env.reference.frames[t], actuator_power(&env.world, s, &action), &env.reward).unwrap();
        let tracks = &env.target.object.tracks;
        let pose = s.object.transform();
        let o = object_tracking_reward(&pose, &env.vertices, &env.target.object.vertex_ids, &tracks.points[t], &tracks.visible[t], &env.target.camera, &env.reward).unwrap();
        let psi = [env.target.contact.left[t], env.target.contact.right[t]];
        let verts: Vec<Vector3<f64>> = env.vertices.iter().map(|v| pose.apply(v)).collect();
        let hands: Vec<Vec<Vector3<f64>>> = (0..2).map(|k| skel.hand_of(k).iter().map(|&j| sim.positions[j]).collect()).collect();
        let c = contact_reward([&s.sensors[0], &s.sensors[1]], [&hands[0], &hands[1]], &verts, psi, &env.reward).unwrap();
        assert!((out.reward.total - h.product() * o * c.product()).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn factors_are_bounded_and_the_product_is_below_each(seed in 0u64..100_000) {
        let skel = Skeleton::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (frame(&skel, &mut rng), frame(&skel, &mut rng));
        let h = human_tracking_reward(&skel, &a, &b, rng.random_range(0.0..10.0), &RewardConfig::default()).unwrap();
        let factors = [h.jp, h.jv, h.jr, h.lp, h.lr, h.pw];
        for f in factors {
            prop_assert!(f > 0.0 && f <= 1.0);
        }
        let o: f64 = rng.random_range(1e-3..1.0);
        let c: f64 = rng.random_range(0.0..1.0);
        let total = hybrid_reward(h.product(), o, c);
        for f in factors.into_iter().chain([o, c]) {
            prop_assert!(total <= f);
        }
    }

    #[test]
    fn human_reward_decreases_with_position_error(seed in 0u64..100_000, e1 in 0.0..0.5f64, e2 in 0.0..0.5f64) {
        prop_assume!((e1 - e2).abs() > 1e-6);
        let skel = Skeleton::desk();
        let reference = frame(&skel, &mut ChaCha8Rng::seed_from_u64(seed));
        let shifted = |e: f64| {
            let mut f = reference.clone();
            f.positions.iter_mut().for_each(|p| p.z += e);
            human_tracking_reward(&skel, &f, &reference, 0.0, &RewardConfig::default()).unwrap().product()
        };
        let (lo, hi) = (e1.min(e2), e1.max(e2));
        prop_assert!(shifted(hi) < shifted(lo));
    }

    #[test]
    fn object_reward_ignores_vertex_order(seed in 0u64..100_000) {
        use rand::seq::SliceRandom;
        let c = object_case();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = Transform::new(Rotation::from_axis_angle(&random_point(&mut rng, 0.2)), random_point(&mut rng, 0.05));
        let reference = Transform::new(Rotation::identity(), Vector3::zeros());
        let px = pixels(&c, &reference);
        let vis: Vec<bool> = c.ids.iter().map(|_| rng.random_bool(0.7)).collect();
        let mut order: Vec<usize> = (0..c.ids.len()).collect();
        order.shuffle(&mut rng);
        let ids: Vec<usize> = order.iter().map(|&k| c.ids[k]).collect();
        let ppx: Vec<Vector2<f64>> = order.iter().map(|&k| px[k]).collect();
        let pvis: Vec<bool> = order.iter().map(|&k| vis[k]).collect();
        let config = RewardConfig::default();
        let a = object_tracking_reward(&pose, &c.vertices, &c.ids, &px, &vis, &c.cam, &config).unwrap();
        let b = object_tracking_reward(&pose, &c.vertices, &ids, &ppx, &pvis, &c.cam, &config).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn labeled_contact_reward_does_not_grow_with_distance(d1 in 0.0..0.5f64, d2 in 0.0..0.5f64) {
        let c = RewardConfig::default();
        let obj = [Vector3::zeros()];
        let at = |d: f64| {
            let hand = [Vector3::new(d, 0.0, 0.0)];
            contact_reward([&[2.0; 4], &[0.0; 4]], [&hand, &hand], &obj, [true, false], &c).unwrap().product()
        };
        let (lo, hi) = (d1.min(d2), d1.max(d2));
        prop_assert!(at(hi) <= at(lo));
    }
}

#[test]
fn pose_ablation_kernel() {
    let c = RewardConfig::default();
    let a = Transform::new(Rotation::identity(), Vector3::zeros());
    assert_eq!(object_pose_reward(&a, &a, &c), 1.0);
    let b = Transform::new(Rotation::about(hoimimic::geometry::Axis::Z, 0.5), Vector3::new(0.1, 0.0, 0.0));
    let expected = (-c.pose_position * 0.01 - c.pose_rotation * geodesic_distance(&a.rotation, &b.rotation).powi(2)).exp();
    assert!((object_pose_reward(&b, &a, &c) - expected).abs() < 1e-12);
}
