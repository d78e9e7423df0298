//! Simulator checks on the desk scene: a free fall, a box resting on the table, and a replay of
//! the scripted motion through the PD controllers.
//!
//! `cargo run --example physics`

use hoimimic::scenario::Scenario;
use hoimimic::sim::{Action, PdGains, PhysicsParams, PhysicsWorld};
use nalgebra::Vector3;

fn main() {
    let scenario = Scenario::desk_slide(0);
    let truth = scenario.ground_truth().expect("desk scenario is valid");
    let mut world = PhysicsWorld::from_scenario(&scenario, PhysicsParams::default(), &PdGains::default()).expect("world");
    let start = world.reset(&truth.poses[0], None).expect("reset");
    let hold = Action::from_targets(&world.humanoid.skeleton, &start.q);
    let dt = world.params.dt;

    let mut st = start.clone();
    for _ in 0..(1.0 / dt) as usize {
        st = world.step(&st, &hold).expect("step");
    }
    println!("box resting for 1 s moved {:.3} mm", 1e3 * (st.object.position - start.object.position).norm());

    let mut st = start.clone();
    for k in 0..((scenario.frames - 1) as f64 / scenario.fps / dt) as usize {
        let f = truth.frame_at((k + 1) as f64 * dt);
        st = world.step(&st, &Action::from_targets(&world.humanoid.skeleton, &truth.angles[f])).expect("step");
        if k % 30 == 29 {
            let joints = world.body_kinematics(&st).positions();
            let err = joints.iter().zip(&truth.joints[f]).map(|(a, b)| (a - b).norm()).sum::<f64>() / joints.len() as f64;
            let sensors = world.read_contact_forces(&st);
            println!(
                "t {:.2}s frame {f:2}: joint error {:5.1} mm, box at y {:+.3} (scripted {:+.3}), right sensors {:?} N",
                (k + 1) as f64 * dt,
                1e3 * err,
                st.object.position.y,
                truth.object_poses[f].position.y,
                sensors[1].map(|x| (x * 10.0).round() / 10.0)
            );
        }
    }

    world.table = None;
    world.ground = None;
    let mut st = start;
    st.object.position = Vector3::new(2.0, 2.0, 5.0);
    let steps = (0.5 / dt) as usize;
    for _ in 0..steps {
        st = world.step(&st, &hold).expect("step");
    }
    let t = steps as f64 * dt;
    println!("free fall over {t} s: {:.3} m, analytic {:.3} m", 5.0 - st.object.position.z, 0.5 * 9.81 * t * t);
}
