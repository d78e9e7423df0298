//! Forward kinematics, camera projection and distances on the desk skeleton.
//!
//! `cargo run --example kinematics`

use hoimimic::geometry::{forward_kinematics, geodesic_distance, one_sided_chamfer};
use hoimimic::scenario::Scenario;

fn main() {
    let scenario = Scenario::desk_slide(0);
    let skel = &scenario.skeleton;
    let cam = scenario.camera();
    let truth = scenario.ground_truth().expect("desk scenario is valid");
    println!("{} joints, {} hinge dofs, camera f = {} px", skel.joint_count(), skel.dofs().len(), cam.focal);

    let first_contact = truth.contact.iter().position(|c| c[0] || c[1]).unwrap_or(0);
    for frame in [0, first_contact, truth.frame_count() - 1] {
        let world = forward_kinematics(skel, &truth.poses[frame]).expect("pose matches skeleton");
        println!("frame {frame}");
        for j in [skel.fingertips()[0], *skel.fingertips().last().unwrap()] {
            let p = world[j].position;
            let px = cam.project(&p).expect("joint in front of the camera");
            println!("  {:>10} world ({:+.3}, {:+.3}, {:+.3}) m  pixel ({:.1}, {:.1})", skel.joint(j).name, p.x, p.y, p.z, px.x, px.y);
        }
        let tips: Vec<_> = skel.fingertips().iter().map(|&j| world[j].position).collect();
        let pose = truth.object_poses[frame];
        let box_vertices: Vec<_> = scenario.object_mesh().vertices.iter().map(|v| pose.apply(v)).collect();
        let d = one_sided_chamfer(&tips, &box_vertices).expect("non-empty sets");
        println!("  fingertip-to-box chamfer {:.5} m^2 (rms {:.1} mm)", d, 1e3 * d.sqrt());
    }

    let wrist = skel.wrists()[1];
    let a = forward_kinematics(skel, &truth.poses[0]).unwrap()[wrist].rotation;
    let b = forward_kinematics(skel, &truth.poses[first_contact]).unwrap()[wrist].rotation;
    println!("right wrist turns {:.3} rad between frame 0 and first contact", geodesic_distance(&a, &b));
}
