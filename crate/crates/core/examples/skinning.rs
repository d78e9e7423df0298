//! Skin weight transfer from a coarse body mesh to a finer one, then linear blend skinning.
//!
//! `cargo run --example skinning`

use hoimimic::scenario::Scenario;
use hoimimic::skinning::{lbs_deform, procedural_body, transfer_skinning};
use hoimimic::mesh::TriMesh;

fn main() {
    let scenario = Scenario::desk_slide(0);
    let skel = &scenario.skeleton;
    let coarse = procedural_body(skel, 6, 2);
    let fine = procedural_body(skel, 10, 4);
    let target = TriMesh { vertices: fine.vertices.clone(), faces: fine.faces.clone() };

    for sigma in [0.005, 0.02, 0.1] {
        let moved = transfer_skinning(&target, &coarse.vertices, &coarse.weights, &coarse.offsets, 4, sigma).expect("transfer");
        let diff = moved.weights.iter().zip(&fine.weights).map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()).sum::<f64>();
        println!("sigma {sigma:>5}: mean L1 gap to the fine mesh's own weights {:.4}", diff / fine.vertices.len() as f64);
    }

    let skinned = transfer_skinning(&target, &coarse.vertices, &coarse.weights, &coarse.offsets, 4, 0.02).expect("transfer");
    let truth = scenario.ground_truth().expect("desk scenario is valid");
    let rest = lbs_deform(&skinned, skel, &truth.poses[0]).expect("deform");
    for frame in [30, 60, 89] {
        let posed = lbs_deform(&skinned, skel, &truth.poses[frame]).expect("deform");
        let max = posed.iter().zip(&rest).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        println!("frame {frame}: {} vertices, largest displacement from frame 0 {:.3} m", posed.len(), max);
    }
}
