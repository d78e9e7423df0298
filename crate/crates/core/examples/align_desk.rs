//! Refines misaligned human estimates against 2D keypoints and the object, comparing the shipped
//! default weights with the desk weights rescaled for averaged projection losses.
//!
//! `cargo run --example align_desk -- [cases]`

use std::path::Path;
use std::time::Instant;

use hoimimic::alignment::{align, AlignmentConfig};
use hoimimic::harness::{alignment_metrics, misaligned_case};
use hoimimic::scenario::Scenario;

fn main() {
    let cases: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let skel = Scenario::desk_slide(0).skeleton;
    for name in ["alignment.toml", "alignment_desk.toml"] {
        let config = AlignmentConfig::read(&configs.join(name), &skel).expect("config");
        println!("{name}: weights body {} hand {} temporal {} hoi {}", config.w_body, config.w_hand, config.w_temporal, config.w_hoi);
        for seed in 0..cases {
            let case = misaligned_case(seed, &config, 0.3, 1.0).expect("case");
            let before = alignment_metrics(&case.problem, &config.contact_joints, &case.problem.poses).unwrap();
            let started = Instant::now();
            let out = align(&case.problem, &config).expect("alignment");
            let after = alignment_metrics(&case.problem, &config.contact_joints, &out.poses).unwrap();
            println!(
                "  case {seed}: d_HOI {:6.1} -> {:5.1} mm, hand error {:5.1} -> {:4.1} px ({:.1}s)",
                before.d_hoi_mm,
                after.d_hoi_mm,
                before.hand_px,
                after.hand_px,
                started.elapsed().as_secs_f64()
            );
        }
    }
}
