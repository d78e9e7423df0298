//! Builds a hybrid target for the desk scenario: noisy 3D human joints plus 2D object vertex
//! tracks, with contact labels estimated from the 2D motion. Writes the files to a directory.
//!
//! `cargo run --example hybrid_target -- [out_dir]`

use std::path::PathBuf;

use hoimimic::harness::write_keypoints;
use hoimimic::scenario::Scenario;
use hoimimic::targets::{synth_reference, NoiseConfig};

fn strip(labels: &[bool]) -> String {
    labels.iter().map(|&c| if c { '#' } else { '.' }).collect()
}

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hoimimic_target"));
    let scenario = Scenario::desk_slide(0);
    let synth = synth_reference(&scenario, &NoiseConfig::default(), 0).expect("synthesis");
    let target = &synth.target;
    let tracks = &target.object.tracks;

    let visible: usize = tracks.visible.iter().map(|v| v.iter().filter(|&&x| x).count()).sum();
    println!(
        "{} frames, {} tracked object vertices, {:.0}% of track points visible",
        target.frames,
        tracks.point_count(),
        100.0 * visible as f64 / (tracks.point_count() * target.frames) as f64
    );
    let truth: Vec<bool> = synth.ground_truth.contact.iter().map(|c| c[1]).collect();
    println!("right hand, estimated: {}", strip(&target.contact.right));
    println!("right hand, scripted:  {}", strip(&truth));
    println!("left hand, estimated:  {}", strip(&target.contact.left));
    println!("first labeled contact at frame {:?}", target.contact.first_contact());

    std::fs::create_dir_all(&out).expect("output directory");
    target.write(&out.join("target.toml")).expect("write target");
    write_keypoints(&synth.keypoints, &out).expect("write keypoints");
    println!("wrote {}", out.display());
}
