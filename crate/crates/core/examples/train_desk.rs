//! Trains a policy on the desk task, evaluates it against the ground truth and writes the
//! checkpoint, training log and metrics.
//!
//! `cargo run --example train_desk -- [seed] [env_steps] [out_dir]`

use std::path::{Path, PathBuf};

use hoimimic::harness::{compute_metrics, evaluate_checkpoint, write_metrics_csv, MetricsFile};
use hoimimic::rl::{train, LogRow, TrainerConfig, TrainingInputs};
use hoimimic::scenario::Scenario;
use hoimimic::targets::{synth_reference, NoiseConfig};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let mut config = TrainerConfig::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml")).expect("config");
    config.seed = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    if let Some(n) = args.get(2).and_then(|s| s.parse().ok()) {
        config.total_env_steps = n;
    }
    let out = args.get(3).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("hoimimic_desk"));
    std::fs::create_dir_all(&out).expect("output directory");

    let scenario = Scenario::desk_slide(config.seed);
    let truth = scenario.ground_truth().expect("desk scenario is valid");
    let synth = synth_reference(&scenario, &NoiseConfig::default(), config.seed).expect("synthesis");
    let inputs = TrainingInputs { scenario: scenario.clone(), target: synth.target, object_poses: None };

    let untrained = train(&inputs, &TrainerConfig { total_env_steps: 0, ..config.clone() }).expect("init").checkpoint;
    let trained = train(&inputs, &config).expect("training");
    trained.checkpoint.write(&out.join("policy.json")).expect("checkpoint");
    LogRow::write_csv(&trained.log, &out.join("train_log.csv")).expect("log");

    let mut files = Vec::new();
    for (label, checkpoint) in [("untrained", &untrained), ("trained", &trained.checkpoint)] {
        let traj = evaluate_checkpoint(checkpoint, &inputs, "desk").expect("evaluation");
        let m = compute_metrics(&traj, &truth, &scenario.skeleton).expect("metrics");
        println!(
            "{label:>9}: MPJPE {:.1} mm (body {:.1}, hand {:.1}), T_obj {:.1} mm, O_obj {:.3} rad, C_prec {:.2}/{:.2}, d_HOI {:.1} mm, success {}",
            m.mpjpe_all_mm, m.mpjpe_body_mm, m.mpjpe_hand_mm, m.t_obj_mm, m.o_obj_rad, m.c_prec_100, m.c_prec_25, m.d_hoi_mm, m.success
        );
        files.push(MetricsFile::new(label, m));
    }
    write_metrics_csv(&files, &out.join("metrics.csv")).expect("metrics csv");
    println!("wrote {}", out.display());
}
