//! Trains the desk task with the 2D object reward, without it, and with a 3D pose reward in its
//! place, under the same budget.
//!
//! `cargo run --example object_reward_ablation -- [env_steps] [seeds]`

use std::path::Path;

use hoimimic::harness::{compute_metrics, evaluate_checkpoint};
use hoimimic::rewards::ObjectRewardMode;
use hoimimic::rl::{train, TrainerConfig, TrainingInputs};
use hoimimic::scenario::Scenario;
use hoimimic::targets::{synth_reference, NoiseConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mut base = TrainerConfig::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml")).expect("config");
    if let Some(n) = args.get(1).and_then(|s| s.parse().ok()) {
        base.total_env_steps = n;
    }
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    for mode in [ObjectRewardMode::Pixels, ObjectRewardMode::Disabled, ObjectRewardMode::Pose] {
        let mut wins = 0;
        for seed in 0..seeds {
            let scenario = Scenario::desk_slide(seed);
            let truth = scenario.ground_truth().expect("desk scenario is valid");
            let synth = synth_reference(&scenario, &NoiseConfig::default(), seed).expect("synthesis");
            let object_poses = (mode == ObjectRewardMode::Pose).then(|| truth.object_poses.clone());
            let inputs = TrainingInputs { scenario: scenario.clone(), target: synth.target, object_poses };
            let mut config = base.clone();
            config.seed = seed;
            config.reward.object_mode = mode;
            let checkpoint = train(&inputs, &config).expect("training").checkpoint;
            let m = compute_metrics(&evaluate_checkpoint(&checkpoint, &inputs, "desk").unwrap(), &truth, &scenario.skeleton).unwrap();
            wins += usize::from(m.success);
            println!("{mode:?} seed {seed}: MPJPE {:.1} mm, T_obj {:.1} mm, d_HOI {:.1} mm, success {}", m.mpjpe_all_mm, m.t_obj_mm, m.d_hoi_mm, m.success);
        }
        println!("{mode:?}: {wins}/{seeds} successes at {} env steps", base.total_env_steps);
    }
}
