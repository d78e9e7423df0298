//! Reward components of the hybrid imitation reward while replaying the reference actions, and
//! how they fall off as those actions are perturbed.
//!
//! `cargo run --example rewards`

use std::path::Path;

use hoimimic::rl::{TrainerConfig, TrainingInputs};
use hoimimic::scenario::Scenario;
use hoimimic::sim::Action;
use hoimimic::targets::{synth_reference, NoiseConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let config = TrainerConfig::read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml")).expect("config");
    let scenario = Scenario::desk_slide(0);
    let synth = synth_reference(&scenario, &NoiseConfig::default(), 0).expect("synthesis");
    let inputs = TrainingInputs { scenario, target: synth.target, object_poses: None };
    let env = inputs.env(&config).expect("environment");
    let last = env.target.frames - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    for noise in [0.0, 0.1, 0.3] {
        let mut ep = env.reset(0).expect("reset");
        let mut shown = 0;
        let mut sum = 0.0;
        println!("action noise {noise}");
        loop {
            let next = &env.reference.actions[(env.frame(&ep) + 1).min(last)];
            let action = Action(next.iter().map(|a| a + noise * rng.random_range(-1.0..1.0)).collect());
            let out = env.step(&mut ep, &action).expect("step");
            let r = &out.reward;
            sum += r.total;
            if out.frame >= shown + 15 {
                shown = out.frame;
                let h = &r.human;
                println!(
                    "  frame {:2}: total {:.3} | human {:.3} (jp {:.2} jv {:.2} jr {:.2} lp {:.2} lr {:.2} pw {:.2}) | object {:.3} | contact {:.3} (d {:.0} mm)",
                    out.frame,
                    r.total,
                    h.product(),
                    h.jp,
                    h.jv,
                    h.jr,
                    h.lp,
                    h.lr,
                    h.pw,
                    r.object,
                    r.contact.force * r.contact.distance,
                    1e3 * r.contact.d
                );
            }
            if out.truncated {
                break;
            }
        }
        println!("  episode return {sum:.2}");
    }
}
