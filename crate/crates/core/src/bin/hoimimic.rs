use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoimimic::alignment::{align, apply_to_target, write_trace_csv, AlignmentConfig, AlignmentProblem};
use hoimimic::harness::{compute_metrics, evaluate_checkpoint, read_keypoints, write_keypoints, write_metrics_csv, HarnessError, MetricsFile};
use hoimimic::rl::{train, Checkpoint, LogRow, TrainerConfig, TrainingInputs};
use hoimimic::scenario::Scenario;
use hoimimic::targets::{synth_reference, HybridTarget, NoiseConfig};

#[derive(Parser)]
#[command(name = "hoimimic", version, about = "Hybrid-target human-object interaction imitation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario files.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Hybrid imitation targets.
    #[command(subcommand)]
    Targets(TargetsCmd),
    /// Pose refinement against 2D keypoints and the object.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Trains a policy and writes a checkpoint.
    Train(TrainArgs),
    /// Plays a checkpoint over the full reference and writes its metrics.
    Eval(EvalArgs),
    /// Metrics files.
    #[command(subcommand)]
    Metrics(MetricsCmd),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Writes the scripted desk scenario.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "scenario.toml")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TargetsCmd {
    /// Renders a scenario into a hybrid target plus 2D keypoints.
    Extract {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory receiving `target.toml` and the keypoint track files.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML noise settings; defaults to 5 mm joint noise.
        #[arg(long)]
        noise: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AlignCmd {
    /// Refines a target's human poses and writes the updated target.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Directory with the keypoint track files.
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config step budget.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Episode trajectory JSON.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    label: String,
}

#[derive(Subcommand)]
enum MetricsCmd {
    /// Collects metrics files into one CSV.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn target_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Scenario(ScenarioCmd::Gen { seed, out }) => {
            Scenario::desk_slide(seed).write(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Targets(TargetsCmd::Extract { scenario, out_dir, seed, noise }) => {
            let scenario = Scenario::read(&scenario)?;
            let noise = match noise {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| HarnessError::Parse(e.to_string()))?,
                None => NoiseConfig::default(),
            };
            let synth = synth_reference(&scenario, &noise, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            synth.target.write(&out_dir.join("target.toml"))?;
            write_keypoints(&synth.keypoints, &out_dir)?;
            println!("wrote {} ({} frames, contact from frame {:?})", out_dir.display(), synth.target.frames, synth.target.contact.first_contact());
        }
        Command::Align(AlignCmd::Run { scenario, target, keypoints, config, out, trace }) => {
            let scenario = Scenario::read(&scenario)?;
            let mut target = HybridTarget::read(&target)?;
            let keypoints = read_keypoints(&keypoints)?;
            let config = AlignmentConfig::read(&config, &scenario.skeleton)?;
            let mesh = scenario.object_mesh();
            let problem = AlignmentProblem::from_target(&target, &keypoints, &scenario.skeleton, &mesh.vertices, &scenario.object_initial_pose())?;
            let result = align(&problem, &config)?;
            apply_to_target(&mut target, &scenario.skeleton, &result.poses)?;
            target.write(&out)?;
            if let Some(p) = trace {
                write_trace_csv(&result.trace, &p)?;
            }
            let (first, best) = (&result.trace[0], &result.trace[result.best_iteration]);
            println!("L_total {:.4} -> {:.4} (iteration {})", first.total, best.total, result.best_iteration);
        }
        Command::Train(a) => {
            let scenario = Scenario::read(&a.scenario)?;
            let target = HybridTarget::read(&a.target)?;
            let mut config = TrainerConfig::read(&a.config)?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            if let Some(n) = a.steps {
                config.total_env_steps = n;
            }
            let out = train(&TrainingInputs { scenario, target, object_poses: None }, &config)?;
            out.checkpoint.write(&a.out)?;
            if let Some(p) = a.log {
                LogRow::write_csv(&out.log, &p)?;
            }
            println!("wrote {} after {} updates ({} env steps)", a.out.display(), out.checkpoint.updates, out.checkpoint.env_steps);
        }
        Command::Eval(a) => {
            let scenario = Scenario::read(&a.scenario)?;
            let target = HybridTarget::read(&a.target)?;
            let checkpoint = Checkpoint::read(&a.checkpoint)?;
            let truth = scenario.ground_truth()?;
            let skeleton = scenario.skeleton.clone();
            let inputs = TrainingInputs { scenario, target, object_poses: None };
            let traj = evaluate_checkpoint(&checkpoint, &inputs, &target_id(&a.target))?;
            let metrics = compute_metrics(&traj, &truth, &skeleton)?;
            MetricsFile::new(&a.label, metrics.clone()).write(&a.out)?;
            if let Some(p) = a.trajectory {
                traj.write(&p)?;
            }
            println!(
                "MPJPE {:.1} mm, T_obj {:.1} mm, O_obj {:.3} rad, success {}",
                metrics.mpjpe_all_mm, metrics.t_obj_mm, metrics.o_obj_rad, metrics.success
            );
        }
        Command::Metrics(MetricsCmd::Export { out, inputs }) => {
            let files = inputs.iter().map(|p| MetricsFile::read(p)).collect::<Result<Vec<_>, _>>()?;
            write_metrics_csv(&files, &out)?;
            println!("wrote {} rows to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
