//! Command-line front end for the handover experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmho::agent::{evaluate, train};
use mmho::baseline::{oracle_dp, power_arch};
use mmho::channel::LinkBudget;
use mmho::env::{EpisodeData, MdpConfig};
use mmho::harness::{self, ExperimentConfig, ImageNetSize};
use mmho::qfunc::{ImageArch, NetArch, QNetwork};
use mmho::scene::{CameraAngle, SceneConfig};
use mmho::{derive_seed, Result};

#[derive(Parser)]
#[command(name = "mmho", about = "Camera-assisted proactive mmWave handover simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single configuration key, e.g. --set seed=7 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides output_dir from the config file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test episodes and write them to disk.
    Synth(ConfigArgs),
    /// Bisect the pedestrian arrival rate to a target blockage fraction.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Target blockage time fraction.
        #[arg(long, default_value_t = 0.21)]
        target: f64,
        /// Acceptable deviation from the target.
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
    },
    /// Train the image and power agents at the configured T_dis.
    Train(ConfigArgs),
    /// Evaluate a saved network snapshot on the test episode.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Path to a .mmhq snapshot written by `train`.
        #[arg(long)]
        net: PathBuf,
    },
    /// Compute the hindsight DP oracle on the test episode.
    Oracle(ConfigArgs),
    /// Run the full sweep experiment and write the report.
    Report(ConfigArgs),
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for kv in &args.overrides {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            mmho::Error::Config(format!("override {kv:?} is not of the form key=value"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    // The environment may relocate outputs (and only outputs): relative
    // output directories are re-rooted under MMHO_OUTPUT_ROOT.
    if let Ok(root) = std::env::var("MMHO_OUTPUT_ROOT") {
        if !root.is_empty() && cfg.output_dir.is_relative() {
            cfg.output_dir = PathBuf::from(root).join(&cfg.output_dir);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scene_for(cfg: &ExperimentConfig) -> SceneConfig {
    let angle = match cfg.scenario {
        harness::Scenario::SyntheticB => CameraAngle::B,
        _ => CameraAngle::A,
    };
    let mut sc = SceneConfig::for_angle(angle);
    sc.frame_rate = cfg.frame_rate;
    sc.spawn_rate = cfg.spawn_rate;
    sc.path_start.x = cfg.path_start_x;
    sc.pedestrian_speed_range = (cfg.ped_speed_min, cfg.ped_speed_max);
    sc
}

fn budget_for(cfg: &ExperimentConfig) -> LinkBudget {
    LinkBudget {
        p_los_dbm: cfg.p_los_dbm,
        bandwidth_hz: cfg.bandwidth_hz,
        noise_psd_dbm_per_hz: cfg.noise_psd_dbm_per_hz,
    }
}

fn mdp_for(cfg: &ExperimentConfig) -> MdpConfig {
    MdpConfig {
        window: cfg.mdp_window,
        tau: cfg.tau(),
        t_dis: cfg.t_dis,
        num_bs: 2,
        gamma: cfg.mdp_gamma,
    }
}

fn cmd_synth(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let (train_ep, test_ep) = harness::experiment::build_episodes(&cfg)?;
    harness::save_power_csv(&cfg.output_dir.join("train_power.csv"), &train_ep.power)?;
    harness::save_power_csv(&cfg.output_dir.join("test_power.csv"), &test_ep.power)?;
    harness::save_frames(
        &cfg.output_dir.join("train_frames.mmhf"),
        &train_ep.frames,
        cfg.frame_rate,
    )?;
    harness::save_frames(
        &cfg.output_dir.join("test_frames.mmhf"),
        &test_ep.frames,
        cfg.frame_rate,
    )?;
    println!(
        "synth: wrote {} train epochs, {} test epochs ({} test blockage events) to {}",
        train_ep.frames.len(),
        test_ep.frames.len(),
        test_ep.blockage_windows.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_calibrate(args: &ConfigArgs, target: f64, tolerance: f64) -> Result<()> {
    let cfg = load_config(args)?;
    let sc = scene_for(&cfg);
    let rate = harness::calibrate_arrival_rate(&sc, target, tolerance, cfg.seed)?;
    println!("calibrate: scene.spawn_rate={rate} for blockage fraction {target} +- {tolerance}");
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let (train_ep, test_ep) = harness::experiment::build_episodes(&cfg)?;
    let budget = budget_for(&cfg);
    let mdp = mdp_for(&cfg);
    let c_levels = mdp.c_max() as usize + 1;
    let image_arch = match cfg.image_net {
        ImageNetSize::Full => ImageArch::full(mdp.window, mdp.num_bs, c_levels),
        ImageNetSize::Compact => ImageArch::compact(mdp.window, mdp.num_bs, c_levels),
    };
    let tc = mmho::agent::TrainConfig {
        iterations: cfg.train_iterations,
        batch_size: cfg.train_batch_size,
        replay_capacity: cfg.train_replay_capacity,
        target_sync: cfg.train_target_sync,
        update_period: cfg.train_update_period,
        learning_rate: cfg.train_learning_rate,
        rms_decay: cfg.train_rms_decay,
        reward_scale: cfg.train_reward_scale,
        epsilon_decrement: cfg.train_epsilon_decrement,
        epsilon_floor: cfg.train_epsilon_floor,
        min_replay: cfg.train_batch_size,
    };

    let train_img = EpisodeData::from_scene_episode(&train_ep, &budget)?;
    let test_img = EpisodeData::from_scene_episode(&test_ep, &budget)?;
    let out = train(
        NetArch::Image(image_arch),
        &mdp,
        &train_img,
        &test_img,
        &tc,
        derive_seed(cfg.seed, "image-agent"),
    )?;
    out.best_net.save(&cfg.output_dir.join("image.mmhq"))?;
    println!(
        "train: image agent best test score {} bits at iteration {}",
        out.best_test_bits, out.best_iteration
    );

    let train_pow = harness::experiment::power_episode_data(&train_ep.power, &cfg, "train")?;
    let test_pow = harness::experiment::power_episode_data(&test_ep.power, &cfg, "test")?;
    let out = train(
        power_arch(&mdp),
        &mdp,
        &train_pow,
        &test_pow,
        &tc,
        derive_seed(cfg.seed, "power-agent"),
    )?;
    out.best_net.save(&cfg.output_dir.join("power.mmhq"))?;
    println!(
        "train: power agent best test score {} bits at iteration {}",
        out.best_test_bits, out.best_iteration
    );
    Ok(())
}

fn cmd_eval(args: &ConfigArgs, net_path: &PathBuf) -> Result<()> {
    let cfg = load_config(args)?;
    let net = QNetwork::load(net_path)?;
    let (_, test_ep) = harness::experiment::build_episodes(&cfg)?;
    let budget = budget_for(&cfg);
    let mdp = mdp_for(&cfg);
    let data = match net.arch() {
        NetArch::Image(_) => EpisodeData::from_scene_episode(&test_ep, &budget)?,
        NetArch::Power(_) => {
            harness::experiment::power_episode_data(&test_ep.power, &cfg, "test")?
        }
    };
    let out = evaluate(&net, &mdp, &data)?;
    let mean_us =
        out.decision_micros.iter().sum::<f64>() / out.decision_micros.len().max(1) as f64;
    println!(
        "eval: total {} bits, {} handovers, mean decision time {mean_us} us",
        out.total_bits, out.handover_count
    );
    Ok(())
}

fn cmd_oracle(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let (_, test_ep) = harness::experiment::build_episodes(&cfg)?;
    let budget = budget_for(&cfg);
    let mdp = mdp_for(&cfg);
    let data = EpisodeData::from_power_trace(&test_ep.power, &budget)?;
    let result = oracle_dp(&mdp, &data)?;
    println!(
        "oracle: total {} bits over {} decisions",
        result.total_bits,
        result.actions.len()
    );
    Ok(())
}

fn cmd_report(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let report = harness::run_experiment(&cfg)?;
    println!(
        "report: {} test blockage events, {} metric rows written to {}",
        report.event_windows.len(),
        report.metrics.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Calibrate { cfg, target, tolerance } => cmd_calibrate(cfg, *target, *tolerance),
        Command::Train(args) => cmd_train(args),
        Command::Eval { cfg, net } => cmd_eval(cfg, net),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
