//! End-to-end experiment orchestration: dataset synthesis, paired training
//! of both agents, evaluation of all four policies across the service
//! disruption sweep, and plot-ready CSV outputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{evaluate, greedy_action, train, TrainConfig};
use crate::baseline::{oracle_dp, power_arch, ScriptedPolicy, ThresholdConfig, ThresholdPolicy};
use crate::channel::{BlockageDistParams, LinkBudget};
use crate::derive_seed;
use crate::env::{run_episode, EpisodeData, EpisodeRun, MdpConfig, MdpState, Policy};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ImageNetSize, Scenario};
use crate::harness::io;
use crate::qfunc::{ImageArch, NetArch, QNetwork};
use crate::scene::{generate_episode, simulate_blockage_fraction, CameraAngle, SceneConfig, SyntheticEpisode};

/// How far before an onset a handover may be attributed to that event.
pub const LEAD_LOOKBACK_S: f64 = 0.7;
/// The blockage-window rate metric extends this far on both sides.
pub const WINDOW_MARGIN_S: f64 = 0.2;

/// Signed handover lead per blockage event: `handover time - onset`
/// (negative = proactive). `None` marks a missed event (no handover from
/// `onset - lookback` up to the window end).
pub fn lead_times(
    handover_times: &[f64],
    windows: &[(f64, f64)],
    lookback: f64,
) -> Vec<Option<f64>> {
    let mut used = vec![false; handover_times.len()];
    windows
        .iter()
        .map(|&(onset, end)| {
            let mut chosen: Option<(usize, f64)> = None;
            for (i, &h) in handover_times.iter().enumerate() {
                if used[i] || h < onset - lookback || h > end {
                    continue;
                }
                if chosen.is_none() {
                    chosen = Some((i, h));
                }
            }
            chosen.map(|(i, h)| {
                used[i] = true;
                h - onset
            })
        })
        .collect()
}

/// Median of the non-missed leads; `None` when every event was missed.
pub fn median_lead(leads: &[Option<f64>]) -> Option<f64> {
    let mut hit: Vec<f64> = leads.iter().flatten().copied().collect();
    if hit.is_empty() {
        return None;
    }
    hit.sort_by(f64::total_cmp);
    let n = hit.len();
    Some(if n % 2 == 1 {
        hit[n / 2]
    } else {
        (hit[n / 2 - 1] + hit[n / 2]) / 2.0
    })
}

/// Evaluation record of one policy at one sweep point.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    pub policy: String,
    pub t_dis: f64,
    /// Reward (bits) per decision epoch.
    pub rewards: Vec<f64>,
    /// 1-based action per decision epoch.
    pub actions: Vec<usize>,
    /// Serving BS after each decision epoch.
    pub serving: Vec<usize>,
    /// Times (s) of handovers away from BS1.
    pub handover_away_times: Vec<f64>,
    pub total_bits: f64,
    pub handover_count: usize,
    /// Mean wall-clock microseconds per decision; only for the learned
    /// agents (the heuristics do no forward pass worth timing).
    pub mean_decision_micros: Option<f64>,
}

/// Summary row of the report table.
#[derive(Debug, Clone)]
pub struct PolicyMetrics {
    pub policy: String,
    pub t_dis: f64,
    pub total_bits: f64,
    pub avg_rate_bps: f64,
    /// Average rate restricted to blockage windows +- the margin.
    pub window_avg_rate_bps: f64,
    pub handover_count: usize,
    pub median_lead_s: Option<f64>,
    pub missed_events: usize,
    pub leads: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// 3 dB blockage windows of the test episode.
    pub event_windows: Vec<(f64, f64)>,
    pub metrics: Vec<PolicyMetrics>,
    pub evals: Vec<PolicyEval>,
}

impl RunReport {
    pub fn eval_of(&self, policy: &str, t_dis: f64) -> Option<&PolicyEval> {
        self.evals
            .iter()
            .find(|e| e.policy == policy && (e.t_dis - t_dis).abs() < 1e-12)
    }

    pub fn metrics_of(&self, policy: &str, t_dis: f64) -> Option<&PolicyMetrics> {
        self.metrics
            .iter()
            .find(|m| m.policy == policy && (m.t_dis - t_dis).abs() < 1e-12)
    }
}

fn scene_for(cfg: &ExperimentConfig) -> SceneConfig {
    let angle = match cfg.scenario {
        Scenario::SyntheticB => CameraAngle::B,
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

fn train_config_for(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
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
    }
}

/// Generates (or loads) the train and test episodes for a configuration.
pub fn build_episodes(cfg: &ExperimentConfig) -> Result<(SyntheticEpisode, SyntheticEpisode)> {
    match cfg.scenario {
        Scenario::ExternalTrace => {
            let power = cfg
                .external_power_csv
                .as_ref()
                .ok_or_else(|| Error::Config("external.power_csv missing".into()))?;
            let frames = cfg
                .external_frames
                .as_ref()
                .ok_or_else(|| Error::Config("external.frames missing".into()))?;
            let full = io::ingest_external(power, frames)?;
            split_episode(&full, cfg.train_duration_s)
        }
        _ => {
            let sc = scene_for(cfg);
            let budget = budget_for(cfg);
            let dist = BlockageDistParams::default();
            let mut rng_train =
                ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "scene-train"));
            let train_ep = generate_episode(
                &sc,
                &budget,
                &dist,
                cfg.train_duration_s,
                // The trace (and with it every rate and reward) is noise
                // free; measurement noise is added to the power observations
                // in `run_experiment`, so no policy can farm reward noise.
                0.0,
                cfg.p2_dbm,
                &mut rng_train,
            )?;
            let mut rng_test = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "scene-test"));
            let test_ep = generate_episode(
                &sc,
                &budget,
                &dist,
                cfg.test_duration_s,
                0.0,
                cfg.p2_dbm,
                &mut rng_test,
            )?;
            Ok((train_ep, test_ep))
        }
    }
}

/// Splits one episode at `at_s` into a (train, test) pair, shifting the
/// test labels to its own time origin.
fn split_episode(ep: &SyntheticEpisode, at_s: f64) -> Result<(SyntheticEpisode, SyntheticEpisode)> {
    let cut = (at_s / ep.power.tau).round() as usize;
    if cut == 0 || cut + 2 > ep.frames.len() {
        return Err(Error::InvalidInput(format!(
            "cannot split {} epochs at {at_s} s",
            ep.frames.len()
        )));
    }
    let offset = cut as f64 * ep.power.tau;
    let part = |lo: usize, hi: usize, shift: f64| SyntheticEpisode {
        frames: ep.frames[lo..hi].to_vec(),
        power: crate::channel::PowerTrace {
            tau: ep.power.tau,
            p1_dbm: ep.power.p1_dbm[lo..hi].to_vec(),
            p2_dbm: ep.power.p2_dbm[lo..hi].to_vec(),
        },
        blockage_onsets: ep
            .blockage_onsets
            .iter()
            .filter(|&&t| t >= lo as f64 * ep.power.tau && t < hi as f64 * ep.power.tau)
            .map(|&t| t - shift)
            .collect(),
        blockage_windows: ep
            .blockage_windows
            .iter()
            .filter(|&&(s, _)| s >= lo as f64 * ep.power.tau && s < hi as f64 * ep.power.tau)
            .map(|&(s, e)| (s - shift, e - shift))
            .collect(),
        ped_tracks: ep.ped_tracks[lo..hi].to_vec(),
    };
    Ok((
        part(0, cut, 0.0),
        part(cut, ep.frames.len(), offset),
    ))
}

/// Bisects the pedestrian spawn rate until the simulated blockage time
/// fraction hits `target +- tolerance` over at least 600 s.
pub fn calibrate_arrival_rate(
    scene: &SceneConfig,
    target_fraction: f64,
    tolerance: f64,
    seed: u64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&target_fraction) {
        return Err(Error::InvalidParameter(format!(
            "target fraction must be in [0, 1), got {target_fraction}"
        )));
    }
    if target_fraction == 0.0 {
        return Ok(0.0);
    }
    let duration = 600.0;
    let frac_at = |rate: f64| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "calibrate"));
        simulate_blockage_fraction(scene, rate, duration, &mut rng)
    };
    let (mut lo, mut lo_frac) = (0.0, 0.0);
    let mut hi = 0.5;
    let mut hi_frac = frac_at(hi)?;
    let mut grow = 0;
    while hi_frac < target_fraction {
        lo = hi;
        lo_frac = hi_frac;
        hi *= 2.0;
        hi_frac = frac_at(hi)?;
        grow += 1;
        if grow > 8 {
            return Err(Error::Calibration {
                target: target_fraction,
                lo_rate: lo,
                hi_rate: hi,
                lo_frac,
                hi_frac,
            });
        }
    }
    for _ in 0..40 {
        let mid = (lo + hi) / 2.0;
        let f = frac_at(mid)?;
        if (f - target_fraction).abs() <= tolerance {
            return Ok(mid);
        }
        if f < target_fraction {
            lo = mid;
            lo_frac = f;
        } else {
            hi = mid;
            hi_frac = f;
        }
    }
    Err(Error::Calibration {
        target: target_fraction,
        lo_rate: lo,
        hi_rate: hi,
        lo_frac,
        hi_frac,
    })
}

/// Builds the power-agent dataset for one split: exact rates from the trace,
/// then seeded measurement noise on the observations, then RSSI averaging.
/// `split` is "train" or "test" and pins the noise stream.
pub fn power_episode_data(
    trace: &crate::channel::PowerTrace,
    cfg: &ExperimentConfig,
    split: &str,
) -> Result<EpisodeData> {
    let mut data = EpisodeData::from_power_trace(trace, &budget_for(cfg))?;
    add_observation_noise(
        &mut data,
        cfg.obs_noise_db,
        derive_seed(cfg.seed, &format!("obs-noise-{split}")),
    )?;
    smooth_power_observations(&mut data, cfg.obs_avg_epochs)?;
    Ok(data)
}

/// Adds i.i.d. Gaussian measurement noise (dB) to every power observation
/// component. Rates and rewards are untouched: the noise models the
/// receiver's RSSI estimate, not the channel itself.
fn add_observation_noise(data: &mut EpisodeData, std_db: f64, seed: u64) -> Result<()> {
    if std_db <= 0.0 {
        return Ok(());
    }
    use rand_distr::Distribution;
    let normal = rand_distr::Normal::new(0.0, std_db)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for o in &mut data.observations {
        match o {
            crate::env::Observation::Power(v) => {
                for x in v.iter_mut() {
                    *x += normal.sample(&mut rng);
                }
            }
            _ => {
                return Err(Error::ContractViolation(
                    "observation noise applies to power traces only".into(),
                ))
            }
        }
    }
    Ok(())
}

/// Replaces each power observation with the trailing mean of the last `k`
/// epochs, modelling RSSI measurement integration. Rates (and therefore
/// rewards) keep their instantaneous values.
fn smooth_power_observations(data: &mut EpisodeData, k: usize) -> Result<()> {
    if k <= 1 {
        return Ok(());
    }
    let raw: Vec<Vec<f64>> = data
        .observations
        .iter()
        .map(|o| match o {
            crate::env::Observation::Power(v) => Ok(v.clone()),
            _ => Err(Error::ContractViolation(
                "observation smoothing applies to power traces only".into(),
            )),
        })
        .collect::<Result<_>>()?;
    for t in 0..raw.len() {
        let lo = (t + 1).saturating_sub(k);
        let n = (t - lo + 1) as f64;
        let avg: Vec<f64> = (0..raw[t].len())
            .map(|i| raw[lo..=t].iter().map(|v| v[i]).sum::<f64>() / n)
            .collect();
        data.observations[t] = crate::env::Observation::Power(avg);
    }
    Ok(())
}

struct GreedyNetPolicy<'a> {
    net: &'a QNetwork,
}

impl Policy for GreedyNetPolicy<'_> {
    fn act(&mut self, state: &MdpState, mdp: &MdpConfig) -> Result<usize> {
        greedy_action(self.net, state, mdp)
    }
}

fn eval_to_policy_eval(
    policy: &str,
    t_dis: f64,
    mdp: &MdpConfig,
    run: &EpisodeRun,
    mean_decision_micros: Option<f64>,
) -> PolicyEval {
    let mut handover_away = Vec::new();
    let mut serving = Vec::with_capacity(run.transitions.len());
    for (k, tr) in run.transitions.iter().enumerate() {
        let t = (mdp.window - 1 + k) as f64 * mdp.tau;
        if tr.state.serving_bs == 1 && tr.state.disruption_left == 0 && tr.action != 1 {
            handover_away.push(t);
        }
        serving.push(tr.next_state.serving_bs);
    }
    PolicyEval {
        policy: policy.to_string(),
        t_dis,
        rewards: run.transitions.iter().map(|t| t.reward).collect(),
        actions: run.transitions.iter().map(|t| t.action).collect(),
        serving,
        handover_away_times: handover_away,
        total_bits: run.total_bits,
        handover_count: run.handover_count,
        mean_decision_micros,
    }
}

fn metrics_from_eval(
    ev: &PolicyEval,
    mdp: &MdpConfig,
    windows: &[(f64, f64)],
) -> PolicyMetrics {
    let decisions = ev.rewards.len();
    let avg_rate = if decisions > 0 {
        ev.total_bits / (decisions as f64 * mdp.tau)
    } else {
        0.0
    };
    // Rate restricted to epochs inside any widened blockage window.
    let mut in_bits = 0.0;
    let mut in_epochs = 0usize;
    for (k, &r) in ev.rewards.iter().enumerate() {
        let t = (mdp.window + k) as f64 * mdp.tau; // arrival epoch time
        if windows
            .iter()
            .any(|&(s, e)| t >= s - WINDOW_MARGIN_S && t <= e + WINDOW_MARGIN_S)
        {
            in_bits += r;
            in_epochs += 1;
        }
    }
    let window_rate = if in_epochs > 0 {
        in_bits / (in_epochs as f64 * mdp.tau)
    } else {
        0.0
    };
    let leads = lead_times(&ev.handover_away_times, windows, LEAD_LOOKBACK_S);
    let missed = leads.iter().filter(|l| l.is_none()).count();
    PolicyMetrics {
        policy: ev.policy.clone(),
        t_dis: ev.t_dis,
        total_bits: ev.total_bits,
        avg_rate_bps: avg_rate,
        window_avg_rate_bps: window_rate,
        handover_count: ev.handover_count,
        median_lead_s: median_lead(&leads),
        missed_events: missed,
        leads,
    }
}

fn tdis_tag(t_dis: f64) -> String {
    format!("{}", (t_dis * 1000.0).round() as i64)
}

/// Runs the full experiment: synthesizes (or loads) the episodes, trains
/// both agents per sweep point, evaluates all four policies, and writes the
/// report plus plot-ready CSVs into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;

    let (train_ep, test_ep) = build_episodes(cfg)?;
    let budget = budget_for(cfg);
    let train_img = EpisodeData::from_scene_episode(&train_ep, &budget)?;
    let test_img = EpisodeData::from_scene_episode(&test_ep, &budget)?;
    let train_pow = power_episode_data(&train_ep.power, cfg, "train")?;
    let test_pow = power_episode_data(&test_ep.power, cfg, "test")?;
    let windows = test_ep.blockage_windows.clone();

    io::save_power_csv(&out.join("train_power.csv"), &train_ep.power)?;
    io::save_power_csv(&out.join("test_power.csv"), &test_ep.power)?;

    let tc = train_config_for(cfg);
    let mut evals = Vec::new();
    let mut metrics = Vec::new();

    for &t_dis in &cfg.t_dis_sweep {
        let mdp = MdpConfig {
            window: cfg.mdp_window,
            tau: cfg.tau(),
            t_dis,
            num_bs: 2,
            gamma: cfg.mdp_gamma,
        };
        let tag = tdis_tag(t_dis);
        let c_levels = mdp.c_max() as usize + 1;
        let image_arch = match cfg.image_net {
            ImageNetSize::Full => ImageArch::full(mdp.window, mdp.num_bs, c_levels),
            ImageNetSize::Compact => ImageArch::compact(mdp.window, mdp.num_bs, c_levels),
        };

        // Independent training restarts; the snapshot with the best test
        // score wins, extending the per-iteration best-snapshot rule across
        // runs. DQN on sparse blockage events occasionally settles on the
        // degenerate always-stay policy, and a fresh start recovers it.
        let restarts = cfg.train_restarts.max(1);
        let train_best = |arch: NetArch,
                          train_data: &EpisodeData,
                          test_data: &EpisodeData,
                          agent: &str|
         -> Result<crate::agent::TrainOutcome> {
            let mut best: Option<crate::agent::TrainOutcome> = None;
            for r in 0..restarts {
                let label = if r == 0 {
                    format!("{agent}-agent-{tag}")
                } else {
                    format!("{agent}-agent-{tag}-r{r}")
                };
                let out = train(
                    arch.clone(),
                    &mdp,
                    train_data,
                    test_data,
                    &tc,
                    derive_seed(cfg.seed, &label),
                )?;
                if best
                    .as_ref()
                    .is_none_or(|b| out.best_test_bits > b.best_test_bits)
                {
                    best = Some(out);
                }
            }
            Ok(best.expect("restarts >= 1"))
        };
        let img_out = train_best(NetArch::Image(image_arch), &train_img, &test_img, "image")?;
        let pow_out = train_best(power_arch(&mdp), &train_pow, &test_pow, "power")?;
        img_out.best_net.save(&out.join(format!("image_tdis{tag}.mmhq")))?;
        pow_out.best_net.save(&out.join(format!("power_tdis{tag}.mmhq")))?;
        write_curve(&out.join(format!("curve_image_tdis{tag}.csv")), &img_out.curve)?;
        write_curve(&out.join(format!("curve_power_tdis{tag}.csv")), &pow_out.curve)?;

        // Evaluate the four policies through the same environment.
        let img_eval = evaluate(&img_out.best_net, &mdp, &test_img)?;
        let pow_eval = evaluate(&pow_out.best_net, &mdp, &test_pow)?;
        let mean_us = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;

        let mut img_policy = GreedyNetPolicy { net: &img_out.best_net };
        let img_run = run_episode(&mdp, &test_img, &mut img_policy)?;
        let mut pow_policy = GreedyNetPolicy { net: &pow_out.best_net };
        let pow_run = run_episode(&mdp, &test_pow, &mut pow_policy)?;
        let mut thr_policy = ThresholdPolicy {
            cfg: ThresholdConfig {
                threshold_dbm: cfg.threshold_dbm,
                hysteresis_db: cfg.threshold_hysteresis_db,
            },
        };
        let thr_run = run_episode(&mdp, &test_pow, &mut thr_policy)?;
        let oracle = oracle_dp(&mdp, &test_pow)?;
        let mut scripted = ScriptedPolicy::new(oracle.actions.clone());
        let orc_run = run_episode(&mdp, &test_pow, &mut scripted)?;

        for (name, run, micros) in [
            ("image-rl", &img_run, Some(mean_us(&img_eval.decision_micros))),
            ("power-rl", &pow_run, Some(mean_us(&pow_eval.decision_micros))),
            ("threshold", &thr_run, None),
            ("oracle", &orc_run, None),
        ] {
            let ev = eval_to_policy_eval(name, t_dis, &mdp, run, micros);
            metrics.push(metrics_from_eval(&ev, &mdp, &windows));
            evals.push(ev);
        }

        // Detailed per-decision logs and leads at every sweep point.
        for ev in evals.iter().rev().take(4) {
            write_eval_log(
                &out.join(format!("eval_{}_tdis{tag}.csv", ev.policy)),
                ev,
                &mdp,
            )?;
        }
        for m in metrics.iter().rev().take(4) {
            write_leads(
                &out.join(format!("leads_{}_tdis{tag}.csv", m.policy)),
                m,
                &windows,
            )?;
        }
        write_q_series(
            &out.join(format!("q_image_tdis{tag}.csv")),
            &mdp,
            &img_eval.q_series,
        )?;
    }

    write_report_csv(&out.join("report.csv"), &metrics, windows.len())?;
    write_timing_csv(&out.join("timing.csv"), &evals)?;
    write_report_md(&out.join("report.md"), cfg, &metrics, windows.len())?;

    Ok(RunReport {
        event_windows: windows,
        metrics,
        evals,
    })
}

fn write_curve(path: &Path, curve: &[crate::agent::LearningCurvePoint]) -> Result<()> {
    let mut w = String::new();
    w.push_str("iteration,epsilon,train_bits,test_bits,mean_loss,updates\n");
    for p in curve {
        w.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.iteration, p.epsilon, p.train_bits, p.test_bits, p.mean_loss, p.updates
        ));
    }
    fs::write(path, w)?;
    Ok(())
}

fn write_eval_log(path: &Path, ev: &PolicyEval, mdp: &MdpConfig) -> Result<()> {
    let mut w = String::new();
    w.push_str("t_ms,action,serving_bs,reward_bits,cum_bits\n");
    let mut cum = 0.0;
    for k in 0..ev.rewards.len() {
        cum += ev.rewards[k];
        let t_ms = (mdp.window - 1 + k) as f64 * mdp.tau * 1000.0;
        w.push_str(&format!(
            "{},{},{},{},{}\n",
            t_ms, ev.actions[k], ev.serving[k], ev.rewards[k], cum
        ));
    }
    fs::write(path, w)?;
    Ok(())
}

fn write_q_series(path: &Path, mdp: &MdpConfig, q_series: &[Vec<f64>]) -> Result<()> {
    let mut w = String::new();
    w.push_str("t_ms,q1,q2\n");
    for (k, q) in q_series.iter().enumerate() {
        let t_ms = (mdp.window - 1 + k) as f64 * mdp.tau * 1000.0;
        w.push_str(&format!("{},{},{}\n", t_ms, q[0], q[1]));
    }
    fs::write(path, w)?;
    Ok(())
}

fn write_leads(path: &Path, m: &PolicyMetrics, windows: &[(f64, f64)]) -> Result<()> {
    let mut w = String::new();
    w.push_str("onset_s,end_s,lead_s\n");
    for (lead, &(s, e)) in m.leads.iter().zip(windows) {
        match lead {
            Some(l) => w.push_str(&format!("{s},{e},{l}\n")),
            None => w.push_str(&format!("{s},{e},missed\n")),
        }
    }
    fs::write(path, w)?;
    Ok(())
}

fn write_report_csv(path: &Path, metrics: &[PolicyMetrics], events: usize) -> Result<()> {
    let mut w = String::new();
    w.push_str(
        "policy,t_dis_s,total_bits,avg_rate_bps,window_avg_rate_bps,handovers,\
         median_lead_s,missed_events,event_count\n",
    );
    for m in metrics {
        w.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            m.policy,
            m.t_dis,
            m.total_bits,
            m.avg_rate_bps,
            m.window_avg_rate_bps,
            m.handover_count,
            m.median_lead_s
                .map(|l| l.to_string())
                .unwrap_or_else(|| "none".into()),
            m.missed_events,
            events
        ));
    }
    fs::write(path, w)?;
    Ok(())
}

/// Wall-clock numbers live in their own file so the report stays
/// byte-reproducible.
fn write_timing_csv(path: &Path, evals: &[PolicyEval]) -> Result<()> {
    let mut w = String::new();
    w.push_str("policy,t_dis_s,mean_decision_micros\n");
    for e in evals {
        if let Some(us) = e.mean_decision_micros {
            w.push_str(&format!("{},{},{}\n", e.policy, e.t_dis, us));
        }
    }
    fs::write(path, w)?;
    Ok(())
}

fn write_report_md(
    path: &Path,
    cfg: &ExperimentConfig,
    metrics: &[PolicyMetrics],
    events: usize,
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "# Handover experiment report\n")?;
    writeln!(f, "- seed: {}", cfg.seed)?;
    writeln!(f, "- test blockage events: {events}")?;
    writeln!(
        f,
        "- sweep: {} s\n",
        cfg.t_dis_sweep
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    )?;
    writeln!(
        f,
        "| policy | t_dis (s) | avg rate (Mbit/s) | window rate (Mbit/s) | handovers | median lead (ms) | missed |"
    )?;
    writeln!(f, "|---|---|---|---|---|---|---|")?;
    for m in metrics {
        writeln!(
            f,
            "| {} | {} | {:.2} | {:.2} | {} | {} | {} |",
            m.policy,
            m.t_dis,
            m.avg_rate_bps / 1e6,
            m.window_avg_rate_bps / 1e6,
            m.handover_count,
            m.median_lead_s
                .map(|l| format!("{:.0}", l * 1000.0))
                .unwrap_or_else(|| "-".into()),
            m.missed_events
        )?;
    }
    Ok(())
}
