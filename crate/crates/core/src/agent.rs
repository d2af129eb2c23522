//! DQN training and evaluation on trace-replay episodes.
//!
//! One *iteration* is a full pass over the training episode. The exploration
//! rate decays linearly per iteration, transitions go into a uniform replay
//! buffer, gradient updates regress onto targets from a periodically synced
//! target network, and the parameters with the best greedy test-episode
//! performance seen so far are retained as the final policy.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{legal_actions, EpisodeData, HandoverEnv, MdpConfig, MdpState, TransitionSample};
use crate::error::{Error, Result};
use crate::qfunc::{train_step, NetArch, QNetwork, RmsProp};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Passes over the training episode.
    pub iterations: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync: usize,
    /// Environment steps between gradient updates.
    pub update_period: usize,
    pub learning_rate: f64,
    pub rms_decay: f64,
    /// Multiplies raw bit rewards before they enter the TD targets, keeping
    /// Q-values near unit scale.
    pub reward_scale: f64,
    /// Linear exploration decay per iteration and its floor.
    pub epsilon_decrement: f64,
    pub epsilon_floor: f64,
    /// Minimum stored transitions before updates start.
    pub min_replay: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 32,
            replay_capacity: 50_000,
            target_sync: 10_000,
            update_period: 1,
            learning_rate: 2.5e-4,
            rms_decay: 0.95,
            reward_scale: 5.0e-5,
            epsilon_decrement: 0.01,
            epsilon_floor: 0.01,
            min_replay: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.update_period == 0 {
            return Err(Error::InvalidParameter(
                "iterations, batch_size and update_period must be >= 1".into(),
            ));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::InvalidParameter(
                "replay_capacity must hold at least one batch".into(),
            ));
        }
        if self.target_sync == 0 {
            return Err(Error::InvalidParameter("target_sync must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::InvalidParameter(
                "learning_rate must be > 0 and rms_decay in [0, 1)".into(),
            ));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::InvalidParameter("reward_scale must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_floor) || self.epsilon_decrement < 0.0 {
            return Err(Error::InvalidParameter(
                "epsilon_floor must be in [0, 1] and epsilon_decrement >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Exploration rate for a 1-based iteration index: `max(1 - dec * i, floor)`.
pub fn epsilon_schedule(cfg: &TrainConfig, iteration: usize) -> f64 {
    (1.0 - cfg.epsilon_decrement * iteration as f64).max(cfg.epsilon_floor)
}

/// Fixed-capacity ring buffer with uniform sampling.
pub struct ReplayBuffer {
    buf: Vec<TransitionSample>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: Vec::with_capacity(capacity.min(4096)),
            capacity,
            next: 0,
        }
    }

    pub fn push(&mut self, tr: TransitionSample) {
        if self.buf.len() < self.capacity {
            self.buf.push(tr);
        } else {
            self.buf[self.next] = tr;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&TransitionSample> {
        (0..n)
            .map(|_| &self.buf[rng.gen_range(0..self.buf.len())])
            .collect()
    }
}

/// Greedy action over the legal set; ties break toward the lowest index.
pub fn greedy_action(net: &QNetwork, state: &MdpState, mdp: &MdpConfig) -> Result<usize> {
    let legal = legal_actions(state, mdp);
    if legal.len() == 1 {
        return Ok(legal[0]);
    }
    let q = net.q_values(state)?;
    let mut best = legal[0];
    for &a in &legal[1..] {
        if q[a - 1] > q[best - 1] {
            best = a;
        }
    }
    Ok(best)
}

/// Epsilon-greedy over the legal action set.
pub fn select_action<R: Rng>(
    net: &QNetwork,
    state: &MdpState,
    mdp: &MdpConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let legal = legal_actions(state, mdp);
    if legal.len() > 1 && rng.gen::<f64>() < epsilon {
        Ok(legal[rng.gen_range(0..legal.len())])
    } else {
        greedy_action(net, state, mdp)
    }
}

/// Bellman targets for a replay batch: `r + gamma * max_a' Q_target(s', a')`
/// over the legal actions of `s'`, or just `r` on terminal transitions.
/// Rewards are multiplied by `reward_scale`.
pub fn build_targets(
    target_net: &QNetwork,
    batch: &[&TransitionSample],
    mdp: &MdpConfig,
    gamma: f64,
    reward_scale: f64,
) -> Result<Vec<f64>> {
    let next_states: Vec<&MdpState> = batch.iter().map(|tr| &tr.next_state).collect();
    let fwd = target_net.forward(&next_states)?;
    batch
        .iter()
        .enumerate()
        .map(|(b, tr)| {
            let r = tr.reward * reward_scale;
            if tr.terminal {
                return Ok(r);
            }
            let legal = legal_actions(&tr.next_state, mdp);
            let best = legal
                .iter()
                .map(|&a| fwd.q[[b, a - 1]])
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(r + gamma * best)
        })
        .collect()
}

/// One point of the learning curve, recorded after each iteration.
#[derive(Debug, Clone)]
pub struct LearningCurvePoint {
    pub iteration: usize,
    pub epsilon: f64,
    /// Bits collected during the (exploratory) training pass.
    pub train_bits: f64,
    /// Bits collected by the greedy policy on the test episode.
    pub test_bits: f64,
    pub mean_loss: f64,
    pub updates: usize,
}

/// Result of a training run.
pub struct TrainOutcome {
    /// Parameters after the last iteration.
    pub final_net: QNetwork,
    /// Parameters with the best greedy test performance (the retained policy).
    pub best_net: QNetwork,
    pub best_iteration: usize,
    pub best_test_bits: f64,
    pub curve: Vec<LearningCurvePoint>,
    pub diverged_iterations: usize,
}

/// Trains a DQN on `train_data`, scoring each iteration greedily on
/// `test_data` and retaining the best-performing parameters.
pub fn train(
    arch: NetArch,
    mdp: &MdpConfig,
    train_data: &EpisodeData,
    test_data: &EpisodeData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mdp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = QNetwork::new(arch, &mut rng)?;
    if matches!(net.arch(), NetArch::Power(_)) {
        let (mean, std) = power_norm_of(train_data);
        net.set_power_norm(mean, std)?;
    }
    let mut target = net.clone();
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rms_decay);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);

    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut best_net = net.clone();
    let mut best_test_bits = f64::NEG_INFINITY;
    let mut best_iteration = 0;
    let mut diverged_iterations = 0;
    let mut updates_total = 0usize;

    for iteration in 1..=cfg.iterations {
        let epsilon = epsilon_schedule(cfg, iteration);
        let checkpoint = net.params.clone();
        let mut env = HandoverEnv::new(mdp.clone(), train_data)?;
        let mut train_bits = 0.0;
        let mut loss_sum = 0.0;
        let mut updates = 0usize;
        let mut steps = 0usize;
        let mut diverged = false;

        while !env.is_terminal() {
            let state = env.state();
            let action = select_action(&net, &state, mdp, epsilon, &mut rng)?;
            let tr = env.step(action)?;
            train_bits += tr.reward;
            replay.push(tr);
            steps += 1;

            if steps % cfg.update_period == 0 && replay.len() >= cfg.min_replay.max(cfg.batch_size)
            {
                let batch = replay.sample(cfg.batch_size, &mut rng);
                let targets = build_targets(&target, &batch, mdp, mdp.gamma, cfg.reward_scale)?;
                let states: Vec<&MdpState> = batch.iter().map(|tr| &tr.state).collect();
                let actions: Vec<usize> = batch.iter().map(|tr| tr.action).collect();
                match train_step(&mut net, &mut opt, &states, &actions, &targets) {
                    Ok(loss) => {
                        loss_sum += loss;
                        updates += 1;
                        updates_total += 1;
                        if updates_total % cfg.target_sync == 0 {
                            target.params.copy_from(&net.params)?;
                        }
                    }
                    Err(Error::TrainingDiverged { .. }) => {
                        // Roll back to the iteration start and move on.
                        net.params.copy_from(&checkpoint)?;
                        opt.reset();
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if diverged {
            diverged_iterations += 1;
        }

        let eval = evaluate(&net, mdp, test_data)?;
        if eval.total_bits > best_test_bits {
            best_test_bits = eval.total_bits;
            best_net = net.clone();
            best_iteration = iteration;
        }
        curve.push(LearningCurvePoint {
            iteration,
            epsilon,
            train_bits,
            test_bits: eval.total_bits,
            mean_loss: if updates > 0 {
                loss_sum / updates as f64
            } else {
                0.0
            },
            updates,
        });
    }

    Ok(TrainOutcome {
        final_net: net,
        best_net,
        best_iteration,
        best_test_bits,
        curve,
        diverged_iterations,
    })
}

/// Mean and standard deviation of the power observations in an episode,
/// used to standardize the power network's inputs.
pub fn power_norm_of(data: &EpisodeData) -> (f64, f64) {
    let mut values = Vec::new();
    for obs in &data.observations {
        if let crate::env::Observation::Power(p) = obs {
            values.extend_from_slice(p);
        }
    }
    if values.is_empty() {
        return (-90.0, 15.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt().max(1e-6))
}

/// Greedy rollout of a network over an episode, with per-decision records.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub total_bits: f64,
    pub handover_count: usize,
    /// 1-based chosen action per decision epoch.
    pub actions: Vec<usize>,
    /// Q-values over all actions per decision epoch.
    pub q_series: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Wall-clock microseconds spent on each decision (Q evaluation and
    /// argmax; excludes environment bookkeeping).
    pub decision_micros: Vec<f64>,
}

pub fn evaluate(net: &QNetwork, mdp: &MdpConfig, data: &EpisodeData) -> Result<EvalOutcome> {
    let mut env = HandoverEnv::new(mdp.clone(), data)?;
    let mut out = EvalOutcome {
        total_bits: 0.0,
        handover_count: 0,
        actions: Vec::new(),
        q_series: Vec::new(),
        rewards: Vec::new(),
        decision_micros: Vec::new(),
    };
    while !env.is_terminal() {
        let state = env.state();
        let started = Instant::now();
        let q = net.q_values(&state)?;
        let legal = legal_actions(&state, mdp);
        let mut action = legal[0];
        for &a in &legal[1..] {
            if q[a - 1] > q[action - 1] {
                action = a;
            }
        }
        out.decision_micros
            .push(started.elapsed().as_secs_f64() * 1e6);
        let tr = env.step(action)?;
        if tr.state.disruption_left == 0 && tr.next_state.serving_bs != tr.state.serving_bs {
            out.handover_count += 1;
        }
        out.total_bits += tr.reward;
        out.actions.push(action);
        out.q_series.push(q);
        out.rewards.push(tr.reward);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Observation;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn mdp() -> MdpConfig {
        MdpConfig::default()
    }

    /// Power-observation episode with a deterministic square-wave outage on
    /// BS1: `period` epochs up, `period` epochs down, repeated.
    fn square_wave_data(n: usize, period: usize) -> EpisodeData {
        let (r_up, r_down, r2) = (2.0e8, 0.0, 1.2e8);
        let mut observations = Vec::with_capacity(n);
        let mut rates = Vec::with_capacity(n);
        for t in 0..n {
            let up = (t / period) % 2 == 0;
            let p1 = if up { -82.0 } else { -140.0 };
            observations.push(Observation::Power(vec![p1, -90.0]));
            rates.push(vec![if up { r_up } else { r_down }, r2]);
        }
        EpisodeData {
            observations,
            rates_bps: rates,
            tau: 0.030,
        }
    }

    #[test]
    fn epsilon_schedule_matches_formula() {
        let cfg = TrainConfig::default();
        assert_relative_eq!(epsilon_schedule(&cfg, 1), 0.99);
        assert_relative_eq!(epsilon_schedule(&cfg, 50), 0.50);
        assert_relative_eq!(epsilon_schedule(&cfg, 99), 0.01);
        assert_relative_eq!(epsilon_schedule(&cfg, 100), 0.01);
        assert_relative_eq!(epsilon_schedule(&cfg, 5000), 0.01);
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let data = square_wave_data(40, 5);
        let mdp = mdp();
        let mut env = HandoverEnv::new(mdp.clone(), &data).unwrap();
        let mut buf = ReplayBuffer::new(8);
        let mut stamps = Vec::new();
        while !env.is_terminal() {
            let tr = env.step(1).unwrap();
            stamps.push(tr.reward);
            buf.push(tr);
        }
        assert_eq!(buf.len(), 8);
        // The survivors are exactly the last 8 transitions.
        let kept: Vec<f64> = buf.buf.iter().map(|t| t.reward).collect();
        let expect: Vec<f64> = stamps[stamps.len() - 8..].to_vec();
        let mut kept_sorted = kept.clone();
        let mut expect_sorted = expect.clone();
        kept_sorted.sort_by(f64::total_cmp);
        expect_sorted.sort_by(f64::total_cmp);
        assert_eq!(kept_sorted, expect_sorted);
    }

    #[test]
    fn replay_sampling_is_roughly_uniform() {
        // Chi-square over 16 cells with 16k draws; threshold is the 99.9%
        // quantile of chi2(15) ~ 37.7.
        let data = square_wave_data(20, 5);
        let mut env = HandoverEnv::new(mdp(), &data).unwrap();
        let mut buf = ReplayBuffer::new(16);
        let mut k = 0.0;
        while !env.is_terminal() {
            let mut tr = env.step(1).unwrap();
            tr.reward = k; // tag each transition uniquely
            k += 1.0;
            buf.push(tr);
        }
        assert_eq!(buf.len(), 16);
        let mut counts = vec![0usize; 16];
        let mut r = rng(7);
        let draws = 16_000;
        for tr in buf.sample(draws, &mut r) {
            counts[(tr.reward as usize) % 16] += 1;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 37.7, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn epsilon_one_explores_uniformly() {
        // With epsilon = 1 and two legal actions the choice is a fair coin;
        // 10k draws stay within 4 sigma of half.
        let data = square_wave_data(10, 5);
        let mdp = mdp();
        let env = HandoverEnv::new(mdp.clone(), &data).unwrap();
        let state = env.state();
        let net = QNetwork::new(
            NetArch::Power(crate::qfunc::PowerArch::default_for(2, 2, 4)),
            &mut rng(1),
        )
        .unwrap();
        let mut r = rng(2);
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| select_action(&net, &state, &mdp, 1.0, &mut r).unwrap() == 1)
            .count();
        let sigma = (n as f64 * 0.25).sqrt();
        assert!(
            (ones as f64 - n as f64 / 2.0).abs() < 4.0 * sigma,
            "{ones} of {n}"
        );
    }

    #[test]
    fn select_action_respects_disruption() {
        let data = square_wave_data(20, 5);
        let mdp = mdp();
        let mut env = HandoverEnv::new(mdp.clone(), &data).unwrap();
        env.step(2).unwrap(); // start disruption
        let state = env.state();
        assert_eq!(state.disruption_left, 3);
        let net = QNetwork::new(
            NetArch::Power(crate::qfunc::PowerArch::default_for(2, 2, 4)),
            &mut rng(1),
        )
        .unwrap();
        let mut r = rng(3);
        for _ in 0..50 {
            assert_eq!(select_action(&net, &state, &mdp, 1.0, &mut r).unwrap(), 2);
        }
    }

    #[test]
    fn targets_use_target_net_and_terminal_cut() {
        let mdp = mdp();
        let data = square_wave_data(12, 3);
        let mut env = HandoverEnv::new(mdp.clone(), &data).unwrap();
        let mut trs = Vec::new();
        while !env.is_terminal() {
            trs.push(env.step(1).unwrap());
        }
        let mut target = QNetwork::new(
            NetArch::Power(crate::qfunc::PowerArch::default_for(2, 2, 4)),
            &mut rng(4),
        )
        .unwrap();
        target.randomize_heads(0.3, &mut rng(5));
        let batch: Vec<&TransitionSample> = trs.iter().collect();
        let scale = 1e-8;
        let ys = build_targets(&target, &batch, &mdp, 0.99, scale).unwrap();
        // Terminal transition: target is the scaled reward alone.
        let last = trs.last().unwrap();
        assert!(last.terminal);
        assert_relative_eq!(*ys.last().unwrap(), last.reward * scale);
        // Non-terminal: r + gamma * max legal Q from the *target* network.
        let q = target.q_values(&trs[0].next_state).unwrap();
        let best = q[0].max(q[1]);
        assert_relative_eq!(ys[0], trs[0].reward * scale + 0.99 * best, epsilon = 1e-12);
        // Staleness: changing the online net must not move targets built
        // from the frozen target net (trivially true here since they are
        // separate objects; this documents the contract).
        let ys2 = build_targets(&target, &batch, &mdp, 0.99, scale).unwrap();
        assert_eq!(ys, ys2);
    }

    #[test]
    fn training_learns_square_wave_handover() {
        // Deterministic square-wave outages: the optimal policy hands over
        // around outages and beats always-stay. DP-optimality is checked in
        // the baseline module; here we check learning makes a policy that
        // clearly beats the stay-on-BS1 baseline.
        let mut mdp = mdp();
        mdp.gamma = 0.9; // shorter effective horizon speeds convergence here
        let train_data = square_wave_data(240, 10);
        let test_data = square_wave_data(240, 10);
        let cfg = TrainConfig {
            iterations: 60,
            target_sync: 200,
            reward_scale: 1.0 / (2.0e8 * 0.030),
            epsilon_decrement: 0.02,
            ..TrainConfig::default()
        };
        let arch = NetArch::Power(crate::qfunc::PowerArch::default_for(
            mdp.window,
            mdp.num_bs,
            mdp.c_max() as usize + 1,
        ));
        let out = train(arch, &mdp, &train_data, &test_data, &cfg, 99).unwrap();
        let mut stay = |s: &MdpState, _: &MdpConfig| -> Result<usize> { Ok(s.serving_bs) };
        let stay_run = crate::env::run_episode(&mdp, &test_data, &mut stay).unwrap();
        assert!(
            out.best_test_bits > stay_run.total_bits * 1.1,
            "best {} vs stay {}",
            out.best_test_bits,
            stay_run.total_bits
        );
        // The learning curve's maximum is exactly the retained score.
        let curve_max = out
            .curve
            .iter()
            .map(|p| p.test_bits)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(curve_max, out.best_test_bits);
        let eval = evaluate(&out.best_net, &mdp, &test_data).unwrap();
        assert_relative_eq!(eval.total_bits, out.best_test_bits);
    }

    #[test]
    fn evaluate_records_per_decision_data() {
        let mdp = mdp();
        let data = square_wave_data(40, 5);
        let net = QNetwork::new(
            NetArch::Power(crate::qfunc::PowerArch::default_for(2, 2, 4)),
            &mut rng(8),
        )
        .unwrap();
        let eval = evaluate(&net, &mdp, &data).unwrap();
        let decisions = data.len() - mdp.window;
        assert_eq!(eval.actions.len(), decisions);
        assert_eq!(eval.q_series.len(), decisions);
        assert_eq!(eval.rewards.len(), decisions);
        assert_eq!(eval.decision_micros.len(), decisions);
        assert_relative_eq!(eval.total_bits, eval.rewards.iter().sum::<f64>());
    }
}
