//! The handover decision process.
//!
//! States pair a length-`N` window of observations (received powers or depth
//! frames) with the serving base station index `j` and the remaining
//! disruption counter `c`. Handover to a different base station is only legal
//! when `c == 0`, starts a disruption of `floor(t_dis / tau)` epochs, and the
//! reward is the served rate masked to zero for every epoch with `c > 0`.

use std::sync::Arc;

use crate::channel::{shannon_rate, LinkBudget, PowerTrace};
use crate::error::{Error, Result};
use crate::scene::{DepthFrame, SyntheticEpisode};

/// One observation per decision epoch: either the per-BS received powers or
/// a camera depth frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// Received power in dBm per base station, index 0 = BS1.
    Power(Vec<f64>),
    Image(Arc<DepthFrame>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    /// Window length N (number of most recent observations in a state).
    pub window: usize,
    /// Decision epoch length in seconds.
    pub tau: f64,
    /// Link disruption time per handover, seconds.
    pub t_dis: f64,
    /// Number of base stations J.
    pub num_bs: usize,
    /// Discount factor used by learners and the DP oracle configuration.
    pub gamma: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            window: 2,
            tau: 0.030,
            t_dis: 0.090,
            num_bs: 2,
            gamma: 0.99,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidParameter("window must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if self.t_dis < 0.0 || !self.t_dis.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "t_dis must be >= 0, got {}",
                self.t_dis
            )));
        }
        if self.num_bs < 1 {
            return Err(Error::InvalidParameter("num_bs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Disruption length in epochs: `floor(t_dis / tau)`.
    pub fn c_max(&self) -> u32 {
        (self.t_dis / self.tau).floor() as u32
    }
}

/// A full MDP state: the observation window (oldest first), the serving base
/// station (1-based), and the remaining disruption epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub window: Vec<Observation>,
    pub serving_bs: usize,
    pub disruption_left: u32,
}

/// Actions legal in a state: every base station index while connected
/// (`c == 0`), only the current one while disrupted.
pub fn legal_actions(state: &MdpState, cfg: &MdpConfig) -> Vec<usize> {
    if state.disruption_left == 0 {
        (1..=cfg.num_bs).collect()
    } else {
        vec![state.serving_bs]
    }
}

/// One transition for replay: `(s, a, r, s')` plus a terminal flag.
#[derive(Debug, Clone)]
pub struct TransitionSample {
    pub state: MdpState,
    pub action: usize,
    pub reward: f64,
    pub next_state: MdpState,
    pub terminal: bool,
}

/// Per-epoch data backing an episode: the observation stream and the
/// achievable rate of every base station at every epoch.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub observations: Vec<Observation>,
    /// `rates_bps[t][j-1]`: achievable rate when served by BS j at epoch t.
    pub rates_bps: Vec<Vec<f64>>,
    pub tau: f64,
}

impl EpisodeData {
    /// Builds power-observation episode data from a synthesized trace.
    pub fn from_power_trace(trace: &PowerTrace, budget: &LinkBudget) -> Result<Self> {
        if trace.len() == 0 {
            return Err(Error::InvalidInput("empty power trace".into()));
        }
        let mut observations = Vec::with_capacity(trace.len());
        let mut rates = Vec::with_capacity(trace.len());
        for t in 0..trace.len() {
            let (p1, p2) = (trace.p1_dbm[t], trace.p2_dbm[t]);
            observations.push(Observation::Power(vec![p1, p2]));
            rates.push(vec![shannon_rate(p1, budget), shannon_rate(p2, budget)]);
        }
        Ok(Self {
            observations,
            rates_bps: rates,
            tau: trace.tau,
        })
    }

    /// Builds image-observation episode data from a synthetic scene episode.
    /// Rates still come from the (hidden-from-the-agent) power trace.
    pub fn from_scene_episode(ep: &SyntheticEpisode, budget: &LinkBudget) -> Result<Self> {
        if ep.frames.len() != ep.power.len() {
            return Err(Error::InvalidInput(format!(
                "frame/power length mismatch: {} vs {}",
                ep.frames.len(),
                ep.power.len()
            )));
        }
        if ep.frames.is_empty() {
            return Err(Error::InvalidInput("empty episode".into()));
        }
        let observations = ep
            .frames
            .iter()
            .map(|f| Observation::Image(Arc::new(f.clone())))
            .collect();
        let rates = (0..ep.power.len())
            .map(|t| {
                vec![
                    shannon_rate(ep.power.p1_dbm[t], budget),
                    shannon_rate(ep.power.p2_dbm[t], budget),
                ]
            })
            .collect();
        Ok(Self {
            observations,
            rates_bps: rates,
            tau: ep.power.tau,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Trace-replay environment: steps through an [`EpisodeData`] epoch by epoch,
/// applying the handover dynamics.
pub struct HandoverEnv<'a> {
    cfg: MdpConfig,
    data: &'a EpisodeData,
    /// Index of the epoch the *newest* observation in the window refers to.
    t: usize,
    serving_bs: usize,
    disruption_left: u32,
}

impl<'a> HandoverEnv<'a> {
    /// Starts an episode at the first epoch where a full window exists
    /// (epoch index `N - 1`, 0-based), connected to BS1.
    pub fn new(cfg: MdpConfig, data: &'a EpisodeData) -> Result<Self> {
        cfg.validate()?;
        if data.len() < cfg.window + 1 {
            return Err(Error::InvalidInput(format!(
                "episode of {} epochs is too short for window {} plus one step",
                data.len(),
                cfg.window
            )));
        }
        if (data.tau - cfg.tau).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "episode tau {} != config tau {}",
                data.tau, cfg.tau
            )));
        }
        for r in &data.rates_bps {
            if r.len() != cfg.num_bs {
                return Err(Error::InvalidInput(format!(
                    "rate vector of length {} != num_bs {}",
                    r.len(),
                    cfg.num_bs
                )));
            }
        }
        let t = cfg.window - 1;
        Ok(Self {
            cfg,
            data,
            t,
            serving_bs: 1,
            disruption_left: 0,
        })
    }

    pub fn config(&self) -> &MdpConfig {
        &self.cfg
    }

    /// 0-based epoch index of the newest observation in the current state.
    pub fn epoch(&self) -> usize {
        self.t
    }

    pub fn state(&self) -> MdpState {
        let window = self.data.observations[self.t + 1 - self.cfg.window..=self.t].to_vec();
        MdpState {
            window,
            serving_bs: self.serving_bs,
            disruption_left: self.disruption_left,
        }
    }

    /// Whether the newest observation is the last epoch of the trace.
    pub fn is_terminal(&self) -> bool {
        self.t + 1 >= self.data.len()
    }

    /// Applies `action` (a 1-based BS index), advancing one epoch.
    ///
    /// Returns the reward in bits (rate of the next serving BS times `tau`,
    /// masked to zero while disrupted) and the successor state.
    pub fn step(&mut self, action: usize) -> Result<TransitionSample> {
        if self.is_terminal() {
            return Err(Error::ContractViolation(
                "step called on a terminal state".into(),
            ));
        }
        if action == 0 || action > self.cfg.num_bs {
            return Err(Error::ContractViolation(format!(
                "action {} out of range 1..={}",
                action, self.cfg.num_bs
            )));
        }
        let state = self.state();
        if self.disruption_left > 0 && action != self.serving_bs {
            return Err(Error::ContractViolation(format!(
                "handover to BS{} requested while disrupted (c = {})",
                action, self.disruption_left
            )));
        }
        let (next_j, next_c) = if self.disruption_left > 0 {
            (self.serving_bs, self.disruption_left - 1)
        } else if action != self.serving_bs {
            (action, self.cfg.c_max())
        } else {
            (self.serving_bs, 0)
        };
        self.t += 1;
        self.serving_bs = next_j;
        self.disruption_left = next_c;
        let reward = if next_c == 0 {
            self.data.rates_bps[self.t][next_j - 1] * self.cfg.tau
        } else {
            0.0
        };
        Ok(TransitionSample {
            state,
            action,
            reward,
            next_state: self.state(),
            terminal: self.is_terminal(),
        })
    }
}

/// A decision rule mapping states to (1-based) actions.
pub trait Policy {
    fn act(&mut self, state: &MdpState, cfg: &MdpConfig) -> Result<usize>;
}

impl<F> Policy for F
where
    F: FnMut(&MdpState, &MdpConfig) -> Result<usize>,
{
    fn act(&mut self, state: &MdpState, cfg: &MdpConfig) -> Result<usize> {
        self(state, cfg)
    }
}

/// Outcome of replaying a policy over a full episode.
#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub transitions: Vec<TransitionSample>,
    pub total_bits: f64,
    pub handover_count: usize,
}

/// Runs `policy` through the whole episode, collecting transitions.
pub fn run_episode(
    cfg: &MdpConfig,
    data: &EpisodeData,
    policy: &mut dyn Policy,
) -> Result<EpisodeRun> {
    let mut env = HandoverEnv::new(cfg.clone(), data)?;
    let mut transitions = Vec::new();
    let mut total_bits = 0.0;
    let mut handover_count = 0;
    while !env.is_terminal() {
        let state = env.state();
        let action = policy.act(&state, cfg)?;
        if !legal_actions(&state, cfg).contains(&action) {
            return Err(Error::ContractViolation(format!(
                "policy chose illegal action {} (j = {}, c = {})",
                action, state.serving_bs, state.disruption_left
            )));
        }
        let tr = env.step(action)?;
        total_bits += tr.reward;
        if tr.next_state.serving_bs != tr.state.serving_bs
            || (tr.state.disruption_left == 0 && tr.next_state.disruption_left > 0)
        {
            handover_count += 1;
        }
        transitions.push(tr);
    }
    Ok(EpisodeRun {
        transitions,
        total_bits,
        handover_count,
    })
}
