//! Comparison policies: a hysteresis threshold heuristic and a hindsight
//! finite-horizon dynamic-programming oracle.

use crate::env::{EpisodeData, MdpConfig, MdpState, Observation, Policy};
use crate::error::{Error, Result};
use crate::qfunc::{NetArch, PowerArch};

/// The power-network architecture matching an MDP configuration; the
/// received-power RL baseline is the DQN trained on this variant.
pub fn power_arch(mdp: &MdpConfig) -> NetArch {
    NetArch::Power(PowerArch::default_for(
        mdp.window,
        mdp.num_bs,
        mdp.c_max() as usize + 1,
    ))
}

/// Reactive two-BS threshold heuristic with hysteresis on the BS1 power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    /// Leave BS1 when its latest power drops below this.
    pub threshold_dbm: f64,
    /// Return to BS1 only once its power exceeds threshold + hysteresis.
    pub hysteresis_db: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            threshold_dbm: -85.0,
            hysteresis_db: 3.0,
        }
    }
}

/// Policy wrapper around [`ThresholdConfig`]. Only defined for two base
/// stations and power observations.
pub struct ThresholdPolicy {
    pub cfg: ThresholdConfig,
}

impl Policy for ThresholdPolicy {
    fn act(&mut self, state: &MdpState, mdp: &MdpConfig) -> Result<usize> {
        if mdp.num_bs != 2 {
            return Err(Error::ContractViolation(format!(
                "threshold policy is defined for 2 base stations, got {}",
                mdp.num_bs
            )));
        }
        if state.disruption_left > 0 {
            return Ok(state.serving_bs);
        }
        let latest = state
            .window
            .last()
            .ok_or_else(|| Error::ContractViolation("empty observation window".into()))?;
        let p1 = match latest {
            Observation::Power(p) => *p.first().ok_or_else(|| {
                Error::ContractViolation("power observation with no entries".into())
            })?,
            Observation::Image(_) => {
                return Err(Error::ContractViolation(
                    "threshold policy needs power observations, got an image".into(),
                ))
            }
        };
        Ok(match state.serving_bs {
            1 if p1 < self.cfg.threshold_dbm => 2,
            2 if p1 > self.cfg.threshold_dbm + self.cfg.hysteresis_db => 1,
            j => j,
        })
    }
}

/// Hindsight-optimal plan over one episode.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub total_bits: f64,
    /// 1-based action per decision epoch.
    pub actions: Vec<usize>,
    /// `values[t][(j - 1) * (c_max + 1) + c]`: optimal bits-to-go from the
    /// decision at step `t` of the episode in mode `(j, c)`.
    pub values: Vec<Vec<f64>>,
}

/// Undiscounted finite-horizon dynamic program over the `(j, c)` mode
/// lattice with full knowledge of the rate trace. Ties break toward the
/// lowest action index.
pub fn oracle_dp(mdp: &MdpConfig, data: &EpisodeData) -> Result<OracleResult> {
    mdp.validate()?;
    if data.len() < mdp.window + 1 {
        return Err(Error::InvalidInput(format!(
            "episode of {} epochs is too short for window {} plus one step",
            data.len(),
            mdp.window
        )));
    }
    let c_levels = mdp.c_max() as usize + 1;
    let modes = mdp.num_bs * c_levels;
    let mode = |j: usize, c: usize| (j - 1) * c_levels + c;
    // Decision epochs: the newest-window index runs from window-1 to len-2.
    let decisions = data.len() - mdp.window;
    let first_epoch = mdp.window - 1;

    // values[t] for t in 0..=decisions; values[decisions] is all zeros.
    let mut values = vec![vec![0.0f64; modes]; decisions + 1];
    let mut argmax = vec![vec![1usize; modes]; decisions];
    for t in (0..decisions).rev() {
        let arrival_epoch = first_epoch + t + 1;
        for j in 1..=mdp.num_bs {
            for c in 0..c_levels {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 1;
                let acts: Vec<usize> = if c == 0 {
                    (1..=mdp.num_bs).collect()
                } else {
                    vec![j]
                };
                for a in acts {
                    let (nj, nc) = if c > 0 {
                        (j, c - 1)
                    } else if a != j {
                        (a, mdp.c_max() as usize)
                    } else {
                        (j, 0)
                    };
                    let reward = if nc == 0 {
                        data.rates_bps[arrival_epoch][nj - 1] * mdp.tau
                    } else {
                        0.0
                    };
                    let v = reward + values[t + 1][mode(nj, nc)];
                    if v > best {
                        best = v;
                        best_a = a;
                    }
                }
                values[t][mode(j, c)] = best;
                argmax[t][mode(j, c)] = best_a;
            }
        }
    }

    // Roll the optimal plan forward from (j = 1, c = 0).
    let (mut j, mut c) = (1usize, 0usize);
    let mut actions = Vec::with_capacity(decisions);
    for t in 0..decisions {
        let a = argmax[t][mode(j, c)];
        actions.push(a);
        if c > 0 {
            c -= 1;
        } else if a != j {
            j = a;
            c = mdp.c_max() as usize;
        }
    }
    Ok(OracleResult {
        total_bits: values[0][mode(1, 0)],
        actions,
        values,
    })
}

/// Replays a fixed action sequence as a policy (panics if queried past the
/// end); used to validate oracle plans through the real environment.
pub struct ScriptedPolicy {
    pub actions: Vec<usize>,
    cursor: usize,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions, cursor: 0 }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, _state: &MdpState, _mdp: &MdpConfig) -> Result<usize> {
        let a = *self
            .actions
            .get(self.cursor)
            .ok_or_else(|| Error::ContractViolation("scripted policy exhausted".into()))?;
        self.cursor += 1;
        Ok(a)
    }
}
