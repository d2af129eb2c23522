//! Statistical 60 GHz blockage channel: event sampling, trapezoidal
//! attenuation rendering, received-power traces, Shannon rates, and
//! re-estimation of the blockage statistics from traces.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Weibull};

use crate::error::{Error, Result};

/// Received power at BS 2 when nothing else is configured, in dBm.
pub const DEFAULT_P2_DBM: f64 = -129.0;

/// Distribution parameters characterizing blockage events.
///
/// Defaults are the fitted values from the measurement campaign this model
/// reproduces: 5 dB decay time Gaussian(0.059, 0.034) s, 5 dB rise time
/// LogNormal(-3.01, 0.195), mean attenuation Gaussian(14.2, 2.08) dB,
/// blockage duration Weibull(scale 0.553, shape 4.08) s, LOS duration
/// Weibull(scale 2.31, shape 1.51) s.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockageDistParams {
    pub decay5db_mean: f64,
    pub decay5db_std: f64,
    pub rise5db_logmean: f64,
    pub rise5db_logstd: f64,
    pub atten_mean_db: f64,
    pub atten_std_db: f64,
    pub duration_scale: f64,
    pub duration_shape: f64,
    pub los_scale: f64,
    pub los_shape: f64,
}

impl Default for BlockageDistParams {
    fn default() -> Self {
        Self {
            decay5db_mean: 0.059,
            decay5db_std: 0.034,
            rise5db_logmean: -3.01,
            rise5db_logstd: 0.195,
            atten_mean_db: 14.2,
            atten_std_db: 2.08,
            duration_scale: 0.553,
            duration_shape: 4.08,
            los_scale: 2.31,
            los_shape: 1.51,
        }
    }
}

impl BlockageDistParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("decay5db_mean", self.decay5db_mean),
            ("decay5db_std", self.decay5db_std),
            ("rise5db_logmean", self.rise5db_logmean),
            ("rise5db_logstd", self.rise5db_logstd),
            ("atten_mean_db", self.atten_mean_db),
            ("atten_std_db", self.atten_std_db),
            ("duration_scale", self.duration_scale),
            ("duration_shape", self.duration_shape),
            ("los_scale", self.los_scale),
            ("los_shape", self.los_shape),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} is not finite")));
            }
        }
        let positive = [
            ("decay5db_std", self.decay5db_std),
            ("rise5db_logstd", self.rise5db_logstd),
            ("atten_std_db", self.atten_std_db),
            ("duration_scale", self.duration_scale),
            ("duration_shape", self.duration_shape),
            ("los_scale", self.los_scale),
            ("los_shape", self.los_shape),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One sampled obstruction episode. Attenuation in dB ramps linearly from 0
/// to `depth_db` over `t_decay`, holds for `t_hold`, and ramps back over
/// `t_rise`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockageEvent {
    pub onset: f64,
    pub t_decay: f64,
    pub t_hold: f64,
    pub t_rise: f64,
    pub depth_db: f64,
}

impl BlockageEvent {
    pub fn duration(&self) -> f64 {
        self.t_decay + self.t_hold + self.t_rise
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration()
    }

    /// Attenuation at absolute time `t`, 0 outside the event.
    pub fn attenuation_at(&self, t: f64) -> f64 {
        let dt = t - self.onset;
        if dt < 0.0 || dt > self.duration() {
            0.0
        } else if dt < self.t_decay {
            self.depth_db * dt / self.t_decay
        } else if dt <= self.t_decay + self.t_hold {
            self.depth_db
        } else {
            let into_rise = dt - self.t_decay - self.t_hold;
            self.depth_db * (1.0 - into_rise / self.t_rise)
        }
    }
}

/// Time series of blockage attenuation in dB at fixed spacing `dt`.
#[derive(Debug, Clone)]
pub struct AttenuationTrace {
    pub dt: f64,
    pub samples: Vec<f64>,
}

/// Received powers at both BSs at fixed sampling interval `tau`.
#[derive(Debug, Clone)]
pub struct PowerTrace {
    pub tau: f64,
    pub p1_dbm: Vec<f64>,
    pub p2_dbm: Vec<f64>,
}

impl PowerTrace {
    pub fn len(&self) -> usize {
        self.p1_dbm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p1_dbm.is_empty()
    }
}

/// Link-budget constants shared by both BSs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub p_los_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        // p_los is chosen so the unblocked BS 1 rate is ~200 Mbit/s at
        // W = 40 MHz; see `p_los_for_rate`.
        Self {
            p_los_dbm: -82.0,
            bandwidth_hz: 40.0e6,
            noise_psd_dbm_per_hz: -173.0,
        }
    }
}

fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Shannon rate in bit/s for a received power in dBm.
pub fn shannon_rate(p_dbm: f64, budget: &LinkBudget) -> f64 {
    let p_lin = dbm_to_watts(p_dbm);
    let noise = dbm_to_watts(budget.noise_psd_dbm_per_hz) * budget.bandwidth_hz;
    budget.bandwidth_hz * (1.0 + p_lin / noise).log2()
}

/// Received power in dBm that yields `rate_bps` under `budget`; inverse of
/// [`shannon_rate`].
pub fn p_los_for_rate(rate_bps: f64, budget: &LinkBudget) -> f64 {
    let noise = dbm_to_watts(budget.noise_psd_dbm_per_hz) * budget.bandwidth_hz;
    let snr = 2f64.powf(rate_bps / budget.bandwidth_hz) - 1.0;
    watts_to_dbm(snr * noise)
}

fn sample_positive_normal<R: Rng>(mean: f64, std: f64, rng: &mut R) -> f64 {
    let dist = Normal::new(mean, std).expect("validated std");
    // Truncated at zero: resample on nonpositive draws.
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Samples non-overlapping blockage events over `[0, duration]`.
///
/// LOS gaps are Weibull(los), total event durations Weibull(duration), decay
/// and rise times come from the 5 dB crossing statistics scaled linearly to
/// the sampled depth, and depth is a positive-truncated Gaussian. If a
/// sampled event's ramps exceed its total duration they are rescaled
/// proportionally to fit.
pub fn sample_blockage_events<R: Rng>(
    params: &BlockageDistParams,
    duration: f64,
    rng: &mut R,
) -> Result<Vec<BlockageEvent>> {
    params.validate()?;
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    let los = Weibull::new(params.los_scale, params.los_shape)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let dur = Weibull::new(params.duration_scale, params.duration_shape)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let rise5 = LogNormal::new(params.rise5db_logmean, params.rise5db_logstd)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        t += los.sample(rng);
        let total = dur.sample(rng);
        if t + total > duration {
            break;
        }
        let depth = sample_positive_normal(params.atten_mean_db, params.atten_std_db, rng);
        let decay5 = sample_positive_normal(params.decay5db_mean, params.decay5db_std, rng);
        let rise5 = rise5.sample(rng);
        // Linear-in-dB ramps: the 5 dB crossing time extrapolates to the full
        // depth as t * depth / 5.
        let mut t_decay = decay5 * depth / 5.0;
        let mut t_rise = rise5 * depth / 5.0;
        let ramps = t_decay + t_rise;
        let t_hold = if ramps > total {
            let k = total / ramps;
            t_decay *= k;
            t_rise *= k;
            0.0
        } else {
            total - ramps
        };
        events.push(BlockageEvent {
            onset: t,
            t_decay,
            t_hold,
            t_rise,
            depth_db: depth,
        });
        t += total;
    }
    Ok(events)
}

/// Renders the piecewise-linear dB attenuation of `events` sampled every `dt`
/// over `[0, duration]`.
pub fn render_attenuation(
    events: &[BlockageEvent],
    dt: f64,
    duration: f64,
) -> Result<AttenuationTrace> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    for w in events.windows(2) {
        if w[1].onset < w[0].end() {
            return Err(Error::InvalidInput(format!(
                "overlapping events: one ends at {:.6} s, next starts at {:.6} s",
                w[0].end(),
                w[1].onset
            )));
        }
    }
    let n = (duration / dt).floor() as usize + 1;
    let mut samples = vec![0.0; n];
    // Events are ordered; walk them alongside the sample grid.
    let mut ev = 0;
    for (k, s) in samples.iter_mut().enumerate() {
        let t = k as f64 * dt;
        while ev < events.len() && events[ev].end() < t {
            ev += 1;
        }
        if ev < events.len() {
            *s = events[ev].attenuation_at(t);
        }
    }
    Ok(AttenuationTrace { dt, samples })
}

/// Synthesizes a two-BS power trace from a rendered attenuation trace.
///
/// `p1[t] = p_los - atten(t*tau) + N(0, noise_db_std)`; `p2` is constant at
/// `p2_dbm`. `tau` must be an integer multiple of `atten.dt`.
pub fn synth_power_trace<R: Rng>(
    budget: &LinkBudget,
    atten: &AttenuationTrace,
    tau: f64,
    noise_db_std: f64,
    p2_dbm: f64,
    rng: &mut R,
) -> Result<PowerTrace> {
    if tau < atten.dt {
        return Err(Error::InvalidInput(format!(
            "tau {tau} is smaller than the attenuation sample spacing {}",
            atten.dt
        )));
    }
    let ratio = tau / atten.dt;
    let step = ratio.round();
    if (ratio - step).abs() > 1e-6 * ratio {
        return Err(Error::InvalidInput(format!(
            "tau {tau} is not an integer multiple of the attenuation sample spacing {}",
            atten.dt
        )));
    }
    let step = step as usize;
    let n = if step == 0 {
        0
    } else {
        (atten.samples.len() - 1) / step + 1
    };
    let noise = if noise_db_std > 0.0 {
        Some(Normal::new(0.0, noise_db_std).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let mut p1 = Vec::with_capacity(n);
    for k in 0..n {
        let a = atten.samples[k * step];
        let w = noise.map_or(0.0, |d| d.sample(rng));
        p1.push(budget.p_los_dbm - a + w);
    }
    Ok(PowerTrace {
        tau,
        p2_dbm: vec![p2_dbm; p1.len()],
        p1_dbm: p1,
    })
}

/// Per-event measurements and fitted distribution parameters recovered from a
/// power trace.
#[derive(Debug, Clone)]
pub struct BlockageStats {
    pub params: BlockageDistParams,
    pub event_count: usize,
    pub blockage_fraction: f64,
    /// False when no events were detected and the fit is undefined.
    pub fit_defined: bool,
    pub durations: Vec<f64>,
}

/// Detects blockage events in `trace` (3 dB below the LOS reference) and
/// re-estimates the distribution parameters by maximum likelihood.
pub fn estimate_blockage_stats(
    trace: &PowerTrace,
    los_reference_dbm: f64,
) -> Result<BlockageStats> {
    if trace.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "trace too short for estimation: {} samples",
            trace.len()
        )));
    }
    let atten: Vec<f64> = trace
        .p1_dbm
        .iter()
        .map(|&p| los_reference_dbm - p)
        .collect();
    let n = atten.len();
    let dt = trace.tau;

    // Maximal runs with attenuation > 3 dB, extended outward to where the
    // attenuation returns near zero.
    let near_zero = 0.5;
    let mut events: Vec<(usize, usize)> = Vec::new(); // inclusive extents
    let mut i = 0;
    while i < n {
        if atten[i] > 3.0 {
            let mut lo = i;
            while lo > 0 && atten[lo - 1] > near_zero {
                lo -= 1;
            }
            let mut hi = i;
            while hi + 1 < n && atten[hi + 1] > 3.0 {
                hi += 1;
            }
            let mut hi_ext = hi;
            while hi_ext + 1 < n && atten[hi_ext + 1] > near_zero {
                hi_ext += 1;
            }
            // Merge with the previous event if the extended boundaries touch.
            if let Some(last) = events.last_mut() {
                if lo <= last.1 + 1 {
                    last.1 = hi_ext;
                    i = hi_ext + 1;
                    continue;
                }
            }
            events.push((lo, hi_ext));
            i = hi_ext + 1;
        } else {
            i += 1;
        }
    }
    // Events touching the trace edges have unmeasurable extents.
    events.retain(|&(lo, hi)| lo > 0 && hi + 1 < n);

    let blocked_samples: usize = events.iter().map(|&(lo, hi)| hi - lo + 1).sum();
    let blockage_fraction = blocked_samples as f64 / n as f64;

    let mut durations = Vec::new();
    let mut decay5s = Vec::new();
    let mut rise5s = Vec::new();
    let mut depths = Vec::new();
    for &(lo, hi) in &events {
        durations.push((hi - lo + 1) as f64 * dt);
        // Time from the event start to the first 5 dB crossing.
        if let Some(k) = (lo..=hi).find(|&k| atten[k] >= 5.0) {
            if k > lo {
                let frac = (5.0 - atten[k - 1]) / (atten[k] - atten[k - 1]);
                decay5s.push(((k - 1 - lo) as f64 + frac) * dt);
            }
            // Time from the last 5 dB down-crossing to the event end.
            if let Some(m) = (lo..=hi).rev().find(|&m| atten[m] >= 5.0) {
                if m < hi {
                    let frac = (atten[m] - 5.0) / (atten[m] - atten[m + 1]);
                    rise5s.push(((hi - m) as f64 - frac) * dt);
                }
            }
        }
        // Plateau attenuation: mean of samples within 1 dB of the event peak.
        let peak = (lo..=hi).map(|k| atten[k]).fold(f64::MIN, f64::max);
        let plateau: Vec<f64> = (lo..=hi)
            .map(|k| atten[k])
            .filter(|&a| a >= peak - 1.0)
            .collect();
        depths.push(plateau.iter().sum::<f64>() / plateau.len() as f64);
    }
    // LOS gaps between consecutive event extents.
    let gaps: Vec<f64> = events
        .windows(2)
        .map(|w| (w[1].0 - w[0].1 - 1) as f64 * dt)
        .filter(|&g| g > 0.0)
        .collect();

    let fit_defined = !events.is_empty();
    let mut params = BlockageDistParams::default();
    if fit_defined {
        let (dm, ds) = mean_std(&decay5s);
        params.decay5db_mean = dm;
        params.decay5db_std = ds;
        let logs: Vec<f64> = rise5s.iter().map(|&r| r.ln()).collect();
        let (lm, ls) = mean_std(&logs);
        params.rise5db_logmean = lm;
        params.rise5db_logstd = ls;
        let (am, asd) = mean_std(&depths);
        params.atten_mean_db = am;
        params.atten_std_db = asd;
        if let Some((scale, shape)) = weibull_mle(&durations) {
            params.duration_scale = scale;
            params.duration_shape = shape;
        }
        if let Some((scale, shape)) = weibull_mle(&gaps) {
            params.los_scale = scale;
            params.los_shape = shape;
        }
    }
    Ok(BlockageStats {
        params,
        event_count: events.len(),
        blockage_fraction,
        fit_defined,
        durations,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Maximum-likelihood Weibull fit; returns `(scale, shape)`.
///
/// Solves the profile-likelihood shape equation
/// `sum x^k ln x / sum x^k - 1/k - mean(ln x) = 0` by bisection.
pub fn weibull_mle(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 || xs.iter().any(|&x| x <= 0.0) {
        return None;
    }
    let n = xs.len() as f64;
    let mean_ln = xs.iter().map(|x| x.ln()).sum::<f64>() / n;
    let f = |k: f64| -> f64 {
        let mut sxk = 0.0;
        let mut sxk_ln = 0.0;
        for &x in xs {
            let xk = x.powf(k);
            sxk += xk;
            sxk_ln += xk * x.ln();
        }
        sxk_ln / sxk - 1.0 / k - mean_ln
    };
    let mut lo = 1e-3;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            return None;
        }
    }
    if f(lo) > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    let scale = (xs.iter().map(|x| x.powf(k)).sum::<f64>() / n).powf(1.0 / k);
    Some((scale, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_params_match_fitted_table() {
        let p = BlockageDistParams::default();
        assert_eq!(
            (p.decay5db_mean, p.decay5db_std),
            (0.059, 0.034)
        );
        assert_eq!((p.rise5db_logmean, p.rise5db_logstd), (-3.01, 0.195));
        assert_eq!((p.atten_mean_db, p.atten_std_db), (14.2, 2.08));
        assert_eq!((p.duration_scale, p.duration_shape), (0.553, 4.08));
        assert_eq!((p.los_scale, p.los_shape), (2.31, 1.51));
        p.validate().unwrap();
    }

    #[test]
    fn nonpositive_params_rejected() {
        let mut p = BlockageDistParams::default();
        p.duration_scale = 0.0;
        assert!(p.validate().is_err());
        let mut p = BlockageDistParams::default();
        p.los_shape = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn collapsed_depth_distribution_yields_table_mean() {
        let mut p = BlockageDistParams::default();
        p.atten_std_db = 1e-12;
        let mut r = rng(1);
        let events = sample_blockage_events(&p, 30_000.0, &mut r).unwrap();
        assert!(events.len() > 9_000, "expected ~1e4 events, got {}", events.len());
        for e in &events {
            assert_relative_eq!(e.depth_db, 14.2, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_duration_gives_no_events() {
        let events =
            sample_blockage_events(&BlockageDistParams::default(), 0.0, &mut rng(2)).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn blockage_time_fraction_matches_weibull_mean_oracle() {
        // Independent oracle: E[t_D] / (E[t_D] + E[t_LOS]) with Weibull means
        // scale * Gamma(1 + 1/shape).
        let p = BlockageDistParams::default();
        let mean = |scale: f64, shape: f64| scale * statrs::function::gamma::gamma(1.0 + 1.0 / shape);
        let oracle = mean(p.duration_scale, p.duration_shape)
            / (mean(p.duration_scale, p.duration_shape) + mean(p.los_scale, p.los_shape));
        assert!((oracle - 0.19).abs() <= 0.02, "oracle fraction {oracle}");

        let mut r = rng(3);
        let duration = 10_000.0;
        let events = sample_blockage_events(&p, duration, &mut r).unwrap();
        let blocked: f64 = events.iter().map(|e| e.duration()).sum();
        let fraction = blocked / duration;
        assert!(
            (fraction - oracle).abs() <= 0.02,
            "fraction {fraction} vs oracle {oracle}"
        );
    }

    #[test]
    fn events_are_ordered_and_disjoint_and_deterministic() {
        let p = BlockageDistParams::default();
        let a = sample_blockage_events(&p, 500.0, &mut rng(7)).unwrap();
        let b = sample_blockage_events(&p, 500.0, &mut rng(7)).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[1].onset >= w[0].end());
        }
        for e in &a {
            assert!(e.depth_db > 0.0 && e.duration() > 0.0 && e.t_hold >= 0.0);
        }
    }

    #[test]
    fn render_plateau_and_midpoints() {
        let e = BlockageEvent {
            onset: 1.0,
            t_decay: 0.1,
            t_hold: 0.3,
            t_rise: 0.1,
            depth_db: 15.0,
        };
        let tr = render_attenuation(std::slice::from_ref(&e), 0.05, 2.0).unwrap();
        // Mid-hold sample.
        let mid = (1.25 / 0.05) as usize;
        assert_relative_eq!(tr.samples[mid], 15.0);
        // Half-way down the decay ramp: onset + 0.05.
        let half = (1.05 / 0.05) as usize;
        assert_relative_eq!(tr.samples[half], 7.5, epsilon = 1e-9);
        // Outside the event.
        assert_relative_eq!(tr.samples[0], 0.0);
        assert_relative_eq!(*tr.samples.last().unwrap(), 0.0);
    }

    #[test]
    fn render_no_events_is_all_zero() {
        let tr = render_attenuation(&[], 0.01, 1.0).unwrap();
        assert!(tr.samples.iter().all(|&s| s == 0.0));
        assert_eq!(tr.samples.len(), 101);
    }

    #[test]
    fn render_rejects_overlapping_events() {
        let e1 = BlockageEvent {
            onset: 0.0,
            t_decay: 0.1,
            t_hold: 0.5,
            t_rise: 0.1,
            depth_db: 10.0,
        };
        let e2 = BlockageEvent {
            onset: 0.5,
            ..e1.clone()
        };
        assert!(render_attenuation(&[e1, e2], 0.01, 2.0).is_err());
    }

    #[test]
    fn synth_trace_constants_and_plateau() {
        let budget = LinkBudget::default();
        let e = BlockageEvent {
            onset: 0.5,
            t_decay: 0.1,
            t_hold: 0.3,
            t_rise: 0.1,
            depth_db: 15.0,
        };
        let atten = render_attenuation(std::slice::from_ref(&e), 0.01, 2.0).unwrap();
        let tr =
            synth_power_trace(&budget, &atten, 0.03, 0.0, DEFAULT_P2_DBM, &mut rng(5)).unwrap();
        assert_eq!(tr.p1_dbm[0], budget.p_los_dbm);
        // A sample in the hold region: t = 0.72 s -> index 24.
        assert_relative_eq!(tr.p1_dbm[24], budget.p_los_dbm - 15.0);
        assert!(tr.p2_dbm.iter().all(|&p| p == DEFAULT_P2_DBM));

        let empty = render_attenuation(&[], 0.01, 2.0).unwrap();
        let tr2 = synth_power_trace(&budget, &empty, 0.03, 0.0, DEFAULT_P2_DBM, &mut rng(5)).unwrap();
        assert!(tr2.p1_dbm.iter().all(|&p| p == budget.p_los_dbm));
    }

    #[test]
    fn synth_rejects_non_multiple_tau() {
        let atten = render_attenuation(&[], 0.01, 1.0).unwrap();
        let budget = LinkBudget::default();
        assert!(
            synth_power_trace(&budget, &atten, 0.025, 0.0, DEFAULT_P2_DBM, &mut rng(0)).is_err()
        );
        assert!(
            synth_power_trace(&budget, &atten, 0.005, 0.0, DEFAULT_P2_DBM, &mut rng(0)).is_err()
        );
    }

    #[test]
    fn shannon_rate_examples() {
        let budget = LinkBudget {
            p_los_dbm: 0.0,
            bandwidth_hz: 40.0e6,
            noise_psd_dbm_per_hz: -173.0,
        };
        // p_lin -> 0 => rate -> 0.
        assert!(shannon_rate(-300.0, &budget) < 1.0);
        // SNR = 1 => rate = W.
        let noise_w = dbm_to_watts(-173.0) * 40.0e6;
        let p = watts_to_dbm(noise_w);
        assert_relative_eq!(shannon_rate(p, &budget), 40.0e6, max_relative = 1e-9);
        // SNR = 1023 => rate = 400 Mbit/s.
        let p = watts_to_dbm(1023.0 * noise_w);
        assert_relative_eq!(shannon_rate(p, &budget), 400.0e6, max_relative = 1e-9);
    }

    #[test]
    fn shannon_rate_monotone_nonnegative() {
        let budget = LinkBudget::default();
        let mut prev = -1.0;
        for i in 0..400 {
            let p = -150.0 + i as f64 * 0.5;
            let r = shannon_rate(p, &budget);
            assert!(r >= 0.0);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn p_los_for_rate_inverts_shannon() {
        let budget = LinkBudget::default();
        let p = p_los_for_rate(200.0e6, &budget);
        assert_relative_eq!(shannon_rate(p, &budget), 200.0e6, max_relative = 1e-9);
    }

    #[test]
    fn estimate_recovers_single_event_duration() {
        let budget = LinkBudget::default();
        let e = BlockageEvent {
            onset: 2.0,
            t_decay: 0.15,
            t_hold: 0.25,
            t_rise: 0.12,
            depth_db: 14.0,
        };
        let atten = render_attenuation(std::slice::from_ref(&e), 0.01, 6.0).unwrap();
        let tr = synth_power_trace(&budget, &atten, 0.01, 0.0, DEFAULT_P2_DBM, &mut rng(0)).unwrap();
        let stats = estimate_blockage_stats(&tr, budget.p_los_dbm).unwrap();
        assert_eq!(stats.event_count, 1);
        assert!(
            (stats.durations[0] - e.duration()).abs() <= 2.0 * 0.01,
            "recovered {} vs true {}",
            stats.durations[0],
            e.duration()
        );
    }

    #[test]
    fn estimate_constant_trace_has_no_events() {
        let tr = PowerTrace {
            tau: 0.01,
            p1_dbm: vec![-80.0; 1000],
            p2_dbm: vec![DEFAULT_P2_DBM; 1000],
        };
        let stats = estimate_blockage_stats(&tr, -80.0).unwrap();
        assert_eq!(stats.event_count, 0);
        assert_eq!(stats.blockage_fraction, 0.0);
        assert!(!stats.fit_defined);
    }

    #[test]
    fn roundtrip_fit_recovers_parameters() {
        // sample -> render -> estimate at zero noise recovers the duration
        // scale and mean attenuation within 5% on >= 1e3 events.
        let p = BlockageDistParams::default();
        let budget = LinkBudget::default();
        let mut r = rng(11);
        let duration = 3_500.0;
        let events = sample_blockage_events(&p, duration, &mut r).unwrap();
        assert!(events.len() >= 1_000);
        let atten = render_attenuation(&events, 0.005, duration).unwrap();
        let tr = synth_power_trace(&budget, &atten, 0.005, 0.0, DEFAULT_P2_DBM, &mut r).unwrap();
        let stats = estimate_blockage_stats(&tr, budget.p_los_dbm).unwrap();
        assert!(stats.fit_defined);
        assert_relative_eq!(
            stats.params.duration_scale,
            p.duration_scale,
            max_relative = 0.05
        );
        assert_relative_eq!(
            stats.params.atten_mean_db,
            p.atten_mean_db,
            max_relative = 0.05
        );
    }

    #[test]
    fn weibull_mle_recovers_known_sample() {
        let mut r = rng(4);
        let d = Weibull::new(0.553, 4.08).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| d.sample(&mut r)).collect();
        let (scale, shape) = weibull_mle(&xs).unwrap();
        assert_relative_eq!(scale, 0.553, max_relative = 0.02);
        assert_relative_eq!(shape, 4.08, max_relative = 0.05);
    }
}
