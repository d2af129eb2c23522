//! Flat key=value experiment configuration.
//!
//! The on-disk format is UTF-8 text, one `key = value` pair per line, `#`
//! comments, dotted section keys. Unknown keys are hard errors so typos
//! cannot silently fall back to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Which dataset the experiment runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scenario {
    SyntheticA,
    SyntheticB,
    ExternalTrace,
}

impl Scenario {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic-a" => Ok(Scenario::SyntheticA),
            "synthetic-b" => Ok(Scenario::SyntheticB),
            "external-trace" => Ok(Scenario::ExternalTrace),
            other => Err(Error::Config(format!(
                "scenario must be synthetic-a, synthetic-b or external-trace, got {other:?}"
            ))),
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Scenario::SyntheticA => "synthetic-a",
            Scenario::SyntheticB => "synthetic-b",
            Scenario::ExternalTrace => "external-trace",
        }
    }
}

/// Image-network size selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageNetSize {
    Full,
    Compact,
}

/// Complete experiment configuration; see [`ExperimentConfig::default`] for
/// the schema and defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub external_power_csv: Option<PathBuf>,
    pub external_frames: Option<PathBuf>,

    pub train_duration_s: f64,
    pub test_duration_s: f64,

    pub frame_rate: f64,
    pub spawn_rate: f64,
    /// X coordinate (m) where pedestrians enter the camera's view. Moving it
    /// towards the BS1-STA segment shortens the visual warning horizon.
    pub path_start_x: f64,
    pub ped_speed_min: f64,
    pub ped_speed_max: f64,

    pub p_los_dbm: f64,
    pub p2_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub obs_noise_db: f64,
    /// Trailing RSSI averaging window (epochs) applied to the power agent's
    /// observations; 1 disables smoothing. Depth frames are never smoothed.
    pub obs_avg_epochs: usize,

    pub mdp_window: usize,
    pub mdp_gamma: f64,
    /// Service-disruption values evaluated by `report`.
    pub t_dis_sweep: Vec<f64>,
    /// Primary disruption value for the detailed (lead-time) outputs.
    pub t_dis: f64,

    pub train_iterations: usize,
    /// Independent training restarts per agent; the best test snapshot wins.
    pub train_restarts: usize,
    pub train_batch_size: usize,
    pub train_replay_capacity: usize,
    pub train_target_sync: usize,
    pub train_update_period: usize,
    pub train_learning_rate: f64,
    pub train_rms_decay: f64,
    pub train_reward_scale: f64,
    pub train_epsilon_decrement: f64,
    pub train_epsilon_floor: f64,

    pub image_net: ImageNetSize,
    pub threshold_dbm: f64,
    pub threshold_hysteresis_db: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: Scenario::SyntheticA,
            output_dir: PathBuf::from("out"),
            external_power_csv: None,
            external_frames: None,
            train_duration_s: 240.0,
            test_duration_s: 180.0,
            frame_rate: 30.0,
            spawn_rate: 0.45,
            path_start_x: 0.30,
            ped_speed_min: 0.75,
            ped_speed_max: 1.5,
            p_los_dbm: -82.0,
            p2_dbm: -88.0,
            bandwidth_hz: 40.0e6,
            noise_psd_dbm_per_hz: -173.0,
            obs_noise_db: 0.5,
            obs_avg_epochs: 1,
            mdp_window: 2,
            mdp_gamma: 0.99,
            t_dis_sweep: vec![0.0, 0.03, 0.06, 0.09, 0.12],
            t_dis: 0.09,
            train_iterations: 1000,
            train_restarts: 1,
            train_batch_size: 32,
            train_replay_capacity: 50_000,
            train_target_sync: 10_000,
            train_update_period: 1,
            train_learning_rate: 2.5e-4,
            train_rms_decay: 0.95,
            train_reward_scale: 5.0e-5,
            train_epsilon_decrement: 0.01,
            train_epsilon_floor: 0.01,
            image_net: ImageNetSize::Full,
            threshold_dbm: -85.0,
            threshold_hysteresis_db: 3.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {v:?}")))
}

impl ExperimentConfig {
    /// Applies one `key = value` pair. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "scenario" => self.scenario = Scenario::parse(v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "external.power_csv" => self.external_power_csv = Some(PathBuf::from(v)),
            "external.frames" => self.external_frames = Some(PathBuf::from(v)),
            "train_duration_s" => self.train_duration_s = parse_num(key, v)?,
            "test_duration_s" => self.test_duration_s = parse_num(key, v)?,
            "scene.frame_rate" => self.frame_rate = parse_num(key, v)?,
            "scene.spawn_rate" => self.spawn_rate = parse_num(key, v)?,
            "scene.path_start_x" => self.path_start_x = parse_num(key, v)?,
            "scene.ped_speed_min" => self.ped_speed_min = parse_num(key, v)?,
            "scene.ped_speed_max" => self.ped_speed_max = parse_num(key, v)?,
            "channel.p_los_dbm" => self.p_los_dbm = parse_num(key, v)?,
            "channel.p2_dbm" => self.p2_dbm = parse_num(key, v)?,
            "channel.bandwidth_hz" => self.bandwidth_hz = parse_num(key, v)?,
            "channel.noise_psd_dbm_per_hz" => self.noise_psd_dbm_per_hz = parse_num(key, v)?,
            "channel.obs_noise_db" => self.obs_noise_db = parse_num(key, v)?,
            "channel.obs_avg_epochs" => self.obs_avg_epochs = parse_num(key, v)?,
            "mdp.window" => self.mdp_window = parse_num(key, v)?,
            "mdp.gamma" => self.mdp_gamma = parse_num(key, v)?,
            "mdp.t_dis" => self.t_dis = parse_num(key, v)?,
            "mdp.t_dis_sweep" => {
                self.t_dis_sweep = v
                    .split(',')
                    .map(|p| parse_num::<f64>(key, p.trim()))
                    .collect::<Result<_>>()?;
            }
            "train.iterations" => self.train_iterations = parse_num(key, v)?,
            "train.restarts" => self.train_restarts = parse_num(key, v)?,
            "train.batch_size" => self.train_batch_size = parse_num(key, v)?,
            "train.replay_capacity" => self.train_replay_capacity = parse_num(key, v)?,
            "train.target_sync" => self.train_target_sync = parse_num(key, v)?,
            "train.update_period" => self.train_update_period = parse_num(key, v)?,
            "train.learning_rate" => self.train_learning_rate = parse_num(key, v)?,
            "train.rms_decay" => self.train_rms_decay = parse_num(key, v)?,
            "train.reward_scale" => self.train_reward_scale = parse_num(key, v)?,
            "train.epsilon_decrement" => self.train_epsilon_decrement = parse_num(key, v)?,
            "train.epsilon_floor" => self.train_epsilon_floor = parse_num(key, v)?,
            "net.image" => {
                self.image_net = match v {
                    "full" => ImageNetSize::Full,
                    "compact" => ImageNetSize::Compact,
                    other => {
                        return Err(Error::Config(format!(
                            "net.image must be full or compact, got {other:?}"
                        )))
                    }
                }
            }
            "threshold.dbm" => self.threshold_dbm = parse_num(key, v)?,
            "threshold.hysteresis_db" => self.threshold_hysteresis_db = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses the text format, starting from defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_duration_s > 0.0) || !(self.test_duration_s > 0.0) {
            return Err(Error::Config("durations must be > 0".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("scene.frame_rate must be > 0".into()));
        }
        if self.spawn_rate < 0.0 {
            return Err(Error::Config("scene.spawn_rate must be >= 0".into()));
        }
        if !(self.ped_speed_min > 0.0) || self.ped_speed_max < self.ped_speed_min {
            return Err(Error::Config(
                "scene.ped_speed_min/max must satisfy 0 < min <= max".into(),
            ));
        }
        if !(self.path_start_x >= 0.0) {
            return Err(Error::Config("scene.path_start_x must be >= 0".into()));
        }
        if self.t_dis < 0.0 || self.t_dis_sweep.iter().any(|&t| t < 0.0) {
            return Err(Error::Config("disruption times must be >= 0".into()));
        }
        if self.train_restarts == 0 {
            return Err(Error::Config("train.restarts must be >= 1".into()));
        }
        if self.obs_avg_epochs == 0 {
            return Err(Error::Config("channel.obs_avg_epochs must be >= 1".into()));
        }
        if self.t_dis_sweep.is_empty() {
            return Err(Error::Config("mdp.t_dis_sweep must not be empty".into()));
        }
        if self.scenario == Scenario::ExternalTrace
            && (self.external_power_csv.is_none() || self.external_frames.is_none())
        {
            return Err(Error::Config(
                "external-trace scenario needs external.power_csv and external.frames".into(),
            ));
        }
        Ok(())
    }

    /// Serializes every key in a fixed order; `from_text` of the result
    /// reproduces the configuration exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("scenario", self.scenario.as_str().to_string());
        kv("output_dir", self.output_dir.display().to_string());
        if let Some(p) = &self.external_power_csv {
            kv("external.power_csv", p.display().to_string());
        }
        if let Some(p) = &self.external_frames {
            kv("external.frames", p.display().to_string());
        }
        kv("train_duration_s", self.train_duration_s.to_string());
        kv("test_duration_s", self.test_duration_s.to_string());
        kv("scene.frame_rate", self.frame_rate.to_string());
        kv("scene.spawn_rate", self.spawn_rate.to_string());
        kv("scene.path_start_x", self.path_start_x.to_string());
        kv("scene.ped_speed_min", self.ped_speed_min.to_string());
        kv("scene.ped_speed_max", self.ped_speed_max.to_string());
        kv("channel.p_los_dbm", self.p_los_dbm.to_string());
        kv("channel.p2_dbm", self.p2_dbm.to_string());
        kv("channel.bandwidth_hz", self.bandwidth_hz.to_string());
        kv(
            "channel.noise_psd_dbm_per_hz",
            self.noise_psd_dbm_per_hz.to_string(),
        );
        kv("channel.obs_noise_db", self.obs_noise_db.to_string());
        kv("channel.obs_avg_epochs", self.obs_avg_epochs.to_string());
        kv("mdp.window", self.mdp_window.to_string());
        kv("mdp.gamma", self.mdp_gamma.to_string());
        kv("mdp.t_dis", self.t_dis.to_string());
        kv(
            "mdp.t_dis_sweep",
            self.t_dis_sweep
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("train.iterations", self.train_iterations.to_string());
        kv("train.restarts", self.train_restarts.to_string());
        kv("train.batch_size", self.train_batch_size.to_string());
        kv(
            "train.replay_capacity",
            self.train_replay_capacity.to_string(),
        );
        kv("train.target_sync", self.train_target_sync.to_string());
        kv("train.update_period", self.train_update_period.to_string());
        kv("train.learning_rate", self.train_learning_rate.to_string());
        kv("train.rms_decay", self.train_rms_decay.to_string());
        kv("train.reward_scale", self.train_reward_scale.to_string());
        kv(
            "train.epsilon_decrement",
            self.train_epsilon_decrement.to_string(),
        );
        kv("train.epsilon_floor", self.train_epsilon_floor.to_string());
        kv(
            "net.image",
            match self.image_net {
                ImageNetSize::Full => "full",
                ImageNetSize::Compact => "compact",
            }
            .to_string(),
        );
        kv("threshold.dbm", self.threshold_dbm.to_string());
        kv(
            "threshold.hysteresis_db",
            self.threshold_hysteresis_db.to_string(),
        );
        s
    }

    /// Decision-epoch length implied by the frame rate.
    pub fn tau(&self) -> f64 {
        1.0 / self.frame_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_text();
        let back = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err = ExperimentConfig::from_text("seed = 3\nsed = 4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("sed"), "{msg}");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = ExperimentConfig::from_text(
            "# comment\n\nseed = 9   # trailing comment\nmdp.t_dis_sweep = 0, 0.03\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.t_dis_sweep, vec![0.0, 0.03]);
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = ExperimentConfig::from_text("mdp.gamma = high\n").unwrap_err();
        assert!(err.to_string().contains("mdp.gamma"), "{err}");
        let err = ExperimentConfig::from_text("net.image = tiny\n").unwrap_err();
        assert!(err.to_string().contains("net.image"), "{err}");
    }

    #[test]
    fn external_scenario_requires_paths() {
        let err = ExperimentConfig::from_text("scenario = external-trace\n").unwrap_err();
        assert!(err.to_string().contains("external"), "{err}");
        let ok = ExperimentConfig::from_text(
            "scenario = external-trace\nexternal.power_csv = p.csv\nexternal.frames = f.mmhf\n",
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn negative_durations_rejected() {
        assert!(ExperimentConfig::from_text("train_duration_s = -5\n").is_err());
        assert!(ExperimentConfig::from_text("mdp.t_dis = -0.01\n").is_err());
        assert!(ExperimentConfig::from_text("mdp.t_dis_sweep = 0.03,-1\n").is_err());
    }
}
