//! Synthetic indoor scene: pedestrians crossing the BS1-STA line of sight
//! and 40x40 depth frames rendered from a pinhole camera, aligned with the
//! power trace they induce.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};

use crate::channel::{BlockageDistParams, LinkBudget, PowerTrace};
use crate::error::{Error, Result};

/// Near clip of the depth quantization, meters. Maps to pixel value 255.
pub const DEPTH_NEAR_M: f64 = 0.3;
/// Far clip of the depth quantization, meters. Everything beyond maps to 0.
pub const DEPTH_FAR_M: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self.scale(1.0 / n)
    }
}

/// Which of the two measurement-style camera placements is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraAngle {
    A,
    B,
}

impl CameraAngle {
    pub fn position(self) -> Vec3 {
        match self {
            CameraAngle::A => Vec3::new(0.60, 2.65, 1.50),
            CameraAngle::B => Vec3::new(1.80, 0.45, 1.25),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Room extents: width (x), length (y), height (z) in meters.
    pub room: Vec3,
    pub bs1_pos: Vec3,
    pub sta_pos: Vec3,
    pub camera_angle_id: CameraAngle,
    pub camera_pos: Vec3,
    /// Pedestrians walk from `path_start` to `path_end` (ground points).
    pub path_start: Vec3,
    pub path_end: Vec3,
    pub pedestrian_speed_range: (f64, f64),
    /// Body width range in meters.
    pub pedestrian_size_range: (f64, f64),
    pub pedestrian_height_range: (f64, f64),
    pub frame_rate: f64,
    pub resolution: (u32, u32),
    /// Mean pedestrian arrivals per second at the path start.
    pub spawn_rate: f64,
}

impl SceneConfig {
    pub fn for_angle(angle: CameraAngle) -> Self {
        Self {
            room: Vec3::new(5.34, 4.87, 2.57),
            bs1_pos: Vec3::new(2.67, 4.40, 0.85),
            sta_pos: Vec3::new(2.67, 0.90, 0.70),
            camera_angle_id: angle,
            camera_pos: angle.position(),
            path_start: Vec3::new(0.30, 2.20, 0.0),
            path_end: Vec3::new(5.04, 2.20, 0.0),
            pedestrian_speed_range: (0.75, 1.5),
            pedestrian_size_range: (0.4, 0.6),
            pedestrian_height_range: (1.5, 1.9),
            frame_rate: 30.0,
            resolution: (40, 40),
            spawn_rate: 0.45,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "frame_rate must be > 0, got {}",
                self.frame_rate
            )));
        }
        for (name, p) in [
            ("bs1_pos", self.bs1_pos),
            ("sta_pos", self.sta_pos),
            ("camera_pos", self.camera_pos),
        ] {
            if !self.contains(p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} ({:.2}, {:.2}, {:.2}) is outside the room",
                    p.x, p.y, p.z
                )));
            }
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidParameter("zero resolution".into()));
        }
        Ok(())
    }

    fn contains(&self, p: Vec3) -> bool {
        p.x >= 0.0
            && p.x <= self.room.x
            && p.y >= 0.0
            && p.y <= self.room.y
            && p.z >= 0.0
            && p.z <= self.room.z
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::for_angle(CameraAngle::A)
    }
}

/// A walking obstacle, modeled as an upright square-base cuboid.
///
/// `position` is the ground point under the body center. `depth_db` is the
/// attenuation this pedestrian induces on the LOS while crossing it, drawn
/// from the blockage depth law at spawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub position: Vec3,
    pub velocity: Vec3,
    pub width: f64,
    pub height: f64,
    pub depth_db: f64,
}

fn sample_positive_normal<R: Rng>(mean: f64, std: f64, rng: &mut R) -> f64 {
    let dist = Normal::new(mean, std.max(1e-300)).expect("finite std");
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Spawns a pedestrian at the path start with randomized speed and size.
pub fn spawn_pedestrian<R: Rng>(
    cfg: &SceneConfig,
    dist: &BlockageDistParams,
    rng: &mut R,
) -> Pedestrian {
    let (lo, hi) = cfg.pedestrian_speed_range;
    let speed = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let (wlo, whi) = cfg.pedestrian_size_range;
    let width = if whi > wlo { rng.gen_range(wlo..whi) } else { wlo };
    let (hlo, hhi) = cfg.pedestrian_height_range;
    let height = if hhi > hlo { rng.gen_range(hlo..hhi) } else { hlo };
    let dir = cfg.path_end.sub(cfg.path_start).normalized();
    Pedestrian {
        position: cfg.path_start,
        velocity: dir.scale(speed),
        width,
        height,
        depth_db: sample_positive_normal(dist.atten_mean_db, dist.atten_std_db, rng),
    }
}

fn path_progress(cfg: &SceneConfig, p: Vec3) -> f64 {
    let d = cfg.path_end.sub(cfg.path_start);
    p.sub(cfg.path_start).dot(d) / d.dot(d)
}

/// Advances pedestrians along the configured path; walkers that exit the
/// room respawn at the path start with a freshly randomized speed.
pub fn step_pedestrians<R: Rng>(
    peds: &[Pedestrian],
    cfg: &SceneConfig,
    dt: f64,
    dist: &BlockageDistParams,
    rng: &mut R,
) -> Result<Vec<Pedestrian>> {
    if dt < 0.0 {
        return Err(Error::InvalidParameter(format!("dt must be >= 0, got {dt}")));
    }
    let mut out = Vec::with_capacity(peds.len());
    for p in peds {
        let mut p = p.clone();
        p.position = p.position.add(p.velocity.scale(dt));
        if path_progress(cfg, p.position) > 1.0 {
            p = spawn_pedestrian(cfg, dist, rng);
        }
        out.push(p);
    }
    Ok(out)
}

fn point_segment_dist_2d(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * abx - p.0, a.1 + t * aby - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn intersects_los(ped: &Pedestrian, bs1: Vec3, sta: Vec3) -> bool {
    // Plan-view test: the body cylinder spans the full link height here, so
    // the 2D distance from the body axis to the LOS segment decides.
    let d = point_segment_dist_2d(
        (ped.position.x, ped.position.y),
        (bs1.x, bs1.y),
        (sta.x, sta.y),
    );
    d <= ped.width / 2.0 // closed condition: grazing tangency blocks
}

/// Attenuation induced right now by `peds` on the BS1-STA line of sight.
///
/// Zero when no pedestrian's bounding cylinder touches the LOS segment,
/// otherwise the largest per-pedestrian configured depth.
pub fn occlusion_depth(peds: &[Pedestrian], bs1_pos: Vec3, sta_pos: Vec3) -> f64 {
    peds.iter()
        .filter(|p| intersects_los(p, bs1_pos, sta_pos))
        .map(|p| p.depth_db)
        .fold(0.0, f64::max)
}

/// 8-bit depth image, row-major; 255 = near clip, 0 = at/beyond far clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl DepthFrame {
    pub fn at(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }
}

fn quantize_depth(d: f64) -> u8 {
    if d <= DEPTH_NEAR_M {
        255
    } else if d >= DEPTH_FAR_M {
        0
    } else {
        (255.0 * (DEPTH_FAR_M - d) / (DEPTH_FAR_M - DEPTH_NEAR_M)).round() as u8
    }
}

/// Pinhole camera derived from a scene configuration.
pub struct Camera {
    pos: Vec3,
    fwd: Vec3,
    right: Vec3,
    up: Vec3,
    tan_x: f64,
    tan_y: f64,
    width: u32,
    height: u32,
}

impl Camera {
    pub fn new(cfg: &SceneConfig) -> Self {
        let target = cfg.bs1_pos.add(cfg.sta_pos).scale(0.5);
        let fwd = target.sub(cfg.camera_pos).normalized();
        let world_up = Vec3::new(0.0, 0.0, 1.0);
        let right = fwd.cross(world_up).normalized();
        let up = right.cross(fwd).normalized();
        Self {
            pos: cfg.camera_pos,
            fwd,
            right,
            up,
            tan_x: (90f64.to_radians() / 2.0).tan(),
            tan_y: (70f64.to_radians() / 2.0).tan(),
            width: cfg.resolution.0,
            height: cfg.resolution.1,
        }
    }

    fn ray(&self, px: u32, py: u32) -> Vec3 {
        let nx = (px as f64 + 0.5) / self.width as f64 * 2.0 - 1.0;
        let ny = 1.0 - (py as f64 + 0.5) / self.height as f64 * 2.0;
        self.fwd
            .add(self.right.scale(nx * self.tan_x))
            .add(self.up.scale(ny * self.tan_y))
            .normalized()
    }

    /// Projects a world point into pixel coordinates; `None` when behind the
    /// camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let rel = p.sub(self.pos);
        let z = rel.dot(self.fwd);
        if z <= 1e-9 {
            return None;
        }
        let x = rel.dot(self.right) / z / self.tan_x;
        let y = rel.dot(self.up) / z / self.tan_y;
        Some((
            (x + 1.0) / 2.0 * self.width as f64 - 0.5,
            (1.0 - y) / 2.0 * self.height as f64 - 0.5,
        ))
    }
}

/// Slab-test intersection of a ray with an axis-aligned box.
/// Returns `(t_enter, t_exit)` for the parametric hits, possibly negative.
fn ray_aabb(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d, l, h) in [
        (origin.x, dir.x, lo.x, hi.x),
        (origin.y, dir.y, lo.y, hi.y),
        (origin.z, dir.z, lo.z, hi.z),
    ] {
        if d.abs() < 1e-12 {
            if o < l || o > h {
                return None;
            }
        } else {
            let (a, b) = ((l - o) / d, (h - o) / d);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

/// Renders the room and pedestrian cuboids into a depth buffer.
pub fn render_depth_frame(peds: &[Pedestrian], cfg: &SceneConfig) -> Result<DepthFrame> {
    if !cfg.contains(cfg.camera_pos) {
        return Err(Error::InvalidParameter("camera outside room".into()));
    }
    let cam = Camera::new(cfg);
    let (w, h) = cfg.resolution;
    let mut pixels = vec![0u8; (w * h) as usize];
    let room_lo = Vec3::new(0.0, 0.0, 0.0);
    let room_hi = cfg.room;
    let boxes: Vec<(Vec3, Vec3)> = peds
        .iter()
        .map(|p| {
            let r = p.width / 2.0;
            (
                Vec3::new(p.position.x - r, p.position.y - r, 0.0),
                Vec3::new(p.position.x + r, p.position.y + r, p.height),
            )
        })
        .collect();
    for py in 0..h {
        for px in 0..w {
            let dir = cam.ray(px, py);
            // Camera is inside the room: the wall hit is the slab exit.
            let mut depth = ray_aabb(cam.pos, dir, room_lo, room_hi)
                .map(|(_, t1)| t1)
                .unwrap_or(f64::INFINITY);
            for (lo, hi) in &boxes {
                if let Some((t0, t1)) = ray_aabb(cam.pos, dir, *lo, *hi) {
                    if t1 > 0.0 {
                        // t0 < 0 means the camera is inside the body.
                        let t = t0.max(0.0);
                        if t < depth {
                            depth = t;
                        }
                    }
                }
            }
            pixels[(py * w + px) as usize] = quantize_depth(depth);
        }
    }
    Ok(DepthFrame {
        width: w,
        height: h,
        pixels,
    })
}

/// One contiguous occlusion of the LOS, with the ramp shape attached.
#[derive(Debug, Clone)]
struct CrossingEvent {
    start: f64,
    end: f64,
    depth_db: f64,
    t_decay: f64,
    t_rise: f64,
}

impl CrossingEvent {
    fn attenuation_at(&self, t: f64) -> f64 {
        if t < self.start {
            return 0.0;
        }
        let ramp = |dt: f64| {
            if self.t_decay <= 0.0 {
                1.0
            } else {
                (dt / self.t_decay).min(1.0)
            }
        };
        if t <= self.end {
            self.depth_db * ramp(t - self.start)
        } else {
            let at_end = self.depth_db * ramp(self.end - self.start);
            if self.t_rise <= 0.0 {
                return 0.0;
            }
            let down = at_end - self.depth_db * (t - self.end) / self.t_rise;
            down.max(0.0)
        }
    }

    fn extent_end(&self) -> f64 {
        let at_end = if self.t_decay <= 0.0 {
            self.depth_db
        } else {
            self.depth_db * ((self.end - self.start) / self.t_decay).min(1.0)
        };
        self.end + self.t_rise * at_end / self.depth_db.max(1e-12)
    }

    /// Times at which the combined attenuation of this event crosses 3 dB
    /// up and down; `None` when the event never reaches 3 dB.
    fn window_3db(&self) -> Option<(f64, f64)> {
        let at_end = if self.t_decay <= 0.0 {
            self.depth_db
        } else {
            self.depth_db * ((self.end - self.start) / self.t_decay).min(1.0)
        };
        if at_end <= 3.0 && self.depth_db * 1.0 <= 3.0 {
            return None;
        }
        let up = if self.t_decay <= 0.0 {
            self.start
        } else {
            self.start + self.t_decay * (3.0 / self.depth_db)
        };
        if up > self.end {
            return None; // never reached 3 dB before the crossing ended
        }
        let down = if at_end <= 3.0 {
            self.end
        } else {
            self.end + self.t_rise * (at_end - 3.0) / self.depth_db.max(1e-12)
        };
        Some((up, down))
    }
}

/// Aligned frames, powers, and ground-truth labels for one synthetic run.
#[derive(Debug, Clone)]
pub struct SyntheticEpisode {
    pub frames: Vec<DepthFrame>,
    pub power: PowerTrace,
    /// Times where the attenuation first exceeds 3 dB (evaluation only).
    pub blockage_onsets: Vec<f64>,
    /// 3 dB-crossing windows (onset, end) per event (evaluation only).
    pub blockage_windows: Vec<(f64, f64)>,
    /// Pedestrian snapshots per frame (evaluation only).
    pub ped_tracks: Vec<Vec<Pedestrian>>,
}

struct EpisodeTimeline {
    events: Vec<CrossingEvent>,
    /// Pedestrian snapshots per frame; empty when tracking is disabled.
    tracks: Vec<Vec<Pedestrian>>,
}

/// Runs the arrival/motion/occlusion simulation on the frame grid.
fn simulate_timeline<R: Rng>(
    cfg: &SceneConfig,
    dist: &BlockageDistParams,
    n_frames: usize,
    dt: f64,
    track: bool,
    rng: &mut R,
) -> Result<EpisodeTimeline> {
    let arrivals = if cfg.spawn_rate > 0.0 {
        Some(Exp::new(cfg.spawn_rate).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let rise5_dist = LogNormal::new(dist.rise5db_logmean, dist.rise5db_logstd)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut peds: Vec<Pedestrian> = Vec::new();
    // Whether each pedestrian was on the LOS last frame, and its open event.
    let mut crossing: Vec<Option<usize>> = Vec::new();
    let mut events: Vec<CrossingEvent> = Vec::new();
    let mut tracks = Vec::new();
    let mut next_spawn = arrivals.map(|a| a.sample(rng)).unwrap_or(f64::INFINITY);

    for k in 0..n_frames {
        let t = k as f64 * dt;
        while t >= next_spawn {
            peds.push(spawn_pedestrian(cfg, dist, rng));
            crossing.push(None);
            next_spawn += arrivals.expect("spawn scheduled").sample(rng);
        }
        for (i, p) in peds.iter().enumerate() {
            let on_los = intersects_los(p, cfg.bs1_pos, cfg.sta_pos);
            match (on_los, crossing[i]) {
                (true, None) => {
                    let decay5 = sample_positive_normal(dist.decay5db_mean, dist.decay5db_std, rng);
                    let rise5 = rise5_dist.sample(rng);
                    let depth = p.depth_db;
                    events.push(CrossingEvent {
                        start: t,
                        end: f64::INFINITY,
                        depth_db: depth,
                        t_decay: decay5 * depth / 5.0,
                        t_rise: rise5 * depth / 5.0,
                    });
                    crossing[i] = Some(events.len() - 1);
                }
                (false, Some(ev)) => {
                    events[ev].end = t;
                    crossing[i] = None;
                }
                _ => {}
            }
        }
        if track {
            tracks.push(peds.clone());
        }
        // Advance; walkers that finish the path leave the scene.
        let mut survivors = Vec::with_capacity(peds.len());
        let mut surv_cross = Vec::with_capacity(peds.len());
        for (i, p) in peds.iter().enumerate() {
            let mut p = p.clone();
            p.position = p.position.add(p.velocity.scale(dt));
            if path_progress(cfg, p.position) <= 1.0 {
                survivors.push(p);
                surv_cross.push(crossing[i]);
            } else if let Some(ev) = crossing[i] {
                events[ev].end = t + dt;
            }
        }
        peds = survivors;
        crossing = surv_cross;
    }
    let end_t = n_frames as f64 * dt;
    for e in &mut events {
        if !e.end.is_finite() {
            e.end = end_t;
        }
    }
    Ok(EpisodeTimeline { events, tracks })
}

/// Generates an aligned synthetic episode: depth frames, the power trace the
/// pedestrians induce, and ground-truth blockage labels.
pub fn generate_episode<R: Rng>(
    cfg: &SceneConfig,
    budget: &LinkBudget,
    dist: &BlockageDistParams,
    duration: f64,
    noise_db_std: f64,
    p2_dbm: f64,
    rng: &mut R,
) -> Result<SyntheticEpisode> {
    cfg.validate()?;
    dist.validate()?;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be > 0, got {duration}"
        )));
    }
    let dt = 1.0 / cfg.frame_rate;
    let n_frames = (duration * cfg.frame_rate).round() as usize;
    let timeline = simulate_timeline(cfg, dist, n_frames, dt, true, rng)?;

    let mut frames = Vec::with_capacity(n_frames);
    for peds in &timeline.tracks {
        frames.push(render_depth_frame(peds, cfg)?);
    }

    let noise = if noise_db_std > 0.0 {
        Some(Normal::new(0.0, noise_db_std).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let mut p1 = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let t = k as f64 * dt;
        let atten = timeline
            .events
            .iter()
            .map(|e| e.attenuation_at(t))
            .fold(0.0, f64::max);
        let w = noise.map_or(0.0, |d| d.sample(rng));
        p1.push(budget.p_los_dbm - atten + w);
    }
    let power = PowerTrace {
        tau: dt,
        p2_dbm: vec![p2_dbm; p1.len()],
        p1_dbm: p1,
    };

    let mut windows: Vec<(f64, f64)> = timeline
        .events
        .iter()
        .filter_map(|e| e.window_3db())
        .filter(|&(up, _)| up < duration)
        .collect();
    windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Merge overlapping windows from simultaneous crossings.
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.0 <= last.1 => last.1 = last.1.max(w.1),
            _ => merged.push(w),
        }
    }
    Ok(SyntheticEpisode {
        frames,
        power,
        blockage_onsets: merged.iter().map(|&(u, _)| u).collect(),
        blockage_windows: merged,
        ped_tracks: timeline.tracks,
    })
}

/// Fraction of `duration` with nonzero pedestrian-induced attenuation, using
/// the same arrival and crossing model as [`generate_episode`] but without
/// rendering.
pub fn simulate_blockage_fraction<R: Rng>(
    cfg: &SceneConfig,
    spawn_rate: f64,
    duration: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.spawn_rate = spawn_rate;
    let dist = BlockageDistParams::default();
    let dt = 1.0 / cfg.frame_rate;
    let n_frames = (duration * cfg.frame_rate).round() as usize;
    let timeline = simulate_timeline(&cfg, &dist, n_frames, dt, false, rng)?;
    let mut extents: Vec<(f64, f64)> = timeline
        .events
        .iter()
        .map(|e| (e.start, e.extent_end().min(duration)))
        .collect();
    extents.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut blocked = 0.0;
    let mut cursor = 0.0;
    for (s, e) in extents {
        let s = s.max(cursor);
        if e > s {
            blocked += e - s;
            cursor = e;
        }
    }
    Ok(blocked / duration)
}
