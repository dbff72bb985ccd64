use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::frame::{Frame, RadarPoint};
use super::sequence::{Sequence, DEFAULT_FOV_HALF_ANGLE_DEG};
use crate::error::{Error, Result};
use crate::geom::{dot3, norm3, Pose, Vec3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnProfile {
    Straight,
    /// Alternating straight stretches and turns of random sign.
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_frames: usize,
    /// seconds between frames
    pub dt: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub turn_profile: TurnProfile,
    /// rad/s
    pub max_yaw_rate: f64,
    pub points_per_frame: usize,
    /// per-axis position noise, meters
    pub noise_sigma: f64,
    /// radial velocity noise, m/s
    pub rrv_sigma: f64,
    pub outlier_rate: f64,
    pub fov_half_angle_deg: f64,
    pub max_range: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Sensor mounting distance ahead of the vehicle's turning center, meters.
    pub sensor_lever_arm: f64,
    /// Sensor height above ground, meters.
    pub sensor_height: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 200,
            dt: 0.1,
            speed_min: 3.0,
            speed_max: 8.0,
            turn_profile: TurnProfile::Mixed,
            max_yaw_rate: 0.25,
            points_per_frame: 256,
            noise_sigma: 0.05,
            rrv_sigma: 0.05,
            outlier_rate: 0.05,
            fov_half_angle_deg: DEFAULT_FOV_HALF_ANGLE_DEG,
            max_range: 50.0,
            height_min: -3.0,
            height_max: 3.0,
            sensor_lever_arm: 3.0,
            sensor_height: 1.0,
        }
    }
}

impl SynthConfig {
    /// Same scene and motion without position noise, velocity noise or outliers.
    pub fn noiseless(&self) -> Self {
        SynthConfig {
            noise_sigma: 0.0,
            rrv_sigma: 0.0,
            outlier_rate: 0.0,
            ..self.clone()
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: SynthConfig = crate::error::read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::invalid("synth: need at least 2 frames"));
        }
        if self.points_per_frame == 0 {
            return Err(Error::invalid("synth: zero points per frame"));
        }
        if !(self.dt > 0.0) || self.speed_min < 0.0 || self.speed_max < self.speed_min {
            return Err(Error::invalid("synth: bad dt or speed range"));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || self.noise_sigma < 0.0 || self.rrv_sigma < 0.0 {
            return Err(Error::invalid("synth: bad noise settings"));
        }
        if !(self.fov_half_angle_deg > 0.0 && self.fov_half_angle_deg <= 90.0) || !(self.max_range > 1.0) {
            return Err(Error::invalid("synth: bad field of view or range"));
        }
        if self.height_max <= self.height_min {
            return Err(Error::invalid("synth: bad height bounds"));
        }
        Ok(())
    }
}

/// A generated sequence with the motion that produced it.
#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub sequence: Sequence,
    /// Vehicle reference-point poses (turning center), world frame.
    pub body_poses: Vec<Pose>,
    /// Forward speed per frame, m/s.
    pub speeds: Vec<f64>,
    /// Sensor velocity per frame, expressed in the sensor frame.
    pub velocities: Vec<Vec3>,
}

/// Radial velocity of a static point seen from a sensor moving with `v`
/// (both in the sensor frame).
pub fn static_rrv(v: Vec3, p: Vec3) -> f64 {
    let r = norm3(p);
    if r == 0.0 {
        return 0.0;
    }
    -dot3(v, [p[0] / r, p[1] / r, p[2] / r])
}

#[derive(Clone, Copy)]
enum Surface {
    Wall,
    Vehicle,
    Pole,
    Clutter,
}

impl Surface {
    fn rcs(self) -> (f64, f64) {
        match self {
            Surface::Wall => (10.0, 3.0),
            Surface::Vehicle => (15.0, 4.0),
            Surface::Pole => (5.0, 2.0),
            Surface::Clutter => (0.0, 3.0),
        }
    }
}

struct WorldPoint {
    p: Vec3,
    class: Surface,
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

fn motion(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.n_frames;
    let mut speeds = Vec::with_capacity(n);
    let mut yaw_rates = Vec::with_capacity(n);
    let mut target_v = rng.random_range(cfg.speed_min..=cfg.speed_max);
    let mut v = target_v;
    let mut w = 0.0;
    let mut target_w = 0.0;
    let mut seg_left = 0usize;
    let mut turning = true;
    for k in 0..n {
        if k % 50 == 0 && k > 0 {
            target_v = rng.random_range(cfg.speed_min..=cfg.speed_max);
        }
        v += 0.05 * (target_v - v);
        if cfg.turn_profile == TurnProfile::Mixed {
            if seg_left == 0 {
                turning = !turning;
                if turning {
                    seg_left = rng.random_range(15..=40);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    target_w = sign * rng.random_range(0.3..=1.0) * cfg.max_yaw_rate;
                } else {
                    seg_left = rng.random_range(20..=60);
                    target_w = 0.0;
                }
            }
            seg_left -= 1;
            w += 0.2 * (target_w - w);
        }
        speeds.push(v);
        yaw_rates.push(w);
    }
    (speeds, yaw_rates)
}

fn sample_rect(
    rng: &mut ChaCha8Rng,
    out: &mut Vec<WorldPoint>,
    origin: Vec3,
    a: Vec3,
    b: Vec3,
    density: f64,
    class: Surface,
) {
    let area = norm3(a) * norm3(b);
    let n = (area * density).ceil() as usize;
    for _ in 0..n {
        let (s, t): (f64, f64) = (rng.random(), rng.random());
        out.push(WorldPoint {
            p: [
                origin[0] + s * a[0] + t * b[0],
                origin[1] + s * a[1] + t * b[1],
                origin[2] + s * a[2] + t * b[2],
            ],
            class,
        });
    }
}

fn build_world(cfg: &SynthConfig, body: &[Pose], rng: &mut ChaCha8Rng) -> Vec<WorldPoint> {
    let ground = -cfg.sensor_height;
    let mut anchors: Vec<(Vec3, f64)> = Vec::new();
    let mut since = f64::INFINITY;
    for w in body.windows(2) {
        since += crate::geom::dist3(w[0].t, w[1].t);
        if since >= 6.0 {
            anchors.push((w[0].t, w[0].q.yaw()));
            since = 0.0;
        }
    }
    let last = body.last().expect("n_frames >= 2");
    let yaw = last.q.yaw();
    // Extend past the end so the final frames see structure ahead.
    for i in 0..=((cfg.max_range / 6.0) as usize + 1) {
        let d = i as f64 * 6.0;
        anchors.push(([last.t[0] + d * yaw.cos(), last.t[1] + d * yaw.sin(), 0.0], yaw));
    }
    let mut pts = Vec::new();
    for &(c, h) in &anchors {
        let (fx, fy) = (h.cos(), h.sin());
        let (lx, ly) = (-fy, fx);
        for side in [-1.0, 1.0] {
            if rng.random_bool(0.45) {
                let off = side * rng.random_range(5.0..15.0);
                let len = rng.random_range(6.0..20.0);
                let ang = h + rng.random_range(-0.3..0.3);
                let top = rng.random_range(1.5..3.5);
                let o = [c[0] + off * lx - 0.5 * len * ang.cos(), c[1] + off * ly - 0.5 * len * ang.sin(), ground];
                sample_rect(rng, &mut pts, o, [len * ang.cos(), len * ang.sin(), 0.0], [0.0, 0.0, top], 1.5, Surface::Wall);
            }
            if rng.random_bool(0.35) {
                let off = side * rng.random_range(3.0..8.0);
                let along = rng.random_range(-3.0..3.0);
                let ang = h + rng.random_range(-0.2..0.2);
                let (ax, ay) = (ang.cos(), ang.sin());
                let (bx, by) = (-ay, ax);
                let (l, w, ht) = (4.5, 1.8, 1.5);
                let ctr = [c[0] + off * lx + along * fx, c[1] + off * ly + along * fy];
                let corner = [ctr[0] - 0.5 * l * ax - 0.5 * w * bx, ctr[1] - 0.5 * l * ay - 0.5 * w * by, ground];
                let along_v = [l * ax, l * ay, 0.0];
                let across_v = [w * bx, w * by, 0.0];
                let up = [0.0, 0.0, ht];
                let add = |p: Vec3, q: Vec3| [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                sample_rect(rng, &mut pts, corner, along_v, up, 3.0, Surface::Vehicle);
                sample_rect(rng, &mut pts, add(corner, across_v), along_v, up, 3.0, Surface::Vehicle);
                sample_rect(rng, &mut pts, corner, across_v, up, 3.0, Surface::Vehicle);
                sample_rect(rng, &mut pts, add(corner, along_v), across_v, up, 3.0, Surface::Vehicle);
                sample_rect(rng, &mut pts, add(corner, up), along_v, across_v, 3.0, Surface::Vehicle);
            }
            if rng.random_bool(0.5) {
                let off = side * rng.random_range(2.5..20.0);
                let along = rng.random_range(-3.0..3.0);
                let base = [c[0] + off * lx + along * fx, c[1] + off * ly + along * fy];
                let height = rng.random_range(3.0..5.0);
                for _ in 0..40 {
                    let a = rng.random_range(0.0..2.0 * PI);
                    pts.push(WorldPoint {
                        p: [base[0] + 0.15 * a.cos(), base[1] + 0.15 * a.sin(), ground + rng.random_range(0.0..height)],
                        class: Surface::Pole,
                    });
                }
            }
        }
        for _ in 0..6 {
            let off: f64 = rng.random_range(-30.0..30.0);
            if off.abs() < 2.0 {
                continue;
            }
            let along = rng.random_range(-3.0..3.0);
            let base = [c[0] + off * lx + along * fx, c[1] + off * ly + along * fy, ground + rng.random_range(0.0..2.0)];
            for _ in 0..5 {
                pts.push(WorldPoint {
                    p: [
                        base[0] + rng.random_range(-0.3..0.3),
                        base[1] + rng.random_range(-0.3..0.3),
                        base[2] + rng.random_range(-0.3..0.3),
                    ],
                    class: Surface::Clutter,
                });
            }
        }
    }
    pts
}

/// Generates a sequence with ground-truth sensor poses.
///
/// The vehicle follows a unicycle model integrated with forward Euler steps
/// (move `v dt` along the heading, then turn by `w dt`). The sensor is
/// mounted `sensor_lever_arm` meters ahead of the turning center, so yaw rate
/// shows up as lateral sensor velocity. Frames sample visible points of a
/// static world of walls, parked vehicles, poles and clutter; each point gets
/// Gaussian position noise and a radial velocity `-(v_sensor . u) + noise`.
/// Outliers are uniform in the field of view with random radial velocity.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SynthSequence> {
    cfg.validate()?;
    let mut rng_motion = stream(seed, 0);
    let mut rng_world = stream(seed, 1);
    let mut rng_pick = stream(seed, 2);
    let mut rng_noise = stream(seed, 3);

    let (speeds, yaw_rates) = motion(cfg, &mut rng_motion);
    let n = cfg.n_frames;
    let mut body = Vec::with_capacity(n);
    let (mut x, mut y, mut yaw) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..n {
        body.push(Pose::planar(x, y, yaw));
        x += speeds[k] * cfg.dt * yaw.cos();
        y += speeds[k] * cfg.dt * yaw.sin();
        yaw += yaw_rates[k] * cfg.dt;
    }
    let mount = Pose::from_translation([cfg.sensor_lever_arm, 0.0, 0.0]);
    let sensor0_inv = body[0].compose(&mount).inverse();
    let sensor: Vec<Pose> = body
        .iter()
        .map(|b| sensor0_inv.compose(&b.compose(&mount)))
        .collect();
    let velocities: Vec<Vec3> = speeds
        .iter()
        .zip(&yaw_rates)
        .map(|(&v, &w)| [v, w * cfg.sensor_lever_arm, 0.0])
        .collect();

    let world = build_world(cfg, &body, &mut rng_world);
    let fov = cfg.fov_half_angle_deg.to_radians();
    let n_out = (cfg.points_per_frame as f64 * cfg.outlier_rate).round() as usize;
    let n_in = cfg.points_per_frame - n_out;
    let pos_noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma >= 0");
    let vel_noise = Normal::new(0.0, cfg.rrv_sigma).expect("sigma >= 0");
    let vmax = cfg.speed_max + 2.0;

    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        // World poses of the sensor, for visibility.
        let to_sensor = body[k].compose(&mount).inverse();
        let visible: Vec<(Vec3, Surface)> = world
            .iter()
            .filter_map(|w| {
                let p = to_sensor.apply(w.p);
                let r = norm3(p);
                let ok = r > 0.5
                    && r <= cfg.max_range
                    && p[1].atan2(p[0]).abs() <= fov
                    && p[2] >= cfg.height_min
                    && p[2] <= cfg.height_max;
                ok.then_some((p, w.class))
            })
            .collect();
        let mut points = Vec::with_capacity(cfg.points_per_frame);
        let chosen: Vec<usize> = if visible.is_empty() {
            log::warn!("synth frame {k}: no visible structure");
            Vec::new()
        } else if visible.len() >= n_in {
            index::sample(&mut rng_pick, visible.len(), n_in).into_vec()
        } else {
            (0..n_in).map(|_| rng_pick.random_range(0..visible.len())).collect()
        };
        for i in chosen {
            let (p, class) = visible[i];
            let (mu, sd) = class.rcs();
            let rrv = static_rrv(velocities[k], p) + vel_noise.sample(&mut rng_noise);
            points.push(RadarPoint {
                x: p[0] + pos_noise.sample(&mut rng_noise),
                y: p[1] + pos_noise.sample(&mut rng_noise),
                z: p[2] + pos_noise.sample(&mut rng_noise),
                rcs: mu + sd * rng_noise.sample::<f64, _>(rand_distr::StandardNormal),
                rrv,
            });
        }
        while points.len() < cfg.points_per_frame {
            let r = rng_noise.random_range(1.0..cfg.max_range);
            let az = rng_noise.random_range(-fov..=fov);
            let z = rng_noise.random_range(cfg.height_min..=cfg.height_max);
            points.push(RadarPoint {
                x: r * az.cos(),
                y: r * az.sin(),
                z,
                rcs: rng_noise.random_range(-15.0..5.0),
                rrv: rng_noise.random_range(-vmax..vmax),
            });
        }
        let mut f = Frame::new(k as u64, points);
        f.gt_pose = Some(sensor[k]);
        frames.push(f);
    }
    Ok(SynthSequence {
        sequence: Sequence {
            name: format!("synth-{seed}"),
            frames,
        },
        body_poses: body,
        speeds,
        velocities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::augment_flip;

    #[test]
    fn rrv_model_cases() {
        assert_eq!(static_rrv([1.0, 0.0, 0.0], [10.0, 0.0, 0.0]), -1.0);
        assert_eq!(static_rrv([0.0, 0.0, 0.0], [3.0, 4.0, 0.0]), 0.0);
        assert_eq!(static_rrv([1.0, 0.0, 0.0], [0.0, 5.0, 0.0]), 0.0);
    }

    #[test]
    fn zero_speed_gives_zero_rrv() {
        let cfg = SynthConfig {
            n_frames: 3,
            speed_min: 0.0,
            speed_max: 0.0,
            turn_profile: TurnProfile::Straight,
            ..SynthConfig::default().noiseless()
        };
        let s = synth_generate(&cfg, 1).unwrap();
        for f in &s.sequence.frames {
            assert!(f.points.iter().all(|p| p.rrv == 0.0));
        }
    }

    #[test]
    fn static_points_follow_velocity_model() {
        let cfg = SynthConfig {
            n_frames: 30,
            noise_sigma: 0.0,
            rrv_sigma: 0.0,
            outlier_rate: 0.0,
            ..Default::default()
        };
        let s = synth_generate(&cfg, 7).unwrap();
        for (f, v) in s.sequence.frames.iter().zip(&s.velocities) {
            for p in &f.points {
                assert!((p.rrv - static_rrv(*v, p.xyz())).abs() < 1e-12);
            }
        }
        // Time reversal negates the sensor velocity, so the model still holds.
        let flipped = augment_flip(&s.sequence).unwrap();
        for (f, v) in flipped.frames.iter().zip(s.velocities.iter().rev()) {
            let neg = [-v[0], -v[1], -v[2]];
            for p in &f.points {
                assert!((p.rrv - static_rrv(neg, p.xyz())).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arc_length_matches_speed_integral() {
        for arm in [0.0, 3.0] {
            let cfg = SynthConfig {
                sensor_lever_arm: arm,
                ..Default::default()
            };
            let s = synth_generate(&cfg, 3).unwrap();
            let expect: f64 = s.speeds[..cfg.n_frames - 1].iter().map(|v| v * cfg.dt).sum();
            let body: f64 = s.body_poses.windows(2).map(|w| crate::geom::dist3(w[0].t, w[1].t)).sum();
            assert!((body - expect).abs() < 1e-9, "{body} vs {expect}");
            if arm == 0.0 {
                let gt = s.sequence.gt_trajectory().unwrap();
                assert!((gt.total_length() - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frames_are_full_and_in_bounds() {
        let cfg = SynthConfig::default();
        let s = synth_generate(&cfg, 0).unwrap();
        assert_eq!(s.sequence.frames.len(), 200);
        for f in &s.sequence.frames {
            assert_eq!(f.points.len(), 256);
            assert!(f.points.iter().all(|p| p.is_finite()));
        }
        assert_eq!(s.sequence.frames[0].gt_pose, Some(Pose::IDENTITY));
    }

    #[test]
    fn seeded_and_validated() {
        let cfg = SynthConfig {
            n_frames: 5,
            ..Default::default()
        };
        let a = synth_generate(&cfg, 9).unwrap();
        let b = synth_generate(&cfg, 9).unwrap();
        assert_eq!(a.sequence, b.sequence);
        let bad = SynthConfig {
            points_per_frame: 0,
            ..cfg.clone()
        };
        assert!(synth_generate(&bad, 0).is_err());
        let bad = SynthConfig { n_frames: 1, ..cfg };
        assert!(synth_generate(&bad, 0).is_err());
    }
}
