use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{stream_rng, ManoeuvreSchedule, SynthConfig, STREAM_KINEMATICS};
use crate::error::Result;
use crate::kinlab::{wrap_angle, ActionLabel, KinematicTrack};

/// Transitions are cosine ramps centred on the schedule boundary.
pub const RAMP_HALF_WIDTH_S: f64 = 0.25;

const SIGMA_SPEED: f64 = 0.05;
const SIGMA_YAW_RATE: f64 = 0.005;
const FORWARD_SPEED: (f64, f64) = (5.5, 11.5);
const FORWARD_SWAY: f64 = 0.5;
const TURN_SPEED: (f64, f64) = (5.0, 9.0);
const TURN_RATE: (f64, f64) = (0.15, 0.4);

/// Noise-free per-segment motion targets.
#[derive(Debug, Clone, Copy)]
struct Profile {
    speed: f64,
    sway_period: f64,
    sway_phase: f64,
    yaw_rate: f64,
}

impl Profile {
    fn speed_at(&self, t: f64) -> f64 {
        if self.sway_period > 0.0 {
            self.speed + FORWARD_SWAY * (2.0 * PI * t / self.sway_period + self.sway_phase).sin()
        } else {
            self.speed
        }
    }
}

fn draw_profile<R: Rng>(action: ActionLabel, rng: &mut R) -> Profile {
    let still = Profile {
        speed: 0.0,
        sway_period: 0.0,
        sway_phase: 0.0,
        yaw_rate: 0.0,
    };
    match action {
        ActionLabel::Stopped | ActionLabel::Reverse => still,
        ActionLabel::Forward => Profile {
            speed: rng.random_range(FORWARD_SPEED.0..FORWARD_SPEED.1),
            sway_period: rng.random_range(6.0..15.0),
            sway_phase: rng.random_range(0.0..2.0 * PI),
            ..still
        },
        ActionLabel::TurnLeft | ActionLabel::TurnRight => {
            let rate = rng.random_range(TURN_RATE.0..TURN_RATE.1);
            Profile {
                speed: rng.random_range(TURN_SPEED.0..TURN_SPEED.1),
                yaw_rate: if action == ActionLabel::TurnLeft { rate } else { -rate },
                ..still
            }
        }
    }
}

/// Renders a kinematic track from a schedule.
///
/// Velocities are expressed in the same planar frame as the heading, so the
/// direction of travel matches the heading during forward motion.
pub fn gen_kinematics(schedule: &ManoeuvreSchedule, cfg: &SynthConfig) -> Result<KinematicTrack> {
    schedule.validate()?;
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_KINEMATICS);
    let profiles: Vec<Profile> = schedule
        .segments
        .iter()
        .map(|s| draw_profile(s.action, &mut rng))
        .collect();
    let heading0 = rng.random_range(-PI..PI);
    let speed_noise = Normal::new(0.0, SIGMA_SPEED).unwrap();
    let yaw_noise = Normal::new(0.0, SIGMA_YAW_RATE).unwrap();

    let n = (schedule.session_duration * cfg.kin_fs).round() as usize;
    let segs = &schedule.segments;
    let mut timestamps = Vec::with_capacity(n);
    let mut vx = Vec::with_capacity(n);
    let mut vy = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    let mut psi_dot = Vec::with_capacity(n);

    let mut seg = 0;
    let mut heading = heading0;
    let mut prev_rate = 0.0;
    for k in 0..n {
        let t = k as f64 / cfg.kin_fs;
        while seg + 1 < segs.len() && t >= segs[seg].end {
            seg += 1;
        }
        let (mut speed, mut rate) = (profiles[seg].speed_at(t), profiles[seg].yaw_rate);
        // blend with the neighbour across the nearest boundary
        let blend = if seg > 0 && t - segs[seg].start < RAMP_HALF_WIDTH_S {
            Some((seg - 1, seg, segs[seg].start))
        } else if seg + 1 < segs.len() && segs[seg].end - t < RAMP_HALF_WIDTH_S {
            Some((seg, seg + 1, segs[seg].end))
        } else {
            None
        };
        if let Some((a, b, boundary)) = blend {
            let x = (t - boundary + RAMP_HALF_WIDTH_S) / (2.0 * RAMP_HALF_WIDTH_S);
            let w = 0.5 * (1.0 - (PI * x).cos());
            speed = profiles[a].speed_at(t) * (1.0 - w) + profiles[b].speed_at(t) * w;
            rate = profiles[a].yaw_rate * (1.0 - w) + profiles[b].yaw_rate * w;
        }
        if k > 0 {
            heading += 0.5 * (prev_rate + rate) / cfg.kin_fs;
        }
        prev_rate = rate;
        let wrapped = wrap_angle(heading)?;
        timestamps.push(t);
        vx.push(speed * wrapped.cos() + speed_noise.sample(&mut rng));
        vy.push(speed * wrapped.sin() + speed_noise.sample(&mut rng));
        psi.push(wrapped);
        psi_dot.push(rate + yaw_noise.sample(&mut rng));
    }
    KinematicTrack::new(timestamps, vx, vy, psi, psi_dot)
}
