//! Synthetic driving sessions with a known manoeuvre schedule.
//!
//! A session is a [`ManoeuvreSchedule`] plus the kinematic track and EEG
//! recording rendered from it. Each stage draws from its own ChaCha stream
//! derived from the same seed, so the three outputs are reproducible and
//! independent of one another.

mod eeg;
mod kinematics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinlab::ActionLabel;

pub use eeg::{gen_eeg, hemisphere, lateral_weight, signature_amplitude, EegRecording, Hemisphere};
pub use kinematics::{gen_kinematics, RAMP_HALF_WIDTH_S};

/// The 16 scalp channels of the recording cap, in acquisition order.
pub const DEFAULT_CHANNELS: [&str; 16] = [
    "Fp1", "Fp2", "C3", "C4", "T3", "T4", "O1", "O2", "F7", "F8", "F3", "F4", "T5", "T6", "P3", "P4",
];

pub(crate) const STREAM_SCHEDULE: u64 = 0;
pub(crate) const STREAM_KINEMATICS: u64 = 1;
pub(crate) const STREAM_EEG: u64 = 2;

const FORWARD_RANGE_S: (f64, f64) = (5.0, 30.0);
const TURN_RANGE_S: (f64, f64) = (2.0, 5.0);
const STOP_RANGE_S: (f64, f64) = (3.0, 8.0);
const STOP_PROBABILITY: f64 = 0.2;
const MIN_SEGMENT_S: f64 = 1.0;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Session length in seconds.
    pub duration: f64,
    pub eeg_fs: f64,
    pub kin_fs: f64,
    pub channels: Vec<String>,
    /// Onset of the pre-manoeuvre signature before the manoeuvre, in ms.
    pub lead_time_ms: f64,
    /// Signature peak amplitude relative to background RMS, in dB.
    /// `-inf` disables the signature.
    pub snr_db: f64,
    /// Target share of session time spent turning.
    pub turn_fraction: f64,
    pub line_noise_hz: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            duration: 600.0,
            eeg_fs: 125.0,
            kin_fs: 100.0,
            channels: DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
            lead_time_ms: 800.0,
            snr_db: 0.0,
            turn_fraction: 0.2,
            line_noise_hz: 50.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.eeg_fs) || !positive(self.kin_fs) {
            return Err(Error::Config("sampling rates must be > 0".into()));
        }
        if !(self.duration.is_finite() && self.duration >= 60.0) {
            return Err(Error::Config(format!(
                "duration must be >= 60 s, got {}",
                self.duration
            )));
        }
        if !(self.lead_time_ms.is_finite() && self.lead_time_ms >= 0.0) {
            return Err(Error::Config("lead_time_ms must be >= 0".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::INFINITY {
            return Err(Error::Config("snr_db must be finite or -inf".into()));
        }
        if !(0.0..=0.5).contains(&self.turn_fraction) {
            return Err(Error::Config(format!(
                "turn_fraction must be in [0, 0.5], got {}",
                self.turn_fraction
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("channel list is empty".into()));
        }
        if !(self.line_noise_hz.is_finite() && self.line_noise_hz >= 0.0) {
            return Err(Error::Config("line_noise_hz must be >= 0".into()));
        }
        Ok(())
    }

    pub fn lead_time_s(&self) -> f64 {
        self.lead_time_ms / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub action: ActionLabel,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManoeuvreSchedule {
    pub segments: Vec<Segment>,
    pub session_duration: f64,
}

impl ManoeuvreSchedule {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::InvalidInput("schedule has no segments".into()))?;
        if first.start != 0.0 {
            return Err(Error::InvalidInput("schedule must start at 0".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.action == ActionLabel::Reverse {
                return Err(Error::InvalidInput(format!("segment {i} is a reverse manoeuvre")));
            }
            if !(s.duration() >= MIN_SEGMENT_S - 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "segment {i} lasts {} s, minimum is {MIN_SEGMENT_S} s",
                    s.duration()
                )));
            }
            if i > 0 && self.segments[i - 1].end != s.start {
                return Err(Error::InvalidInput(format!("segment {i} is not contiguous")));
            }
        }
        let last = self.segments.last().unwrap();
        if (last.end - self.session_duration).abs() > 1e-9 {
            return Err(Error::InvalidInput("schedule does not cover the session".into()));
        }
        Ok(())
    }

    /// Action at time `t` (segments are half-open, the last one is closed).
    pub fn action_at(&self, t: f64) -> Option<ActionLabel> {
        let idx = self.segments.partition_point(|s| s.end <= t);
        match self.segments.get(idx) {
            Some(s) if t >= s.start => Some(s.action),
            _ => self
                .segments
                .last()
                .filter(|s| t == s.end)
                .map(|s| s.action),
        }
    }

    /// Times where the action changes.
    pub fn transitions(&self) -> Vec<f64> {
        self.segments
            .windows(2)
            .filter(|w| w[0].action != w[1].action)
            .map(|w| w[1].start)
            .collect()
    }

    /// Share of session time spent in turn segments.
    pub fn turn_share(&self) -> f64 {
        let turning: f64 = self
            .segments
            .iter()
            .filter(|s| matches!(s.action, ActionLabel::TurnLeft | ActionLabel::TurnRight))
            .map(Segment::duration)
            .sum();
        turning / self.session_duration
    }

    /// Ground-truth labels sampled at the given timestamps.
    pub fn labels_at(&self, timestamps: &[f64]) -> Vec<ActionLabel> {
        timestamps
            .iter()
            .map(|&t| {
                self.action_at(t.clamp(0.0, self.session_duration))
                    .unwrap_or(ActionLabel::Stopped)
            })
            .collect()
    }
}

struct ScheduleBuilder {
    segments: Vec<Segment>,
    t: f64,
    duration: f64,
    turning: f64,
    other: f64,
}

impl ScheduleBuilder {
    /// Appends a segment; returns `false` once the session is filled.
    fn push(&mut self, action: ActionLabel, len: f64) -> bool {
        let mut end = self.t + len;
        let done = end >= self.duration - MIN_SEGMENT_S;
        if done {
            end = self.duration;
        }
        let seg = Segment {
            action,
            start: self.t,
            end,
        };
        if matches!(action, ActionLabel::TurnLeft | ActionLabel::TurnRight) {
            self.turning += seg.duration();
        } else {
            self.other += seg.duration();
        }
        self.segments.push(seg);
        self.t = end;
        !done
    }
}

/// Draws a pseudorandom manoeuvre schedule.
///
/// Sessions open with a short stop, then alternate forward driving with
/// left/right turns; some forward stretches are followed by a stop. Forward
/// durations track the target turning share.
pub fn gen_schedule(cfg: &SynthConfig) -> Result<ManoeuvreSchedule> {
    if cfg.turn_fraction > 0.5 {
        return Err(Error::Config(format!(
            "turn_fraction {} is infeasible (max 0.5)",
            cfg.turn_fraction
        )));
    }
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_SCHEDULE);
    let mut b = ScheduleBuilder {
        segments: Vec::new(),
        t: 0.0,
        duration: cfg.duration,
        turning: 0.0,
        other: 0.0,
    };
    let f = cfg.turn_fraction;
    let mean_turn = 0.5 * (TURN_RANGE_S.0 + TURN_RANGE_S.1);

    let mut open = b.push(ActionLabel::Stopped, rng.random_range(STOP_RANGE_S.0..STOP_RANGE_S.1));
    while open {
        let forward = if f > 0.0 {
            let target_other = (b.turning + mean_turn) * (1.0 - f) / f;
            let need = (target_other - b.other) * rng.random_range(0.8..1.2);
            need.clamp(FORWARD_RANGE_S.0, FORWARD_RANGE_S.1)
        } else {
            rng.random_range(FORWARD_RANGE_S.0..FORWARD_RANGE_S.1)
        };
        open = b.push(ActionLabel::Forward, forward);
        if !open {
            break;
        }
        if rng.random_bool(STOP_PROBABILITY) {
            open = b.push(ActionLabel::Stopped, rng.random_range(STOP_RANGE_S.0..STOP_RANGE_S.1));
            continue;
        }
        if f > 0.0 {
            let action = if rng.random_bool(0.5) {
                ActionLabel::TurnLeft
            } else {
                ActionLabel::TurnRight
            };
            open = b.push(action, rng.random_range(TURN_RANGE_S.0..TURN_RANGE_S.1));
        }
    }
    let schedule = ManoeuvreSchedule {
        segments: b.segments,
        session_duration: cfg.duration,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// A fully rendered synthetic session.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: u32,
    pub schedule: ManoeuvreSchedule,
    pub track: crate::kinlab::KinematicTrack,
    pub eeg: EegRecording,
}

pub fn gen_session(id: u32, cfg: &SynthConfig) -> Result<Session> {
    let schedule = gen_schedule(cfg)?;
    let track = gen_kinematics(&schedule, cfg)?;
    let eeg = gen_eeg(&schedule, cfg)?;
    Ok(Session {
        id,
        schedule,
        track,
        eeg,
    })
}
