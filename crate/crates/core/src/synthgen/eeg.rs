use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{stream_rng, ManoeuvreSchedule, SynthConfig, STREAM_EEG};
use crate::error::{Error, Result};
use crate::kinlab::ActionLabel;

/// Background RMS per channel, in microvolts.
const BACKGROUND_RMS_UV: f64 = 10.0;
const LINE_NOISE_FRACTION: f64 = 0.1;
/// Gain of the ipsilateral hemisphere relative to the contralateral one.
const IPSILATERAL_GAIN: f64 = 1.0 / 3.0;

/// Multichannel scalp potentials, one row per channel, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub timestamps: Vec<f64>,
    pub data: Vec<Vec<f64>>,
    pub channel_names: Vec<String>,
    pub fs: f64,
}

impl EegRecording {
    pub fn new(timestamps: Vec<f64>, data: Vec<Vec<f64>>, channel_names: Vec<String>, fs: f64) -> Result<Self> {
        let rec = EegRecording {
            timestamps,
            data,
            channel_names,
            fs,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.timestamps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.channel_names.len() {
            return Err(Error::InvalidInput(format!(
                "{} data rows for {} channel names",
                self.data.len(),
                self.channel_names.len()
            )));
        }
        if self.data.is_empty() {
            return Err(Error::InvalidInput("recording has no channels".into()));
        }
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(Error::InvalidInput(format!("bad sampling rate {}", self.fs)));
        }
        let t = self.timestamps.len();
        if let Some((name, _)) = self
            .channel_names
            .iter()
            .zip(&self.data)
            .find(|(_, row)| row.len() != t)
        {
            return Err(Error::InvalidInput(format!(
                "channel {name} length differs from {t} timestamps"
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("EEG timestamps not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hemisphere {
    Left,
    Right,
    Midline,
}

/// 10-20 convention: odd electrode numbers sit over the left hemisphere,
/// even numbers over the right, `z` sites on the midline.
pub fn hemisphere(channel: &str) -> Hemisphere {
    let digits: String = channel.chars().skip_while(|c| !c.is_ascii_digit()).collect();
    match digits.parse::<u32>() {
        Ok(n) if n % 2 == 0 => Hemisphere::Right,
        Ok(_) => Hemisphere::Left,
        Err(_) => Hemisphere::Midline,
    }
}

/// Spatial weight of the pre-turn signature on a channel: motor preparation
/// is strongest over the hemisphere contralateral to the turn direction.
pub fn lateral_weight(channel: &str, action: ActionLabel) -> f64 {
    let contra = match action {
        ActionLabel::TurnLeft => Hemisphere::Right,
        ActionLabel::TurnRight => Hemisphere::Left,
        _ => return 0.0,
    };
    match hemisphere(channel) {
        Hemisphere::Midline => 0.0,
        h if h == contra => 1.0,
        _ => IPSILATERAL_GAIN,
    }
}

/// Peak signature amplitude for a background of the given RMS.
pub fn signature_amplitude(background_rms: f64, snr_db: f64) -> f64 {
    background_rms * 10f64.powf(snr_db / 20.0)
}

/// Unit-RMS noise with a 1/f power spectrum (DC removed).
fn pink_noise<R: Rng>(n: usize, rng: &mut R, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..n {
        // bin frequency in units of fs/n, folded for the negative half
        let f = k.min(n - k) as f64;
        buf[k] /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    out.iter_mut().for_each(|x| *x /= rms);
    out
}

/// Signature waveform (unit peak, negative-going) over the EEG timeline for
/// one manoeuvre: a linear ramp over the lead time before onset, held at peak
/// until the manoeuvre ends.
fn signature_envelope(timestamps: &[f64], ramp_from: f64, onset: f64, end: f64, lead: f64, out: &mut [f64]) {
    let lo = timestamps.partition_point(|&t| t < ramp_from);
    let hi = timestamps.partition_point(|&t| t < end);
    for i in lo..hi {
        let t = timestamps[i];
        out[i] = if t >= onset {
            -1.0
        } else {
            -(t - (onset - lead)) / lead
        };
    }
}

/// Renders the EEG recording for a schedule.
pub fn gen_eeg(schedule: &ManoeuvreSchedule, cfg: &SynthConfig) -> Result<EegRecording> {
    schedule.validate()?;
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, STREAM_EEG);
    let n = (schedule.session_duration * cfg.eeg_fs).round() as usize;
    let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / cfg.eeg_fs).collect();
    let mut planner = FftPlanner::new();

    let mut data: Vec<Vec<f64>> = Vec::with_capacity(cfg.channels.len());
    for _ in &cfg.channels {
        let mut row = pink_noise(n, &mut rng, &mut planner);
        row.iter_mut().for_each(|x| *x *= BACKGROUND_RMS_UV);
        let phase = rng.random_range(0.0..2.0 * PI);
        if cfg.line_noise_hz > 0.0 {
            let amp = LINE_NOISE_FRACTION * BACKGROUND_RMS_UV;
            let w = 2.0 * PI * cfg.line_noise_hz;
            for (x, t) in row.iter_mut().zip(&timestamps) {
                *x += amp * (w * t + phase).sin();
            }
        }
        data.push(row);
    }

    let amplitude = signature_amplitude(BACKGROUND_RMS_UV, cfg.snr_db);
    if amplitude > 0.0 {
        let lead = cfg.lead_time_s();
        let mut envelope = vec![0.0; n];
        for (k, seg) in schedule.segments.iter().enumerate() {
            if !matches!(seg.action, ActionLabel::TurnLeft | ActionLabel::TurnRight) {
                continue;
            }
            let prev_start = if k > 0 { schedule.segments[k - 1].start } else { 0.0 };
            let mut ramp_from = seg.start - lead;
            if ramp_from < prev_start {
                log::warn!(
                    "lead time {} ms exceeds the segment before the turn at {:.2} s; ramp truncated",
                    cfg.lead_time_ms,
                    seg.start
                );
                ramp_from = prev_start;
            }
            envelope.iter_mut().for_each(|e| *e = 0.0);
            signature_envelope(&timestamps, ramp_from, seg.start, seg.end, lead, &mut envelope);
            for (row, name) in data.iter_mut().zip(&cfg.channels) {
                let gain = amplitude * lateral_weight(name, seg.action);
                if gain == 0.0 {
                    continue;
                }
                for (x, e) in row.iter_mut().zip(&envelope) {
                    *x += gain * e;
                }
            }
        }
    }

    EegRecording::new(timestamps, data, cfg.channels.clone(), cfg.eeg_fs)
}
