//! Kinematics-to-EEG synchronisation and the two retained EEG preprocessing
//! variants: z-score only, and zero-phase band-pass followed by z-score.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinlab::{
    classify_sample, heading_deviation, motion_direction, wrap_angle, KinematicTrack, LabelSeries, Thresholds,
};
use crate::synthgen::EegRecording;

/// Longest stretch of EEG allowed outside the kinematic coverage; queries
/// within it are clamped to the edge sample.
const MAX_EXTRAPOLATION_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pipeline {
    ZscoreOnly,
    BandpassZscore,
    /// Artefact-handling pipelines are recognised but not implemented.
    Pyprep,
    PyprepRansac,
    Ica,
    Asr,
    AutoReject,
}

impl Pipeline {
    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::ZscoreOnly => "zscore",
            Pipeline::BandpassZscore => "bandpass_zscore",
            Pipeline::Pyprep => "pyprep",
            Pipeline::PyprepRansac => "pyprep_ransac",
            Pipeline::Ica => "ica",
            Pipeline::Asr => "asr",
            Pipeline::AutoReject => "autoreject",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Pipeline::ZscoreOnly,
            Pipeline::BandpassZscore,
            Pipeline::Pyprep,
            Pipeline::PyprepRansac,
            Pipeline::Ica,
            Pipeline::Asr,
            Pipeline::AutoReject,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown preprocessing pipeline `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub pipeline: Pipeline,
    /// Pass band in Hz.
    pub band: (f64, f64),
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            pipeline: Pipeline::ZscoreOnly,
            band: (1.0, 40.0),
        }
    }
}

impl PrepConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        validate_band(self.band, fs)
    }
}

fn validate_band((lo, hi): (f64, f64), fs: f64) -> Result<()> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::Config(format!(
            "band ({lo}, {hi}) Hz must satisfy 0 < lo < hi < fs/2 = {}",
            fs / 2.0
        )));
    }
    Ok(())
}

/// Kinematic quantities on the EEG timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedKinematics {
    pub timestamps: Vec<f64>,
    pub v: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_dot: Vec<f64>,
    pub delta_theta: Vec<f64>,
}

/// Cumulative unwrap of a wrapped angle sequence.
fn unwrap_angles(a: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    let mut offset = 0.0;
    for (i, &x) in a.iter().enumerate() {
        if i > 0 {
            let d = x - a[i - 1];
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(x + offset);
    }
    out
}

/// Linearly interpolates kinematics onto EEG timestamps.
///
/// Heading and heading deviation are interpolated on their unwrapped
/// sequences and re-wrapped. Queries up to 1 s outside the track are clamped
/// to the nearest edge sample.
pub fn resample_to_eeg(track: &KinematicTrack, eeg_timestamps: &[f64]) -> Result<AlignedKinematics> {
    track.validate()?;
    let ts = &track.timestamps;
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    if let (Some(&q0), Some(&q1)) = (eeg_timestamps.first(), eeg_timestamps.last()) {
        if q0 < first - MAX_EXTRAPOLATION_S || q1 > last + MAX_EXTRAPOLATION_S {
            return Err(Error::Coverage(format!(
                "EEG spans [{q0}, {q1}] s but kinematics cover [{first}, {last}] s"
            )));
        }
    }
    let v = track.speeds();
    let dtheta: Vec<f64> = (0..track.len())
        .map(|i| {
            if v[i] == 0.0 {
                Ok(0.0)
            } else {
                heading_deviation(motion_direction(track.vx[i], track.vy[i])?, track.psi[i])
            }
        })
        .collect::<Result<_>>()?;
    let psi_u = unwrap_angles(&track.psi);
    let dtheta_u = unwrap_angles(&dtheta);

    let mut out = AlignedKinematics {
        timestamps: eeg_timestamps.to_vec(),
        v: Vec::with_capacity(eeg_timestamps.len()),
        psi: Vec::with_capacity(eeg_timestamps.len()),
        psi_dot: Vec::with_capacity(eeg_timestamps.len()),
        delta_theta: Vec::with_capacity(eeg_timestamps.len()),
    };
    for &q in eeg_timestamps {
        let (i, w) = if q <= first {
            (0, 0.0)
        } else if q >= last {
            (ts.len() - 2, 1.0)
        } else {
            let j = ts.partition_point(|&t| t <= q) - 1;
            (j, (q - ts[j]) / (ts[j + 1] - ts[j]))
        };
        let lerp = |x: &[f64]| if w == 0.0 { x[i] } else { x[i] + (x[i + 1] - x[i]) * w };
        out.v.push(lerp(&v));
        out.psi_dot.push(lerp(&track.psi_dot));
        out.psi.push(wrap_angle(lerp(&psi_u))?);
        out.delta_theta.push(wrap_angle(lerp(&dtheta_u))?);
    }
    Ok(out)
}

/// Per-channel standardisation over the whole session (population SD).
pub fn zscore(rec: &EegRecording) -> Result<EegRecording> {
    rec.validate()?;
    let t = rec.n_samples() as f64;
    let data = rec
        .data
        .iter()
        .zip(&rec.channel_names)
        .map(|(row, name)| {
            let mean = row.iter().sum::<f64>() / t;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
            let sd = var.sqrt();
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::DegenerateChannel(name.clone()));
            }
            Ok(row.iter().map(|x| (x - mean) / sd).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(EegRecording {
        data,
        ..rec.clone()
    })
}

/// Windowed-sinc band-pass kernel (Hamming window), unit gain at the centre
/// of the pass band. Length is `4 * fs / lo` rounded up to odd.
pub fn bandpass_kernel(band: (f64, f64), fs: f64) -> Result<Vec<f64>> {
    validate_band(band, fs)?;
    let (lo, hi) = band;
    let mut len = (4.0 * fs / lo).ceil() as usize;
    if len % 2 == 0 {
        len += 1;
    }
    let m = (len / 2) as f64;
    let lowpass = |fc: f64| -> Vec<f64> {
        let wc = 2.0 * fc / fs;
        let mut h: Vec<f64> = (0..len)
            .map(|k| {
                let x = k as f64 - m;
                let sinc = if x == 0.0 { wc } else { (PI * wc * x).sin() / (PI * x) };
                let window = 0.54 - 0.46 * (2.0 * PI * k as f64 / (len - 1) as f64).cos();
                sinc * window
            })
            .collect();
        let dc: f64 = h.iter().sum();
        h.iter_mut().for_each(|x| *x /= dc);
        h
    };
    let (h_hi, h_lo) = (lowpass(hi), lowpass(lo));
    Ok(h_hi.iter().zip(&h_lo).map(|(a, b)| a - b).collect())
}

/// Magnitude response of an FIR kernel at `f` Hz.
pub fn kernel_gain(kernel: &[f64], f: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f / fs;
    let (re, im) = kernel
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (k, h)| (re + h * (w * k as f64).cos(), im - h * (w * k as f64).sin()));
    re.hypot(im)
}

/// Reflects an index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Zero-phase FIR band-pass. The symmetric kernel is centre-aligned and the
/// signal edges are reflection-padded by half the kernel length.
pub fn bandpass(rec: &EegRecording, band: (f64, f64)) -> Result<EegRecording> {
    rec.validate()?;
    let kernel = bandpass_kernel(band, rec.fs)?;
    let n = rec.n_samples();
    if n < kernel.len() {
        return Err(Error::TooShort {
            len: n,
            needed: kernel.len(),
        });
    }
    let half = kernel.len() / 2;
    let data = rec
        .data
        .iter()
        .map(|row| {
            let padded: Vec<f64> = (-(half as isize)..(n + half) as isize)
                .map(|i| row[reflect(i, n)])
                .collect();
            (0..n)
                .map(|i| {
                    padded[i..i + kernel.len()]
                        .iter()
                        .zip(&kernel)
                        .map(|(x, h)| x * h)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(EegRecording {
        data,
        ..rec.clone()
    })
}

/// Action labels on the EEG timeline from resampled kinematics.
pub fn label_aligned(aligned: &AlignedKinematics, th: &Thresholds) -> Result<LabelSeries> {
    let labels = aligned
        .v
        .iter()
        .zip(&aligned.psi_dot)
        .zip(&aligned.delta_theta)
        .map(|((&v, &w), &d)| classify_sample(v, w, d, th))
        .collect::<Result<_>>()?;
    Ok(LabelSeries {
        timestamps: aligned.timestamps.clone(),
        labels,
    })
}

/// Applies a preprocessing pipeline.
pub fn preprocess(rec: &EegRecording, cfg: &PrepConfig) -> Result<EegRecording> {
    match cfg.pipeline {
        Pipeline::ZscoreOnly => zscore(rec),
        Pipeline::BandpassZscore => zscore(&bandpass(rec, cfg.band)?),
        other => Err(Error::NotSupported(format!("preprocessing pipeline `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(rows: Vec<Vec<f64>>, fs: f64) -> EegRecording {
        let n = rows[0].len();
        let names = (0..rows.len()).map(|i| format!("C{}", i + 1)).collect();
        EegRecording::new((0..n).map(|i| i as f64 / fs).collect(), rows, names, fs).unwrap()
    }

    fn track(ts: Vec<f64>, speeds: Vec<f64>, psi: Vec<f64>) -> KinematicTrack {
        let n = ts.len();
        KinematicTrack::new(ts, speeds, vec![0.0; n], psi, vec![0.0; n]).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn resample_identity_and_midpoint() {
        let t = track(vec![0.0, 1.0, 2.0], vec![2.0, 4.0, 4.0], vec![0.0; 3]);
        let a = resample_to_eeg(&t, &[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert_eq!(a.v, vec![2.0, 3.0, 4.0, 4.0]);
        assert_eq!(a.delta_theta, vec![0.0; 4]);
    }

    #[test]
    fn resample_psi_across_seam() {
        let t = track(vec![0.0, 1.0], vec![1.0, 1.0], vec![3.1, -3.1]);
        let a = resample_to_eeg(&t, &[0.5]).unwrap();
        // brute force: unwrap -3.1 to -3.1 + 2 pi, take the midpoint, re-wrap
        let mid = 0.5 * (3.1 + (-3.1 + 2.0 * PI));
        let expected = wrap_angle(mid).unwrap();
        assert!(a.psi[0].abs() > 3.1);
        assert!((a.psi[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn resample_coverage() {
        let t = track(vec![0.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]);
        let clamped = resample_to_eeg(&t, &[-0.5, 1.9]).unwrap();
        assert_eq!(clamped.v, vec![1.0, 1.0]);
        assert!(matches!(resample_to_eeg(&t, &[0.0, 2.5]), Err(Error::Coverage(_))));
    }

    #[test]
    fn zscore_examples() {
        let z = zscore(&rec(vec![vec![1.0, 2.0, 3.0]], 125.0)).unwrap();
        let s = (1.5f64).sqrt();
        for (a, b) in z.data[0].iter().zip([-s, 0.0, s]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s - 1.2247).abs() < 1e-4);
        let zz = zscore(&z).unwrap();
        for (a, b) in zz.data[0].iter().zip(&z.data[0]) {
            assert!((a - b).abs() < 1e-9);
        }
        match zscore(&rec(vec![vec![1.0, 2.0, 3.0], vec![4.0; 3]], 125.0)) {
            Err(Error::DegenerateChannel(name)) => assert_eq!(name, "C2"),
            other => panic!("expected degenerate channel, got {other:?}"),
        }
    }

    #[test]
    fn kernel_shape_and_response() {
        let k = bandpass_kernel((1.0, 40.0), 125.0).unwrap();
        assert_eq!(k.len(), 501);
        for i in 0..k.len() {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
        let g = |f| kernel_gain(&k, f, 125.0);
        assert!(20.0 * g(0.5).log10() <= -20.0, "gain at lo/2: {}", g(0.5));
        assert!((g(10.0) - 1.0).abs() < 0.01);
        assert!(20.0 * g(60.0).log10() <= -20.0);
        assert!(g(0.0) < 1e-9);
    }

    #[test]
    fn bandpass_examples() {
        let fs = 125.0;
        let n = 4000;
        let pass = bandpass(&rec(vec![sine(10.0, fs, n)], fs), (1.0, 40.0)).unwrap();
        let ratio = rms(&pass.data[0]) / rms(&sine(10.0, fs, n));
        assert!((ratio - 1.0).abs() < 0.1, "10 Hz ratio {ratio}");
        let stop = bandpass(&rec(vec![sine(50.0, fs, n)], fs), (1.0, 40.0)).unwrap();
        assert!(rms(&stop.data[0]) <= 0.1 * rms(&sine(50.0, fs, n)));
        let dc = bandpass(&rec(vec![vec![3.0; n]], fs), (1.0, 40.0)).unwrap();
        assert!(rms(&dc.data[0]) <= 0.01 * 3.0);
    }

    #[test]
    fn bandpass_errors() {
        let r = rec(vec![vec![1.0; 300]], 125.0);
        assert!(matches!(bandpass(&r, (1.0, 40.0)), Err(Error::TooShort { .. })));
        assert!(matches!(bandpass(&r, (40.0, 1.0)), Err(Error::Config(_))));
        assert!(matches!(bandpass(&r, (1.0, 70.0)), Err(Error::Config(_))));
    }

    #[test]
    fn unsupported_pipelines() {
        let r = rec(vec![sine(3.0, 125.0, 100)], 125.0);
        let cfg = PrepConfig {
            pipeline: Pipeline::Ica,
            ..PrepConfig::default()
        };
        assert!(matches!(preprocess(&r, &cfg), Err(Error::NotSupported(_))));
        assert_eq!("pyprep".parse::<Pipeline>().unwrap(), Pipeline::Pyprep);
    }

    #[test]
    fn filter_then_normalise_is_centred() {
        let fs = 125.0;
        let n = 3000;
        let x: Vec<f64> = (0..n).map(|i| 5.0 + (i as f64 * 0.37).sin() + 0.2 * (i as f64 * 0.05).cos()).collect();
        let cfg = PrepConfig {
            pipeline: Pipeline::BandpassZscore,
            band: (1.0, 40.0),
        };
        let out = preprocess(&rec(vec![x], fs), &cfg).unwrap();
        let mean = out.data[0].iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn resample_exact_on_affine(a in -5.0f64..5.0, b in 0.0f64..50.0, q in proptest::collection::vec(0.0f64..9.99, 1..40)) {
            let ts: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
            // keep the speed non-negative so it equals |vx|
            let b = b + 50.0;
            let speeds: Vec<f64> = ts.iter().map(|t| a * t + b).collect();
            let t = track(ts, speeds, vec![0.0; 1000]);
            let mut q = q;
            q.sort_by(f64::total_cmp);
            let al = resample_to_eeg(&t, &q).unwrap();
            for (v, tq) in al.v.iter().zip(&q) {
                prop_assert!((v - (a * tq + b)).abs() < 1e-9);
            }
        }

        #[test]
        fn bandpass_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in 0u64..100) {
            let fs = 125.0;
            let n = 700;
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect();
            let y = sine(7.0 + seed as f64 * 0.1, fs, n);
            let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let fx = bandpass(&rec(vec![x], fs), (1.0, 40.0)).unwrap();
            let fy = bandpass(&rec(vec![y], fs), (1.0, 40.0)).unwrap();
            let fm = bandpass(&rec(vec![mix], fs), (1.0, 40.0)).unwrap();
            let resid: Vec<f64> = (0..n).map(|i| fm.data[0][i] - alpha * fx.data[0][i] - beta * fy.data[0][i]).collect();
            prop_assert!(rms(&resid) < 1e-6);
        }

        #[test]
        fn zscore_idempotent(v in proptest::collection::vec(-100.0f64..100.0, 3..200)) {
            prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 1e-3));
            let z = zscore(&rec(vec![v], 125.0)).unwrap();
            let zz = zscore(&z).unwrap();
            let n = z.data[0].len() as f64;
            let mean = z.data[0].iter().sum::<f64>() / n;
            let sd = (z.data[0].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
            for (a, b) in z.data[0].iter().zip(&zz.data[0]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
