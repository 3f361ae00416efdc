//! Supervised examples from labelled EEG sessions.
//!
//! The label series is shifted by the prediction horizon first; the shifted
//! labels are then split into train/validation/test intervals, windowed
//! inside each interval and aggregated per window.

mod cache;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinlab::{ActionLabel, LabelSeries, NUM_CLASSES};
use crate::synthgen::{stream_rng, EegRecording};

pub use cache::{read_cache, write_cache, CACHE_MAGIC};
pub use split::{
    split, stratified_temporal_split, temporal_chunks, temporal_plain_split, Sampler, SplitConfig, SplitIntervals,
    SplitPart, SplitStrategy,
};

pub const ALLOWED_WINDOW_LENGTHS_S: [f64; 4] = [0.5, 1.0, 2.0, 5.0];
pub const ALLOWED_OVERLAPS: [f64; 2] = [0.0, 0.5];
const MIN_WINDOW_SAMPLES: usize = 16;

/// Channel subset used for the reduced montage.
pub const FRONTAL8: [&str; 8] = ["F3", "F4", "F7", "F8", "C3", "C4", "P3", "P4"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Majority,
    Reject,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Majority => "majority",
            Aggregation::Reject => "reject",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Aggregation::Majority),
            "reject" => Ok(Aggregation::Reject),
            _ => Err(Error::Config(format!("unknown aggregation rule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_s: f64,
    pub overlap: f64,
    pub aggregation: Aggregation,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            length_s: 1.0,
            overlap: 0.5,
            aggregation: Aggregation::Reject,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if !ALLOWED_WINDOW_LENGTHS_S.contains(&self.length_s) {
            return Err(Error::Config(format!(
                "window.length_s = {} (allowed {ALLOWED_WINDOW_LENGTHS_S:?})",
                self.length_s
            )));
        }
        if !ALLOWED_OVERLAPS.contains(&self.overlap) {
            return Err(Error::Config(format!(
                "window.overlap = {} (allowed {{0, 0.5}})",
                self.overlap
            )));
        }
        if self.samples(fs) < MIN_WINDOW_SAMPLES {
            return Err(Error::Config(format!(
                "window of {} s at {fs} Hz has fewer than {MIN_WINDOW_SAMPLES} samples",
                self.length_s
            )));
        }
        Ok(())
    }

    /// Window length `W` in samples.
    pub fn samples(&self, fs: f64) -> usize {
        (self.length_s * fs).round() as usize
    }

    /// Hop between window starts, `floor(W * (1 - overlap))`.
    pub fn step(&self, fs: f64) -> usize {
        ((self.samples(fs) as f64 * (1.0 - self.overlap)).floor() as usize).max(1)
    }
}

/// Labels shifted by a prediction horizon; entries past the end of the
/// original series are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonLabels {
    pub horizon_ms: u32,
    pub shift: usize,
    pub labels: Vec<Option<ActionLabel>>,
}

impl HorizonLabels {
    /// Number of leading samples with an in-range label.
    pub fn usable(&self) -> usize {
        self.labels.len() - self.shift
    }
}

/// Horizon in samples, rounding half away from zero.
pub fn horizon_samples(horizon_ms: u32, fs: f64) -> usize {
    (horizon_ms as f64 * fs / 1000.0).round() as usize
}

pub fn shift_horizon(series: &LabelSeries, horizon_ms: u32, fs: f64) -> Result<HorizonLabels> {
    let n = horizon_samples(horizon_ms, fs);
    let len = series.labels.len();
    if n >= len {
        return Err(Error::EmptyResult(format!(
            "horizon {horizon_ms} ms ({n} samples) leaves nothing of a {len}-sample series"
        )));
    }
    let labels = (0..len).map(|i| series.labels.get(i + n).copied()).collect();
    Ok(HorizonLabels {
        horizon_ms,
        shift: n,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Label(ActionLabel),
    Rejected,
}

/// Collapses per-sample window labels to one label.
///
/// `Majority` ties go to the tied label seen latest in the window (the final
/// sample's label when it is among them).
pub fn aggregate(window_labels: &[ActionLabel], rule: Aggregation) -> Aggregate {
    let Some(&last) = window_labels.last() else {
        return Aggregate::Rejected;
    };
    match rule {
        Aggregation::Reject => {
            if window_labels.iter().all(|&l| l == last) {
                Aggregate::Label(last)
            } else {
                Aggregate::Rejected
            }
        }
        Aggregation::Majority => {
            // label -> (count, last position)
            let mut tally: BTreeMap<ActionLabel, (usize, usize)> = BTreeMap::new();
            for (i, &l) in window_labels.iter().enumerate() {
                let e = tally.entry(l).or_insert((0, 0));
                e.0 += 1;
                e.1 = i;
            }
            let (&label, _) = tally
                .iter()
                .max_by_key(|(_, &(count, pos))| (count, pos))
                .expect("non-empty window");
            Aggregate::Label(label)
        }
    }
}

/// Start indices of the windows inside `range`.
pub fn window_starts(range: Range<usize>, w: usize, step: usize) -> impl Iterator<Item = usize> {
    let count = if range.len() >= w { (range.len() - w) / step + 1 } else { 0 };
    (0..count).map(move |k| range.start + k * step)
}

/// One raw window over a whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    pub start_time: f64,
    pub labels: Vec<ActionLabel>,
    /// Row-major `C x W`.
    pub data: Vec<f32>,
}

/// Slides windows over the usable part of a recording.
pub fn segment(eeg: &EegRecording, labels: &HorizonLabels, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate(eeg.fs)?;
    if labels.labels.len() != eeg.n_samples() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} EEG samples",
            labels.labels.len(),
            eeg.n_samples()
        )));
    }
    let w = spec.samples(eeg.fs);
    let usable = labels.usable();
    if usable < w {
        return Err(Error::EmptyResult(format!(
            "{usable} usable samples, window needs {w}"
        )));
    }
    let all: Vec<usize> = (0..eeg.n_channels()).collect();
    Ok(window_starts(0..usable, w, spec.step(eeg.fs))
        .filter_map(|s| {
            let labs: Option<Vec<ActionLabel>> = labels.labels[s..s + w].iter().copied().collect();
            labs.map(|labels| Window {
                start: s,
                start_time: eeg.timestamps[s],
                labels,
                data: copy_window(eeg, &all, s, w),
            })
        })
        .collect())
}

fn copy_window(eeg: &EegRecording, channels: &[usize], start: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(channels.len() * w);
    for &c in channels {
        out.extend(eeg.data[c][start..start + w].iter().map(|&x| x as f32));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Row-major `C x W`.
    pub window: Vec<f32>,
    pub label: ActionLabel,
    pub horizon_ms: u32,
    pub session_id: u32,
    pub start_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Empty when the names are unknown (e.g. loaded from a cache file).
    pub channel_names: Vec<String>,
    pub n_channels: usize,
    pub window_len: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn empty(channel_names: Vec<String>, window_len: usize) -> Self {
        Dataset {
            n_channels: channel_names.len(),
            channel_names,
            window_len,
            examples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.examples)
    }

    pub fn class_indices(&self) -> Vec<usize> {
        self.examples
            .iter()
            .map(|e| e.label.class_index().expect("modelled label"))
            .collect()
    }
}

pub fn class_counts(examples: &[Example]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for e in examples {
        if let Some(c) = e.label.class_index() {
            counts[c] += 1;
        }
    }
    counts
}

/// Drops Stopped and Reverse examples, preserving order.
pub fn restrict_actions(examples: Vec<Example>) -> Result<Vec<Example>> {
    let kept: Vec<Example> = examples.into_iter().filter(|e| e.label.is_modelled()).collect();
    if kept.is_empty() {
        return Err(Error::EmptyResult("no Forward/TurnLeft/TurnRight examples left".into()));
    }
    Ok(kept)
}

/// Random oversampling: minority classes are topped up with duplicates drawn
/// uniformly with replacement until every present class matches the majority.
/// Originals come first, in their original order.
pub fn oversample(train: Vec<Example>, seed: u64) -> Result<Vec<Example>> {
    if train.is_empty() {
        return Err(Error::EmptyResult("nothing to oversample".into()));
    }
    let mut by_class: BTreeMap<ActionLabel, Vec<usize>> = BTreeMap::new();
    for (i, e) in train.iter().enumerate() {
        by_class.entry(e.label).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = stream_rng(seed, 0);
    let mut extra = Vec::new();
    for members in by_class.values() {
        for _ in members.len()..target {
            let &i = members.choose(&mut rng).expect("class has members");
            extra.push(train[i].clone());
        }
    }
    let mut out = train;
    out.extend(extra);
    Ok(out)
}

/// Channel indices for a named subset.
pub fn channel_indices(available: &[String], subset: &[String]) -> Result<Vec<usize>> {
    subset
        .iter()
        .map(|name| {
            available
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Config(format!("unknown channel `{name}`")))
        })
        .collect()
}

/// Reduces every window to the named channels, in the given order.
pub fn select_channels(ds: &Dataset, subset: &[String]) -> Result<Dataset> {
    let idx = channel_indices(&ds.channel_names, subset)?;
    let w = ds.window_len;
    let examples = ds
        .examples
        .iter()
        .map(|e| {
            let mut window = Vec::with_capacity(idx.len() * w);
            for &c in &idx {
                window.extend_from_slice(&e.window[c * w..(c + 1) * w]);
            }
            Example { window, ..e.clone() }
        })
        .collect();
    Ok(Dataset {
        channel_names: subset.to_vec(),
        n_channels: idx.len(),
        window_len: w,
        examples,
    })
}

/// One labelled, preprocessed session ready for windowing.
#[derive(Debug, Clone, Copy)]
pub struct SessionInput<'a> {
    pub id: u32,
    pub eeg: &'a EegRecording,
    pub labels: &'a LabelSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub window: WindowSpec,
    pub split: SplitConfig,
    /// `None` keeps every channel.
    pub channels: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub windows: usize,
    pub rejected: usize,
    /// Windows aggregated to Stopped or Reverse.
    pub excluded: usize,
    pub train_counts: [usize; NUM_CLASSES],
    pub val_counts: [usize; NUM_CLASSES],
    pub test_counts: [usize; NUM_CLASSES],
    /// Train counts after the sampler.
    pub sampled_train_counts: [usize; NUM_CLASSES],
    pub warnings: Vec<String>,
}

impl BuildStats {
    pub fn rejected_fraction(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.rejected as f64 / self.windows as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDatasets {
    pub horizon_ms: u32,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub stats: BuildStats,
}

/// Builds train/validation/test datasets for one horizon.
///
/// Sessions are split independently and merged in input order.
pub fn build_datasets(sessions: &[SessionInput<'_>], horizon_ms: u32, spec: &DatasetSpec) -> Result<SplitDatasets> {
    let first = sessions
        .first()
        .ok_or_else(|| Error::EmptyResult("no sessions".into()))?;
    let fs = first.eeg.fs;
    spec.window.validate(fs)?;
    spec.split.validate()?;
    let names = first.eeg.channel_names.clone();
    let (channel_names, idx) = match &spec.channels {
        Some(subset) => (subset.clone(), channel_indices(&names, subset)?),
        None => (names.clone(), (0..names.len()).collect()),
    };
    let w = spec.window.samples(fs);
    let step = spec.window.step(fs);

    let mut stats = BuildStats::default();
    let mut parts: [Vec<Example>; 3] = Default::default();
    for s in sessions {
        if s.eeg.fs != fs || s.eeg.channel_names != names {
            return Err(Error::InvalidInput(format!(
                "session {} differs in sampling rate or montage",
                s.id
            )));
        }
        if s.labels.len() != s.eeg.n_samples() {
            return Err(Error::InvalidInput(format!(
                "session {}: {} labels for {} EEG samples",
                s.id,
                s.labels.len(),
                s.eeg.n_samples()
            )));
        }
        let shifted = shift_horizon(s.labels, horizon_ms, fs)?;
        let intervals = split(&shifted.labels, &spec.split)?;
        stats.warnings.extend(intervals.warnings.iter().map(|m| format!("session {}: {m}", s.id)));
        for (slot, part) in [SplitPart::Train, SplitPart::Val, SplitPart::Test].into_iter().enumerate() {
            for range in intervals.part(part) {
                for start in window_starts(range.clone(), w, step) {
                    let Some(labs) = shifted.labels[start..start + w].iter().copied().collect::<Option<Vec<_>>>()
                    else {
                        continue;
                    };
                    stats.windows += 1;
                    let label = match aggregate(&labs, spec.window.aggregation) {
                        Aggregate::Rejected => {
                            stats.rejected += 1;
                            continue;
                        }
                        Aggregate::Label(l) if !l.is_modelled() => {
                            stats.excluded += 1;
                            continue;
                        }
                        Aggregate::Label(l) => l,
                    };
                    parts[slot].push(Example {
                        window: copy_window(s.eeg, &idx, start, w),
                        label,
                        horizon_ms,
                        session_id: s.id,
                        start_time: s.eeg.timestamps[start],
                    });
                }
            }
        }
    }
    let [mut train, val, test] = parts;
    if train.is_empty() {
        return Err(Error::EmptyResult(format!("no training windows at horizon {horizon_ms} ms")));
    }
    stats.train_counts = class_counts(&train);
    stats.val_counts = class_counts(&val);
    stats.test_counts = class_counts(&test);
    if let Sampler::RandomOversample { seed } = spec.split.sampler {
        train = oversample(train, seed)?;
    }
    stats.sampled_train_counts = class_counts(&train);
    let wrap = |examples| Dataset {
        n_channels: channel_names.len(),
        channel_names: channel_names.clone(),
        window_len: w,
        examples,
    };
    Ok(SplitDatasets {
        horizon_ms,
        train: wrap(train),
        val: wrap(val),
        test: wrap(test),
        stats,
    })
}
