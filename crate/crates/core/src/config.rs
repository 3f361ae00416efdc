//! Experiment configuration in a flat `section.key = value` text format.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a complete configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{Aggregation, SplitConfig, SplitStrategy, Sampler, WindowSpec, FRONTAL8};
use crate::error::{Error, Result};
use crate::kinlab::Thresholds;
use crate::mlcore::{AdamConfig, Arch, ModelSpec, TrainConfig};
use crate::sigprep::PrepConfig;
use crate::synthgen::SynthConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.txt";
/// Largest horizon representable in the dataset cache.
pub const MAX_HORIZON_MS: u32 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    Explicit(Thresholds),
    /// Data-driven valleys of the pooled speed and yaw-rate densities.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelSet {
    All,
    Frontal8,
    List(Vec<String>),
}

impl ChannelSet {
    /// Concrete subset, or `None` for the full montage.
    pub fn names(&self) -> Option<Vec<String>> {
        match self {
            ChannelSet::All => None,
            ChannelSet::Frontal8 => Some(FRONTAL8.iter().map(|s| s.to_string()).collect()),
            ChannelSet::List(v) => Some(v.clone()),
        }
    }
}

impl Display for ChannelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelSet::All => f.write_str("all16"),
            ChannelSet::Frontal8 => f.write_str("frontal8"),
            ChannelSet::List(v) => f.write_str(&v.join(",")),
        }
    }
}

impl FromStr for ChannelSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all16" => Ok(ChannelSet::All),
            "frontal8" => Ok(ChannelSet::Frontal8),
            _ => parse_list(s).map(ChannelSet::List),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed. Session `i` uses `seed + i`; training and oversampling
    /// use `seed` directly.
    pub seed: u64,
    pub sessions: usize,
    pub synth: SynthConfig,
    pub thresholds: ThresholdMode,
    pub prep: PrepConfig,
    pub window: WindowSpec,
    pub split: SplitConfig,
    pub horizons: Vec<u32>,
    pub channels: ChannelSet,
    pub arch: Arch,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            sessions: 8,
            synth: SynthConfig::default(),
            thresholds: ThresholdMode::Explicit(Thresholds::default()),
            prep: PrepConfig::default(),
            window: WindowSpec::default(),
            split: SplitConfig::default(),
            horizons: (0..=1000).step_by(100).collect(),
            channels: ChannelSet::All,
            arch: Arch::CompactConv,
            train: TrainConfig {
                patience: Some(10),
                ..TrainConfig::default()
            },
            output_dir: PathBuf::from("m2d_out"),
        }
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<String>, String> {
    let items: Vec<String> = s.split(',').map(|t| t.trim().to_string()).collect();
    if items.iter().any(|t| t.is_empty()) {
        return Err(format!("malformed list `{s}`"));
    }
    Ok(items)
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn strategy_name(s: SplitStrategy) -> &'static str {
    match s {
        SplitStrategy::LabelStratifiedTemporal => "stratified_temporal",
        SplitStrategy::TemporalPlain => "temporal_plain",
    }
}

fn constraint(field: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) if msg.starts_with(field) => Error::Config(msg),
        Error::Config(msg) => Error::Config(format!("{field}: {msg}")),
        other => other,
    }
}

impl ExperimentConfig {
    /// Synthesis settings for session `i`.
    pub fn session_synth(&self, i: usize) -> SynthConfig {
        SynthConfig {
            seed: self.seed.wrapping_add(i as u64),
            ..self.synth.clone()
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        let sampler = match self.split.sampler {
            Sampler::NoSampling => Sampler::NoSampling,
            Sampler::RandomOversample { .. } => Sampler::RandomOversample { seed: self.seed },
        };
        SplitConfig { sampler, ..self.split }
    }

    /// Training settings for one horizon. Every horizon shares the master
    /// seed, so horizons are independent of evaluation order.
    pub fn train_config(&self, _horizon_ms: u32) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let channels = self.channels.names().map_or(self.synth.channels.len(), |v| v.len());
        ModelSpec::new(self.arch, channels, self.window.samples(self.synth.eeg_fs))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions == 0 {
            return Err(Error::Config("experiment.sessions must be >= 1".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("experiment.horizons must not be empty".into()));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "experiment.horizons must be sorted ascending without duplicates".into(),
            ));
        }
        if self.horizons.last().is_some_and(|&h| h > MAX_HORIZON_MS) {
            return Err(Error::Config(format!("experiment.horizons must be <= {MAX_HORIZON_MS} ms")));
        }
        self.synth.validate().map_err(|e| constraint("synth", e))?;
        if let ThresholdMode::Explicit(th) = &self.thresholds {
            th.validate().map_err(|e| constraint("labels", e))?;
        }
        self.prep.validate(self.synth.eeg_fs).map_err(|e| constraint("prep.band", e))?;
        self.window.validate(self.synth.eeg_fs).map_err(|e| constraint("window", e))?;
        self.split.validate().map_err(|e| constraint("split", e))?;
        self.train.validate()?;
        if let Some(names) = self.channels.names() {
            if names.is_empty() {
                return Err(Error::Config("experiment.channels must not be empty".into()));
            }
            for n in &names {
                if !self.synth.channels.contains(n) {
                    return Err(Error::Config(format!(
                        "experiment.channels: unknown channel `{n}`"
                    )));
                }
            }
        }
        self.model_spec().map_err(|e| constraint("model", e))?;
        Ok(())
    }

    /// Every key with its resolved value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let (mode, th) = match self.thresholds {
            ThresholdMode::Explicit(th) => ("explicit", th),
            ThresholdMode::Estimate => ("estimate", Thresholds::default()),
        };
        let t = &self.train;
        let horizons: Vec<String> = self.horizons.iter().map(|h| h.to_string()).collect();
        vec![
            ("experiment.seed", self.seed.to_string()),
            ("experiment.sessions", self.sessions.to_string()),
            ("experiment.horizons", horizons.join(",")),
            ("experiment.channels", self.channels.to_string()),
            ("experiment.output_dir", self.output_dir.display().to_string()),
            ("synth.duration", s.duration.to_string()),
            ("synth.eeg_fs", s.eeg_fs.to_string()),
            ("synth.kin_fs", s.kin_fs.to_string()),
            ("synth.channels", s.channels.join(",")),
            ("synth.lead_time_ms", s.lead_time_ms.to_string()),
            ("synth.snr_db", s.snr_db.to_string()),
            ("synth.turn_fraction", s.turn_fraction.to_string()),
            ("synth.line_noise_hz", s.line_noise_hz.to_string()),
            ("labels.thresholds", mode.to_string()),
            ("labels.v_th", th.v_th.to_string()),
            ("labels.omega_th", th.omega_th.to_string()),
            ("prep.pipeline", self.prep.pipeline.to_string()),
            ("prep.band_lo", self.prep.band.0.to_string()),
            ("prep.band_hi", self.prep.band.1.to_string()),
            ("window.length_s", self.window.length_s.to_string()),
            ("window.overlap", self.window.overlap.to_string()),
            ("window.aggregation", self.window.aggregation.to_string()),
            ("split.strategy", strategy_name(self.split.strategy).to_string()),
            ("split.train_frac", self.split.train_frac.to_string()),
            ("split.val_frac_of_train", self.split.val_frac_of_train.to_string()),
            (
                "split.sampler",
                match self.split.sampler {
                    Sampler::NoSampling => "none",
                    Sampler::RandomOversample { .. } => "random_oversample",
                }
                .to_string(),
            ),
            ("model.arch", self.arch.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.lr", t.adam.lr.to_string()),
            ("train.beta1", t.adam.beta1.to_string()),
            ("train.beta2", t.adam.beta2.to_string()),
            ("train.eps", t.adam.eps.to_string()),
            ("train.class_weights", t.class_weights.to_string()),
            ("train.patience", t.patience.map_or("none".into(), |p| p.to_string())),
        ]
    }

    /// Applies one assignment. `Ok(false)` means the key is unknown.
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<bool, String> {
        let s = &mut self.synth;
        let adam: &mut AdamConfig = &mut self.train.adam;
        match key {
            "experiment.seed" => self.seed = parse(key, v)?,
            "experiment.sessions" => self.sessions = parse(key, v)?,
            "experiment.horizons" => {
                self.horizons = parse_list(v)?
                    .iter()
                    .map(|h| parse(key, h))
                    .collect::<std::result::Result<_, _>>()?
            }
            "experiment.channels" => self.channels = v.parse()?,
            "experiment.output_dir" => self.output_dir = PathBuf::from(v),
            "synth.duration" => s.duration = parse(key, v)?,
            "synth.eeg_fs" => s.eeg_fs = parse(key, v)?,
            "synth.kin_fs" => s.kin_fs = parse(key, v)?,
            "synth.channels" => s.channels = parse_list(v)?,
            "synth.lead_time_ms" => s.lead_time_ms = parse(key, v)?,
            "synth.snr_db" => s.snr_db = parse(key, v)?,
            "synth.turn_fraction" => s.turn_fraction = parse(key, v)?,
            "synth.line_noise_hz" => s.line_noise_hz = parse(key, v)?,
            "labels.thresholds" => {
                self.thresholds = match v {
                    "estimate" => ThresholdMode::Estimate,
                    "explicit" => match self.thresholds {
                        ThresholdMode::Explicit(th) => ThresholdMode::Explicit(th),
                        ThresholdMode::Estimate => ThresholdMode::Explicit(Thresholds::default()),
                    },
                    _ => return Err(format!("{key}: expected `explicit` or `estimate`, got `{v}`")),
                }
            }
            "labels.v_th" | "labels.omega_th" => {
                let x: f64 = parse(key, v)?;
                if let ThresholdMode::Explicit(th) = &mut self.thresholds {
                    if key == "labels.v_th" {
                        th.v_th = x;
                    } else {
                        th.omega_th = x;
                    }
                }
            }
            "prep.pipeline" => self.prep.pipeline = v.parse().map_err(|e: Error| e.to_string())?,
            "prep.band_lo" => self.prep.band.0 = parse(key, v)?,
            "prep.band_hi" => self.prep.band.1 = parse(key, v)?,
            "window.length_s" => self.window.length_s = parse(key, v)?,
            "window.overlap" => self.window.overlap = parse(key, v)?,
            "window.aggregation" => self.window.aggregation = v.parse::<Aggregation>().map_err(|e| e.to_string())?,
            "split.strategy" => {
                self.split.strategy = match v {
                    "stratified_temporal" => SplitStrategy::LabelStratifiedTemporal,
                    "temporal_plain" => SplitStrategy::TemporalPlain,
                    _ => return Err(format!("{key}: unknown strategy `{v}`")),
                }
            }
            "split.train_frac" => self.split.train_frac = parse(key, v)?,
            "split.val_frac_of_train" => self.split.val_frac_of_train = parse(key, v)?,
            "split.sampler" => {
                self.split.sampler = match v {
                    "none" => Sampler::NoSampling,
                    "random_oversample" => Sampler::RandomOversample { seed: 0 },
                    _ => return Err(format!("{key}: unknown sampler `{v}`")),
                }
            }
            "model.arch" => self.arch = v.parse().map_err(|e: Error| e.to_string())?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "train.lr" => adam.lr = parse(key, v)?,
            "train.beta1" => adam.beta1 = parse(key, v)?,
            "train.beta2" => adam.beta2 = parse(key, v)?,
            "train.eps" => adam.eps = parse(key, v)?,
            "train.class_weights" => self.train.class_weights = v.parse().map_err(|e: Error| e.to_string())?,
            "train.patience" => {
                self.train.patience = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Resolved config as text; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = head;
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::file(&path, e))
    }
}

/// Parses config text; later stages see a validated, fully defaulted value.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::HashSet::new();
    let mut v_th = None;
    let mut omega_th = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `section.key = value`, got `{body}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        // Explicit thresholds may precede the mode switch.
        match key {
            "labels.v_th" => v_th = Some((line, value.to_string())),
            "labels.omega_th" => omega_th = Some((line, value.to_string())),
            _ => {}
        }
        match cfg.set(key, value) {
            Ok(true) => {}
            Ok(false) => {
                return Err(Error::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
            Err(msg) => return Err(Error::Parse { line, msg }),
        }
    }
    for (key, entry) in [("labels.v_th", v_th), ("labels.omega_th", omega_th)] {
        if let Some((line, value)) = entry {
            cfg.set(key, &value).map_err(|msg| Error::Parse { line, msg })?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_config(&text)
}
