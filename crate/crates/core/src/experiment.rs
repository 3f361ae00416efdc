//! Staged experiment driver.
//!
//! Each stage reads the files written by the previous one under the output
//! directory, so any stage can be rerun from cached results:
//!
//! ```text
//! synth  sessions/session_NN/{kinematics,eeg,schedule}.csv
//! label  sessions/session_NN/labels.csv, thresholds.json
//! build  datasets/hNNNN/{train,val,test}.m2d, datasets/hNNNN/build_log.json
//! train  models/hNNNN.ckpt, logs/train_hNNNN.csv
//! eval   reports/hNNNN.json, reports/confusion_hNNNN.csv, horizons.csv
//! report summary.txt
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ThresholdMode};
use crate::dataset::{build_datasets, read_cache, write_cache, BuildStats, DatasetSpec, SessionInput};
use crate::error::{Error, Result};
use crate::io::{export_session, read_eeg, read_kinematics, read_labels, write_labels, SessionFiles, LABELS_FILE};
use crate::kinlab::{estimate_thresholds, ActionLabel, LabelSeries, Thresholds, NUM_CLASSES};
use crate::metrics::{evaluate, MetricsReport};
use crate::mlcore::{predict_dataset, read_checkpoint, train, write_checkpoint, EpochLog};
use crate::sigprep::{label_aligned, preprocess, resample_to_eeg};
use crate::synthgen::{gen_session, EegRecording};

pub const HORIZONS_FILE: &str = "horizons.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const HORIZONS_HEADER: &str =
    "horizon_ms,macro_f1,balanced_accuracy,accuracy,recall_forward,recall_turn_left,recall_turn_right";

/// Top-level entries a sweep may create.
const OUTPUTS: [&str; 9] = [
    "sessions",
    "datasets",
    "models",
    "logs",
    "reports",
    THRESHOLDS_FILE,
    HORIZONS_FILE,
    SUMMARY_FILE,
    crate::config::RESOLVED_CONFIG_FILE,
];

/// File locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn session_dir(&self, i: usize) -> PathBuf {
        self.root.join("sessions").join(format!("session_{i:02}"))
    }

    pub fn labels_file(&self, i: usize) -> PathBuf {
        self.session_dir(i).join(LABELS_FILE)
    }

    pub fn thresholds_file(&self) -> PathBuf {
        self.root.join(THRESHOLDS_FILE)
    }

    pub fn dataset_dir(&self, h: u32) -> PathBuf {
        self.root.join("datasets").join(format!("h{h:04}"))
    }

    pub fn model_file(&self, h: u32) -> PathBuf {
        self.root.join("models").join(format!("h{h:04}.ckpt"))
    }

    pub fn train_log(&self, h: u32) -> PathBuf {
        self.root.join("logs").join(format!("train_h{h:04}.csv"))
    }

    pub fn report_file(&self, h: u32) -> PathBuf {
        self.root.join("reports").join(format!("h{h:04}.json"))
    }

    pub fn confusion_file(&self, h: u32) -> PathBuf {
        self.root.join("reports").join(format!("confusion_h{h:04}.csv"))
    }

    pub fn horizons_file(&self) -> PathBuf {
        self.root.join(HORIZONS_FILE)
    }

    pub fn summary_file(&self) -> PathBuf {
        self.root.join(SUMMARY_FILE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub mode: String,
    pub v_th: f64,
    pub omega_th: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub horizon_ms: u32,
    pub rejected_fraction: f64,
    pub stats: BuildStats,
}

/// One row of the horizon table.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRow {
    pub horizon_ms: u32,
    pub macro_f1: f64,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub recalls: [f64; NUM_CLASSES],
}

impl HorizonRow {
    pub fn from_report(horizon_ms: u32, r: &MetricsReport) -> Self {
        HorizonRow {
            horizon_ms,
            macro_f1: r.macro_f1,
            balanced_accuracy: r.balanced_accuracy,
            accuracy: r.accuracy,
            recalls: std::array::from_fn(|k| r.per_class[k].recall),
        }
    }

    fn to_csv(&self) -> String {
        let [a, b, c] = self.recalls;
        format!(
            "{},{:.6},{:.6},{:.6},{a:.6},{b:.6},{c:.6}",
            self.horizon_ms, self.macro_f1, self.balanced_accuracy, self.accuracy
        )
    }
}

fn layout(cfg: &ExperimentConfig) -> Layout {
    Layout::new(&cfg.output_dir)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::file(path, format!("not found; it is produced by the `{producer}` stage")))
    }
}

fn echo_config(cfg: &ExperimentConfig) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    cfg.write_resolved(&cfg.output_dir)
}

fn staged<T>(stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(stage))
}

/// Generates the synthetic sessions.
pub fn run_synth(cfg: &ExperimentConfig) -> Result<()> {
    staged("synth", || {
        echo_config(cfg)?;
        let lay = layout(cfg);
        for i in 0..cfg.sessions {
            let session = gen_session(i as u32, &cfg.session_synth(i))?;
            let dir = lay.session_dir(i);
            create_dir(&dir)?;
            export_session(&session.schedule, &session.track, &session.eeg, &dir)?;
            log::info!("synth: session {i} written to {}", dir.display());
        }
        Ok(())
    })
}

/// Labels every session on its EEG timeline and writes the thresholds used.
pub fn run_label(cfg: &ExperimentConfig) -> Result<Thresholds> {
    staged("label", || {
        echo_config(cfg)?;
        let lay = layout(cfg);
        let mut tracks = Vec::with_capacity(cfg.sessions);
        let mut stamps = Vec::with_capacity(cfg.sessions);
        for i in 0..cfg.sessions {
            let files = SessionFiles::in_dir(&lay.session_dir(i));
            require(&files.kinematics, "synth")?;
            require(&files.eeg, "synth")?;
            tracks.push(read_kinematics(&files.kinematics)?);
            stamps.push(read_eeg(&files.eeg)?.timestamps);
        }
        let (mode, th) = match cfg.thresholds {
            ThresholdMode::Explicit(th) => ("explicit", th),
            ThresholdMode::Estimate => ("estimate", estimate_thresholds(&tracks)?),
        };
        log::info!("label: {mode} thresholds v_th = {} m/s, omega_th = {} rad/s", th.v_th, th.omega_th);
        for (i, (track, ts)) in tracks.iter().zip(&stamps).enumerate() {
            let aligned = resample_to_eeg(track, ts)?;
            let labels = label_aligned(&aligned, &th)?;
            write_labels(&lay.labels_file(i), &labels)?;
        }
        let record = ThresholdRecord {
            mode: mode.into(),
            v_th: th.v_th,
            omega_th: th.omega_th,
        };
        let json = serde_json::to_string_pretty(&record).map_err(|e| Error::InvalidInput(e.to_string()))?;
        write_text(&lay.thresholds_file(), &json)?;
        Ok(th)
    })
}

fn load_labelled(cfg: &ExperimentConfig) -> Result<Vec<(EegRecording, LabelSeries)>> {
    let lay = layout(cfg);
    (0..cfg.sessions)
        .map(|i| {
            let eeg_path = SessionFiles::in_dir(&lay.session_dir(i)).eeg;
            let labels_path = lay.labels_file(i);
            require(&eeg_path, "synth")?;
            require(&labels_path, "label")?;
            let eeg = preprocess(&read_eeg(&eeg_path)?, &cfg.prep)?;
            Ok((eeg, read_labels(&labels_path)?))
        })
        .collect()
}

/// Builds and caches train/validation/test datasets for every horizon.
pub fn run_build(cfg: &ExperimentConfig) -> Result<Vec<BuildLog>> {
    staged("build", || {
        echo_config(cfg)?;
        let lay = layout(cfg);
        let sessions = load_labelled(cfg)?;
        let inputs: Vec<SessionInput<'_>> = sessions
            .iter()
            .enumerate()
            .map(|(i, (eeg, labels))| SessionInput {
                id: i as u32,
                eeg,
                labels,
            })
            .collect();
        let spec = DatasetSpec {
            window: cfg.window,
            split: cfg.split_config(),
            channels: cfg.channels.names(),
        };
        let mut logs = Vec::with_capacity(cfg.horizons.len());
        for &h in &cfg.horizons {
            let ds = build_datasets(&inputs, h, &spec)?;
            let dir = lay.dataset_dir(h);
            create_dir(&dir)?;
            write_cache(&dir.join("train.m2d"), &ds.train)?;
            write_cache(&dir.join("val.m2d"), &ds.val)?;
            write_cache(&dir.join("test.m2d"), &ds.test)?;
            for w in &ds.stats.warnings {
                log::warn!("build: horizon {h} ms: {w}");
            }
            log::info!(
                "build: horizon {h} ms: {} windows, rejected fraction {:.4}, train {:?}, val {:?}, test {:?}",
                ds.stats.windows,
                ds.stats.rejected_fraction(),
                ds.stats.train_counts,
                ds.stats.val_counts,
                ds.stats.test_counts
            );
            let entry = BuildLog {
                horizon_ms: h,
                rejected_fraction: ds.stats.rejected_fraction(),
                stats: ds.stats,
            };
            let json = serde_json::to_string_pretty(&entry).map_err(|e| Error::InvalidInput(e.to_string()))?;
            write_text(&dir.join("build_log.json"), &json)?;
            logs.push(entry);
        }
        Ok(logs)
    })
}

fn render_train_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_macro_f1,val_balanced_accuracy\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            e.epoch, e.train_loss, e.val_macro_f1, e.val_balanced_accuracy
        );
    }
    out
}

/// Trains one model per horizon and stores the best checkpoint.
pub fn run_train(cfg: &ExperimentConfig) -> Result<()> {
    staged("train", || {
        echo_config(cfg)?;
        let lay = layout(cfg);
        let spec = cfg.model_spec()?;
        for &h in &cfg.horizons {
            let dir = lay.dataset_dir(h);
            let (train_path, val_path) = (dir.join("train.m2d"), dir.join("val.m2d"));
            require(&train_path, "build")?;
            require(&val_path, "build")?;
            let outcome = train(spec, &cfg.train_config(h), &read_cache(&train_path)?, &read_cache(&val_path)?)?;
            log::info!(
                "train: horizon {h} ms: best epoch {} of {}, val macro-F1 {:.4}",
                outcome.checkpoint.epoch,
                outcome.log.len(),
                outcome.checkpoint.val_macro_f1
            );
            let model_path = lay.model_file(h);
            create_dir(model_path.parent().expect("model file has a parent"))?;
            write_checkpoint(&model_path, &outcome.checkpoint)?;
            write_text(&lay.train_log(h), &render_train_log(&outcome.log))?;
        }
        Ok(())
    })
}

fn render_confusion(r: &MetricsReport) -> String {
    let names: Vec<&str> = ActionLabel::MODEL_CLASSES.iter().map(|l| l.as_str()).collect();
    let mut out = format!("truth,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&r.confusion.counts) {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{name},{}", cells.join(","));
    }
    out
}

pub fn render_horizons(rows: &[HorizonRow]) -> String {
    let mut out = format!("{HORIZONS_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Evaluates every checkpoint on its test set and writes the horizon table.
pub fn run_eval(cfg: &ExperimentConfig) -> Result<Vec<HorizonRow>> {
    staged("eval", || {
        echo_config(cfg)?;
        let lay = layout(cfg);
        let mut rows = Vec::with_capacity(cfg.horizons.len());
        for &h in &cfg.horizons {
            let model_path = lay.model_file(h);
            let test_path = lay.dataset_dir(h).join("test.m2d");
            require(&model_path, "train")?;
            require(&test_path, "build")?;
            let ck = read_checkpoint(&model_path)?;
            let test = read_cache(&test_path)?;
            let preds = predict_dataset(&ck.model, &test)?;
            let report = evaluate(&test.class_indices(), &preds, NUM_CLASSES)?;
            write_text(&lay.report_file(h), &report.to_json())?;
            write_text(&lay.confusion_file(h), &render_confusion(&report))?;
            log::info!(
                "eval: horizon {h} ms: macro-F1 {:.4}, balanced accuracy {:.4}",
                report.macro_f1,
                report.balanced_accuracy
            );
            rows.push(HorizonRow::from_report(h, &report));
        }
        write_text(&lay.horizons_file(), &render_horizons(&rows))?;
        Ok(rows)
    })
}

fn remove_outputs(root: &Path, existed: bool) {
    for name in OUTPUTS {
        let p = root.join(name);
        let _ = if p.is_dir() { fs::remove_dir_all(&p) } else { fs::remove_file(&p) };
    }
    if !existed {
        let _ = fs::remove_dir(root);
    }
}

/// Runs synth, label, build, train and eval in order. On failure every
/// output of the run is removed and the failing stage is named in the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<HorizonRow>> {
    cfg.validate()?;
    let existed = cfg.output_dir.exists();
    let result = (|| {
        run_synth(cfg)?;
        run_label(cfg)?;
        run_build(cfg)?;
        run_train(cfg)?;
        run_eval(cfg)
    })();
    if result.is_err() {
        remove_outputs(&cfg.output_dir, existed);
    }
    result
}

pub fn read_horizons(path: &Path) -> Result<Vec<HorizonRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::file(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::file(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != HORIZONS_HEADER {
        return Err(Error::file(path, "unexpected header"));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::file(path, e))?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::file(path, format!("bad number `{}`", &rec[i])))
            };
            Ok(HorizonRow {
                horizon_ms: rec[0]
                    .parse()
                    .map_err(|_| Error::file(path, format!("bad horizon `{}`", &rec[0])))?,
                macro_f1: num(1)?,
                balanced_accuracy: num(2)?,
                accuracy: num(3)?,
                recalls: [num(4)?, num(5)?, num(6)?],
            })
        })
        .collect()
}

/// Row with the highest Macro-F1; the earliest horizon wins ties.
pub fn optimal_horizon(rows: &[HorizonRow]) -> Option<&HorizonRow> {
    rows.iter()
        .fold(None, |best: Option<&HorizonRow>, r| match best {
            Some(b) if b.macro_f1 >= r.macro_f1 => Some(b),
            _ => Some(r),
        })
}

pub fn render_report(rows: &[HorizonRow]) -> Result<String> {
    let best = optimal_horizon(rows).ok_or_else(|| Error::EmptyResult("horizon table has no rows".into()))?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>10}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}",
        "horizon", "macroF1", "balAcc", "acc", "rec_fwd", "rec_L", "rec_R"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>7} ms  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
            r.horizon_ms, r.macro_f1, r.balanced_accuracy, r.accuracy, r.recalls[0], r.recalls[1], r.recalls[2]
        );
    }
    let _ = writeln!(
        out,
        "\noptimal horizon: {} ms (macro-F1 {:.4}, balanced accuracy {:.4})",
        best.horizon_ms, best.macro_f1, best.balanced_accuracy
    );
    Ok(out)
}

/// Renders the horizon table and summary and writes it to `summary.txt`.
pub fn run_report(cfg: &ExperimentConfig) -> Result<String> {
    staged("report", || {
        echo_config(cfg)?;
        let lay = layout(cfg);
        let path = lay.horizons_file();
        require(&path, "eval")?;
        let text = render_report(&read_horizons(&path)?)?;
        write_text(&lay.summary_file(), &text)?;
        Ok(text)
    })
}
