use std::fs;

use m2d_core::config::{parse_config, ExperimentConfig};
use m2d_core::experiment::{run_experiment, run_report, Layout, HORIZONS_HEADER};
use m2d_core::kinlab::Thresholds;
use m2d_core::sigprep::{label_aligned, resample_to_eeg};
use m2d_core::synthgen::{gen_session, SynthConfig};
use m2d_core::Error;

fn small(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = parse_config("experiment.sessions = 2\nsynth.duration = 150\ntrain.max_epochs = 2\n").unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn eeg_timeline_labels_follow_schedule() {
    for seed in [4, 9] {
        let s = gen_session(0, &SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let aligned = resample_to_eeg(&s.track, &s.eeg.timestamps).unwrap();
        let labels = label_aligned(&aligned, &Thresholds::default()).unwrap();
        assert_eq!(labels.len(), s.eeg.n_samples());
        let truth = s.schedule.labels_at(&s.eeg.timestamps);
        let transitions = s.schedule.transitions();
        let kept: Vec<usize> = (0..truth.len())
            .filter(|&i| transitions.iter().all(|&t| (s.eeg.timestamps[i] - t).abs() > 0.2))
            .collect();
        let agree = kept.iter().filter(|&&i| labels.labels[i] == truth[i]).count();
        assert!(agree as f64 / kept.len() as f64 >= 0.99, "seed {seed}");
    }
}

#[test]
fn single_horizon_sweep_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small(a.path());
    cfg.horizons = vec![0];
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].horizon_ms, 0);

    let lay = Layout::new(a.path());
    let table = fs::read_to_string(lay.horizons_file()).unwrap();
    assert_eq!(table.lines().next().unwrap(), HORIZONS_HEADER);
    assert_eq!(table.lines().count(), 2);
    for p in [lay.model_file(0), lay.train_log(0), lay.report_file(0), lay.confusion_file(0)] {
        assert!(p.exists(), "{}", p.display());
    }
    let summary = run_report(&cfg).unwrap();
    assert!(summary.contains("optimal horizon: 0 ms"));

    cfg.output_dir = b.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    assert_eq!(table, fs::read_to_string(Layout::new(b.path()).horizons_file()).unwrap());
}

#[test]
fn failed_sweep_removes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), "keep me").unwrap();
    let mut cfg = small(dir.path());
    cfg.horizons = vec![0];
    cfg.train.adam.lr = 1e30;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage: "train", .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
    let left: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(left, vec!["notes.txt".to_string()]);
}
