//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use m2d_core::config::{ChannelSet, ExperimentConfig};
use m2d_core::dataset::{
    aggregate, build_datasets, read_cache, segment, shift_horizon, Aggregate, Aggregation, Dataset, DatasetSpec,
    Example, Sampler, SessionInput, SplitConfig, SplitStrategy, WindowSpec, ALLOWED_OVERLAPS,
    ALLOWED_WINDOW_LENGTHS_S,
};
use m2d_core::experiment::{run_experiment, HorizonRow};
use m2d_core::kinlab::{classify_sample, label_track, ActionLabel, LabelSeries, Thresholds, NUM_CLASSES};
use m2d_core::metrics::{evaluate, report, ConfusionMatrix};
use m2d_core::mlcore::gradcheck::check_gradients;
use m2d_core::mlcore::{predict_dataset, train, Arch, Model, ModelSpec};
use m2d_core::sigprep::{label_aligned, resample_to_eeg, zscore};
use m2d_core::synthgen::{gen_session, EegRecording, SynthConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances.
const LABEL_AGREEMENT_MIN: f64 = 0.99;
const TRANSITION_GUARD_S: f64 = 0.2;
const RULE_SAMPLES: usize = 10_000;
const LEAKAGE_CONFIGS: usize = 20;
const TRAIN_SHARE: (f64, f64) = (0.65, 0.80);
const GRAD_PER_LAYER: usize = 200;
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const LEARN_F1_MIN: f64 = 0.85;
const SHUFFLED_F1_MAX: f64 = 0.45;
const STABLE_HORIZON_MAX_MS: u32 = 600;
const STABLE_DELTA_MAX: f64 = 0.05;
const SHORT_LEAD_DROP_MIN: f64 = 0.10;
const CHANNEL_SLACK: f64 = 0.02;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scratch_dir(name: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(name).tempdir().expect("temp dir")
}

fn labeller_oracle() -> Outcome {
    let mut worst = 1.0f64;
    for seed in 1..=5 {
        let cfg = SynthConfig {
            seed,
            duration: 600.0,
            ..SynthConfig::default()
        };
        let s = gen_session(0, &cfg).expect("session");
        let labels = label_track(&s.track, &Thresholds::default()).expect("labels");
        let truth = s.schedule.labels_at(&s.track.timestamps);
        let transitions = s.schedule.transitions();
        let (mut agree, mut total) = (0usize, 0usize);
        for (i, &t) in s.track.timestamps.iter().enumerate() {
            if transitions.iter().any(|&x| (t - x).abs() <= TRANSITION_GUARD_S) {
                continue;
            }
            total += 1;
            agree += usize::from(labels.labels[i] == truth[i]);
        }
        worst = worst.min(agree as f64 / total as f64);
    }
    outcome(
        worst >= LABEL_AGREEMENT_MIN,
        format!("worst session agreement {worst:.5} (min {LABEL_AGREEMENT_MIN})"),
    )
}

fn rule_exhaustiveness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0usize;
    for i in 0..RULE_SAMPLES {
        let th = Thresholds {
            v_th: rng.random_range(0.05..3.0),
            omega_th: rng.random_range(0.005..0.5),
        };
        // every eighth sample sits exactly on a boundary
        let (v, w, d) = if i % 8 == 0 {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            match rng.random_range(0..3) {
                0 => (th.v_th, rng.random_range(-1.0..1.0), rng.random_range(-PI..PI)),
                1 => (rng.random_range(0.0..20.0), sign * th.omega_th, rng.random_range(-PI..PI)),
                _ => (rng.random_range(0.0..20.0), rng.random_range(-1.0..1.0), sign * PI / 2.0),
            }
        } else {
            (
                rng.random_range(0.0..20.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-PI..=PI),
            )
        };
        let stopped = v < th.v_th;
        let reverse = !stopped && d.abs() > PI / 2.0;
        let moving_ahead = !stopped && !reverse;
        let members = [
            (ActionLabel::Stopped, stopped),
            (ActionLabel::Reverse, reverse),
            (ActionLabel::TurnLeft, moving_ahead && w > th.omega_th),
            (ActionLabel::TurnRight, moving_ahead && w < -th.omega_th),
            (ActionLabel::Forward, moving_ahead && w.abs() <= th.omega_th),
        ];
        let hits: Vec<ActionLabel> = members.iter().filter(|m| m.1).map(|m| m.0).collect();
        let got = classify_sample(v, w, d, &th);
        if hits.len() != 1 || got.ok() != Some(hits[0]) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{RULE_SAMPLES} samples, {bad} without exactly one matching label"))
}

struct Prepared {
    eeg: EegRecording,
    labels: LabelSeries,
}

fn prepared_sessions(seeds: &[u64], duration: f64) -> Vec<Prepared> {
    seeds
        .iter()
        .map(|&seed| {
            let cfg = SynthConfig {
                seed,
                duration,
                ..SynthConfig::default()
            };
            let s = gen_session(seed as u32, &cfg).expect("session");
            let eeg = zscore(&s.eeg).expect("zscore");
            let aligned = resample_to_eeg(&s.track, &eeg.timestamps).expect("resample");
            let labels = label_aligned(&aligned, &Thresholds::default()).expect("labels");
            Prepared { eeg, labels }
        })
        .collect()
}

fn sample_spans(examples: &[Example], fs: f64, w: usize) -> Vec<(u32, usize, usize)> {
    examples
        .iter()
        .map(|e| {
            let s = (e.start_time * fs).round() as usize;
            (e.session_id, s, s + w)
        })
        .collect()
}

fn overlapping(a: &[(u32, usize, usize)], b: &[(u32, usize, usize)]) -> usize {
    a.iter()
        .filter(|x| b.iter().any(|y| x.0 == y.0 && x.1 < y.2 && y.1 < x.2))
        .count()
}

fn leakage_suite() -> Outcome {
    let sessions = prepared_sessions(&[11, 12, 13], 600.0);
    let inputs: Vec<SessionInput<'_>> = sessions
        .iter()
        .enumerate()
        .map(|(i, p)| SessionInput {
            id: i as u32,
            eeg: &p.eeg,
            labels: &p.labels,
        })
        .collect();
    let fs = sessions[0].eeg.fs;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut overlaps = 0usize;
    let mut share_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut failures = Vec::new();
    for _ in 0..LEAKAGE_CONFIGS {
        let window = WindowSpec {
            length_s: *ALLOWED_WINDOW_LENGTHS_S.choose(&mut rng).unwrap(),
            overlap: *ALLOWED_OVERLAPS.choose(&mut rng).unwrap(),
            aggregation: if rng.random_bool(0.5) { Aggregation::Reject } else { Aggregation::Majority },
        };
        let strategy = if rng.random_bool(0.5) {
            SplitStrategy::LabelStratifiedTemporal
        } else {
            SplitStrategy::TemporalPlain
        };
        let horizon = rng.random_range(0..=10u32) * 100;
        let spec = DatasetSpec {
            window,
            split: SplitConfig {
                strategy,
                sampler: Sampler::NoSampling,
                ..SplitConfig::default()
            },
            channels: Some(vec!["C3".into()]),
        };
        let ds = build_datasets(&inputs, horizon, &spec).expect("datasets");
        let w = window.samples(fs);
        let (tr, va, te) = (
            sample_spans(&ds.train.examples, fs, w),
            sample_spans(&ds.val.examples, fs, w),
            sample_spans(&ds.test.examples, fs, w),
        );
        let n = overlapping(&tr, &te) + overlapping(&va, &te) + overlapping(&tr, &va);
        overlaps += n;
        if n > 0 {
            failures.push(format!("{window:?} {strategy:?} h={horizon}: {n} overlaps"));
        }
        if strategy == SplitStrategy::LabelStratifiedTemporal {
            let s = &ds.stats;
            for k in 0..NUM_CLASSES {
                let pool = s.train_counts[k] + s.val_counts[k];
                let total = pool + s.test_counts[k];
                // classes with too few windows have no meaningful share
                if total < 50 {
                    continue;
                }
                let share = pool as f64 / total as f64;
                share_range = (share_range.0.min(share), share_range.1.max(share));
                if !(TRAIN_SHARE.0..=TRAIN_SHARE.1).contains(&share) {
                    failures.push(format!("{window:?} h={horizon}: class {k} train share {share:.3}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{LEAKAGE_CONFIGS} configs, {overlaps} overlapping window pairs, stratified train share in [{:.3}, {:.3}] (allowed [{}, {}]){}",
            share_range.0,
            share_range.1,
            TRAIN_SHARE.0,
            TRAIN_SHARE.1,
            if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
        ),
    )
}

fn rejection_identity() -> Outcome {
    let mut mismatches = 0usize;
    let mut rejected_total = 0usize;
    for seed in 1..=3u64 {
        let cfg = SynthConfig {
            seed,
            duration: 600.0,
            ..SynthConfig::default()
        };
        let s = gen_session(0, &cfg).expect("session");
        let truth = LabelSeries {
            labels: s.schedule.labels_at(&s.eeg.timestamps),
            timestamps: s.eeg.timestamps.clone(),
        };
        let transitions = s.schedule.transitions();
        let shifted = shift_horizon(&truth, 0, s.eeg.fs).expect("shift");
        for length_s in ALLOWED_WINDOW_LENGTHS_S {
            for overlap in ALLOWED_OVERLAPS {
                let spec = WindowSpec {
                    length_s,
                    overlap,
                    aggregation: Aggregation::Reject,
                };
                let w = spec.samples(s.eeg.fs);
                let windows = segment(&s.eeg, &shifted, &spec).expect("segment");
                let rejected: BTreeSet<usize> = windows
                    .iter()
                    .filter(|win| aggregate(&win.labels, Aggregation::Reject) == Aggregate::Rejected)
                    .map(|win| win.start)
                    .collect();
                let straddling: BTreeSet<usize> = windows
                    .iter()
                    .filter(|win| {
                        let first = s.eeg.timestamps[win.start];
                        let last = s.eeg.timestamps[win.start + w - 1];
                        transitions.iter().any(|&t| first < t && t <= last)
                    })
                    .map(|win| win.start)
                    .collect();
                rejected_total += rejected.len();
                mismatches += rejected.symmetric_difference(&straddling).count();
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{rejected_total} rejected windows over 3 sessions x 8 window specs, {mismatches} differ from the straddle set"),
    )
}

fn gradient_checks() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for arch in [Arch::CompactConv, Arch::RecurrentNet] {
        let spec = ModelSpec::new(arch, 16, 125).expect("spec");
        let model = Model::<f64>::new(spec, 21).expect("model");
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..16 * 125).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
        let checks = check_gradients(
            &model,
            &refs,
            &[0, 1, 2, 1],
            &[0.6, 1.7, 1.4],
            GRAD_PER_LAYER,
            GRAD_STEP,
            GRAD_REL_TOL,
            7,
        )
        .expect("gradient check");
        for c in checks {
            let size: usize = spec.layout().iter().filter(|t| t.layer == c.layer).map(|t| t.len()).sum();
            let ok = c.failures == 0 && c.checked >= GRAD_PER_LAYER.min(size);
            pass &= ok;
            lines.push(format!("{arch}/{} {} checked, max rel {:.1e}", c.layer, c.checked, c.max_rel_error));
        }
    }
    outcome(pass, format!("tol {GRAD_REL_TOL:.0e}: {}", lines.join("; ")))
}

fn brute_force_scores(truth: &[usize], pred: &[usize], k: usize) -> (Vec<(f64, f64, f64)>, f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut scores = Vec::new();
    let mut recalls = Vec::new();
    for c in 0..k {
        let tp = (0..truth.len()).filter(|&i| truth[i] == c && pred[i] == c).count();
        let fp = (0..truth.len()).filter(|&i| truth[i] != c && pred[i] == c).count();
        let fneg = (0..truth.len()).filter(|&i| truth[i] == c && pred[i] != c).count();
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fneg);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if tp + fneg > 0 {
            recalls.push(r);
        }
        scores.push((p, r, f));
    }
    let macro_f1 = scores.iter().map(|s| s.2).sum::<f64>() / k as f64;
    let bal = if recalls.is_empty() { 0.0 } else { recalls.iter().sum::<f64>() / recalls.len() as f64 };
    let acc = ratio((0..truth.len()).filter(|&i| truth[i] == pred[i]).count(), truth.len());
    (scores, macro_f1, bal, acc)
}

fn metrics_oracle() -> Outcome {
    let (n, k) = (4usize, 3usize);
    let decode = |mut code: usize| -> Vec<usize> {
        (0..n)
            .map(|_| {
                let d = code % k;
                code /= k;
                d
            })
            .collect()
    };
    let combos = k.pow(n as u32);
    let mut mismatches = 0usize;
    for a in 0..combos {
        let truth = decode(a);
        for b in 0..combos {
            let pred = decode(b);
            let mut cm = ConfusionMatrix::zeros(k);
            for i in 0..n {
                cm.counts[truth[i]][pred[i]] += 1;
            }
            let r = report(&cm);
            let (scores, macro_f1, bal, acc) = brute_force_scores(&truth, &pred, k);
            let same = r.macro_f1 == macro_f1
                && r.balanced_accuracy == bal
                && r.accuracy == acc
                && (0..k).all(|c| {
                    (r.per_class[c].precision, r.per_class[c].recall, r.per_class[c].f1) == scores[c]
                });
            mismatches += usize::from(!same);
        }
    }
    outcome(mismatches == 0, format!("{} assignments, {mismatches} mismatches", combos * combos))
}

fn run(cfg: &ExperimentConfig) -> Vec<HorizonRow> {
    run_experiment(cfg).unwrap_or_else(|e| panic!("experiment failed: {e}"))
}

fn row_at(rows: &[HorizonRow], h: u32) -> &HorizonRow {
    rows.iter().find(|r| r.horizon_ms == h).expect("horizon present")
}

fn shuffled_control(out: &Path) -> f64 {
    let dir = out.join("datasets").join("h0000");
    let load = |name: &str| read_cache(&dir.join(name)).expect("cache");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut shuffle = |mut ds: Dataset| {
        let mut labels: Vec<ActionLabel> = ds.examples.iter().map(|e| e.label).collect();
        labels.shuffle(&mut rng);
        ds.examples.iter_mut().zip(labels).for_each(|(e, l)| e.label = l);
        ds
    };
    let (train_set, val_set, test_set) = (shuffle(load("train.m2d")), shuffle(load("val.m2d")), load("test.m2d"));
    let base = ExperimentConfig::default();
    let outcome = train(base.model_spec().unwrap(), &base.train_config(0), &train_set, &val_set).expect("train");
    let preds = predict_dataset(&outcome.checkpoint.model, &test_set).expect("predict");
    evaluate(&test_set.class_indices(), &preds, NUM_CLASSES).expect("metrics").macro_f1
}

fn csv_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("read dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).expect("read")));
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let only: Option<usize> = std::env::var("M2D_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let wanted = |n: usize| only.is_none_or(|o| o == n);
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let t0 = Instant::now();
        let o = f();
        let secs = t0.elapsed().as_secs_f64();
        println!(
            "criterion {n:>2} {name}: {} ({:.1} s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            secs,
            o.detail
        );
        results.push((n, name, o, secs));
    };

    record(1, "labeller oracle", &mut labeller_oracle);
    record(2, "rule exhaustiveness", &mut rule_exhaustiveness);
    record(3, "leakage suite", &mut leakage_suite);
    record(4, "rejection-rule identity", &mut rejection_identity);
    record(5, "gradient checks", &mut gradient_checks);
    record(6, "metrics oracle", &mut metrics_oracle);

    // One default sweep serves the learnability, stability and channel criteria.
    let needs_sweep = [7, 8, 9].into_iter().any(wanted);
    let sweep_dir = scratch_dir("m2d-default-");
    let mut sweep_secs = 0.0;
    let default_rows = if needs_sweep {
        let t0 = Instant::now();
        let rows = run(&ExperimentConfig {
            output_dir: sweep_dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        });
        sweep_secs = t0.elapsed().as_secs_f64();
        println!("default sweep over {} horizons took {sweep_secs:.1} s", rows.len());
        rows
    } else {
        Vec::new()
    };

    record(7, "end-to-end learnability", &mut || {
        let f1 = row_at(&default_rows, 0).macro_f1;
        let control = shuffled_control(sweep_dir.path());
        outcome(
            f1 >= LEARN_F1_MIN && control <= SHUFFLED_F1_MAX,
            format!("horizon 0 macro-F1 {f1:.4} (min {LEARN_F1_MIN}); shuffled-label control {control:.4} (max {SHUFFLED_F1_MAX})"),
        )
    });

    record(8, "horizon-stability trend", &mut || {
        let base = row_at(&default_rows, 0).macro_f1;
        let worst = default_rows
            .iter()
            .filter(|r| r.horizon_ms <= STABLE_HORIZON_MAX_MS)
            .map(|r| (r.horizon_ms, (r.macro_f1 - base).abs()))
            .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
        let short = scratch_dir("m2d-short-lead-");
        let mut cfg = ExperimentConfig {
            horizons: vec![0, 1000],
            output_dir: short.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        cfg.synth.lead_time_ms = 200.0;
        let rows = run(&cfg);
        let drop = row_at(&rows, 0).macro_f1 - row_at(&rows, 1000).macro_f1;
        let curve: Vec<String> = default_rows.iter().map(|r| format!("{}:{:.3}", r.horizon_ms, r.macro_f1)).collect();
        outcome(
            worst.1 <= STABLE_DELTA_MAX && drop >= SHORT_LEAD_DROP_MIN,
            format!(
                "lead 800 ms: max |dF1| up to {STABLE_HORIZON_MAX_MS} ms = {:.4} at {} ms (max {STABLE_DELTA_MAX}); lead 200 ms: F1 {:.4} -> {:.4}, drop {drop:.4} (min {SHORT_LEAD_DROP_MIN}); curve [{}]",
                worst.1,
                worst.0,
                row_at(&rows, 0).macro_f1,
                row_at(&rows, 1000).macro_f1,
                curve.join(" ")
            ),
        )
    });

    record(9, "channel-subset trend", &mut || {
        let f16 = row_at(&default_rows, 0).macro_f1;
        let dir = scratch_dir("m2d-frontal8-");
        let rows = run(&ExperimentConfig {
            horizons: vec![0],
            channels: ChannelSet::Frontal8,
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        });
        let f8 = row_at(&rows, 0).macro_f1;
        outcome(
            f16 >= f8 - CHANNEL_SLACK,
            format!("16 channels {f16:.4}, 8 channels {f8:.4} (slack {CHANNEL_SLACK})"),
        )
    });

    record(10, "determinism", &mut || {
        let (a, b) = (scratch_dir("m2d-det-a-"), scratch_dir("m2d-det-b-"));
        let reduced = |dir: &Path| {
            let mut cfg = ExperimentConfig {
                sessions: 3,
                horizons: vec![0, 500, 1000],
                output_dir: dir.to_path_buf(),
                ..ExperimentConfig::default()
            };
            cfg.synth.duration = 300.0;
            cfg.train.max_epochs = 4;
            cfg
        };
        run(&reduced(a.path()));
        run(&reduced(b.path()));
        let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
        let same = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| x == y);
        outcome(
            same && fa.iter().any(|(name, _)| name == "horizons.csv"),
            format!("{} CSV files compared across two sweeps, identical: {same}", fa.len()),
        )
    });

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| format!("{} ({})", r.0, r.1)).collect();
    let total: f64 = results.iter().map(|r| r.3).sum::<f64>() + sweep_secs;
    println!(
        "acceptance: {} of {} criteria passed in {total:.0} s",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
