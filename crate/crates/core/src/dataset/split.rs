//! Train/validation/test interval assignment on a continuous label timeline.
//!
//! Splits are expressed as sample-index intervals; windows are later cut
//! strictly inside a single interval, so no window straddles two splits.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinlab::{ActionLabel, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitStrategy {
    TemporalPlain,
    LabelStratifiedTemporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampler {
    NoSampling,
    RandomOversample { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub strategy: SplitStrategy,
    pub train_frac: f64,
    pub val_frac_of_train: f64,
    pub sampler: Sampler,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            strategy: SplitStrategy::LabelStratifiedTemporal,
            train_frac: 0.7,
            val_frac_of_train: 0.15,
            sampler: Sampler::RandomOversample { seed: 0 },
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac must be in (0, 1), got {}",
                self.train_frac
            )));
        }
        if !(0.0..=0.5).contains(&self.val_frac_of_train) {
            return Err(Error::Config(format!(
                "val_frac_of_train must be in [0, 0.5], got {}",
                self.val_frac_of_train
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitIntervals {
    pub train: Vec<Range<usize>>,
    pub val: Vec<Range<usize>>,
    pub test: Vec<Range<usize>>,
    pub warnings: Vec<String>,
}

impl SplitIntervals {
    pub fn part(&self, part: SplitPart) -> &[Range<usize>] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    fn sort(&mut self) {
        for v in [&mut self.train, &mut self.val, &mut self.test] {
            v.sort_by_key(|r| r.start);
        }
    }
}

/// Maximal runs of one modelled class; other labels and gaps break runs.
pub fn temporal_chunks(labels: &[Option<ActionLabel>]) -> Vec<(usize, Range<usize>)> {
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let Some(class) = labels[i].and_then(ActionLabel::class_index) else {
            i += 1;
            continue;
        };
        let start = i;
        while i < labels.len() && labels[i].and_then(ActionLabel::class_index) == Some(class) {
            i += 1;
        }
        chunks.push((class, start..i));
    }
    chunks
}

/// Index of the first chunk at which the cumulative length reaches `target`.
fn reach_index(lengths: impl Iterator<Item = usize>, target: f64) -> Option<usize> {
    let mut cum = 0usize;
    for (i, len) in lengths.enumerate() {
        cum += len;
        if cum as f64 >= target - 1e-9 {
            return Some(i);
        }
    }
    None
}

/// Per-class chronological chunk assignment.
///
/// Chunks go to train until the class's cumulative train duration first
/// reaches `train_frac` of its total (the straddling chunk stays in train);
/// the rest go to test. The chronologically last `val_frac_of_train` of each
/// class's train duration, in whole chunks, becomes validation.
pub fn stratified_temporal_split(labels: &[Option<ActionLabel>], cfg: &SplitConfig) -> Result<SplitIntervals> {
    cfg.validate()?;
    let chunks = temporal_chunks(labels);
    let mut out = SplitIntervals::default();
    for class in 0..NUM_CLASSES {
        let mine: Vec<Range<usize>> = chunks
            .iter()
            .filter(|(c, _)| *c == class)
            .map(|(_, r)| r.clone())
            .collect();
        if mine.is_empty() {
            continue;
        }
        if mine.len() < 3 {
            let msg = format!(
                "class {} has only {} temporal chunks; split granularity is coarse",
                ActionLabel::MODEL_CLASSES[class],
                mine.len()
            );
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
        let total: usize = mine.iter().map(|r| r.len()).sum();
        let last_train = reach_index(mine.iter().map(|r| r.len()), cfg.train_frac * total as f64)
            .unwrap_or(mine.len() - 1);
        let train = &mine[..=last_train];
        out.test.extend(mine[last_train + 1..].iter().cloned());

        let train_total: usize = train.iter().map(|r| r.len()).sum();
        let val_target = cfg.val_frac_of_train * train_total as f64;
        let n_val = if val_target > 0.0 && train.len() > 1 {
            // walk back from the most recent chunk, keeping one chunk in train
            reach_index(train.iter().rev().map(|r| r.len()), val_target)
                .map_or(train.len() - 1, |i| i + 1)
                .min(train.len() - 1)
        } else {
            0
        };
        let cut = train.len() - n_val;
        out.train.extend(train[..cut].iter().cloned());
        out.val.extend(train[cut..].iter().cloned());
    }
    out.sort();
    Ok(out)
}

/// First `train_frac` of the labelled timeline to train (its last
/// `val_frac_of_train` to validation), the remainder to test.
pub fn temporal_plain_split(labels: &[Option<ActionLabel>], cfg: &SplitConfig) -> Result<SplitIntervals> {
    cfg.validate()?;
    let usable = labels.iter().rposition(Option::is_some).map_or(0, |i| i + 1);
    let cut = (cfg.train_frac * usable as f64).floor() as usize;
    let val_len = (cfg.val_frac_of_train * cut as f64).floor() as usize;
    let mut out = SplitIntervals::default();
    let push = |v: &mut Vec<Range<usize>>, r: Range<usize>| {
        if !r.is_empty() {
            v.push(r)
        }
    };
    push(&mut out.train, 0..cut - val_len);
    push(&mut out.val, cut - val_len..cut);
    push(&mut out.test, cut..usable);
    Ok(out)
}

pub fn split(labels: &[Option<ActionLabel>], cfg: &SplitConfig) -> Result<SplitIntervals> {
    match cfg.strategy {
        SplitStrategy::TemporalPlain => temporal_plain_split(labels, cfg),
        SplitStrategy::LabelStratifiedTemporal => stratified_temporal_split(labels, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionLabel::*;

    fn cfg(val: f64) -> SplitConfig {
        SplitConfig {
            val_frac_of_train: val,
            ..SplitConfig::default()
        }
    }

    /// Ten equal Forward chunks separated by stops.
    fn ten_chunks() -> Vec<Option<ActionLabel>> {
        let mut v = Vec::new();
        for _ in 0..10 {
            v.extend(std::iter::repeat(Some(Forward)).take(100));
            v.extend(std::iter::repeat(Some(Stopped)).take(10));
        }
        v
    }

    #[test]
    fn chunks_are_maximal_runs() {
        let l = [Some(Forward), Some(Forward), Some(TurnLeft), None, Some(TurnLeft), Some(Stopped), Some(Forward)];
        let c = temporal_chunks(&l);
        assert_eq!(c, vec![(0, 0..2), (1, 2..3), (1, 4..5), (0, 6..7)]);
    }

    #[test]
    fn single_class_ten_chunks() {
        let s = stratified_temporal_split(&ten_chunks(), &cfg(0.0)).unwrap();
        assert_eq!(s.train.len(), 7);
        assert_eq!(s.test.len(), 3);
        assert!(s.val.is_empty());
        assert_eq!(s.train[6], 660..760);
        assert_eq!(s.test[0], 770..870);
    }

    #[test]
    fn validation_is_train_tail() {
        let s = stratified_temporal_split(&ten_chunks(), &cfg(0.15)).unwrap();
        // 15% of 700 samples = 105 -> two whole chunks from the tail
        assert_eq!(s.val, vec![550..650, 660..760]);
        assert_eq!(s.train.len(), 5);
    }

    #[test]
    fn straddling_chunk_goes_to_train() {
        let mut l = Vec::new();
        for len in [100, 500, 100, 100] {
            l.extend(std::iter::repeat(Some(Forward)).take(len));
            l.push(None);
        }
        let s = stratified_temporal_split(&l, &cfg(0.0)).unwrap();
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.test.len(), 2);
    }

    #[test]
    fn few_chunks_warns() {
        let l = vec![Some(Forward); 50];
        let s = stratified_temporal_split(&l, &cfg(0.0)).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.train, vec![0..50]);
    }

    #[test]
    fn plain_split() {
        let l = ten_chunks();
        let c = SplitConfig {
            strategy: SplitStrategy::TemporalPlain,
            ..cfg(0.0)
        };
        let s = split(&l, &c).unwrap();
        let n = l.len();
        assert_eq!(s.train, vec![0..(0.7 * n as f64) as usize]);
        assert_eq!(s.test, vec![(0.7 * n as f64) as usize..n]);
    }

    #[test]
    fn rejects_bad_fractions() {
        let c = SplitConfig {
            train_frac: 1.0,
            ..SplitConfig::default()
        };
        assert!(split(&[], &c).is_err());
    }
}
