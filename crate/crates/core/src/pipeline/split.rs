//! Contiguous train/test partition and cross-validation folds.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::time_to_sample;

/// Which partition a sample (or a word, by its onset sample) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Fold(usize),
    Test,
}

/// The final block of the timeline is held out for testing; the rest is cut
/// into contiguous folds. The same boundaries apply to every subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub n_samples: usize,
    pub test: Range<usize>,
    pub folds: Vec<Range<usize>>,
    /// Samples dropped from scoring on each side of a boundary with fitted data.
    pub guard: usize,
}

/// Splits `n_samples` into a final test block of `round(test_fraction · n)`
/// samples and `n_folds` contiguous training folds.
pub fn split_data(
    n_samples: usize,
    test_fraction: f64,
    n_folds: usize,
    guard: usize,
) -> Result<DataSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least 2 folds, got {n_folds}"
        )));
    }
    let test_len = (n_samples as f64 * test_fraction).round() as usize;
    let train_len = n_samples - test_len.min(n_samples);
    let bounds: Vec<usize> = (0..=n_folds).map(|i| i * train_len / n_folds).collect();
    let folds: Vec<Range<usize>> = bounds.windows(2).map(|w| w[0]..w[1]).collect();
    // Each scored span must keep at least two samples after the guard bands.
    let min_fold = 2 * guard + 2;
    let shortest = folds.iter().map(|f| f.len()).min().unwrap_or(0);
    if shortest < min_fold || test_len < guard + 2 {
        return Err(Error::InvalidArgument(format!(
            "recording of {n_samples} samples is too short: folds of {shortest} and a test block of {test_len} \
             samples, but a guard of {guard} needs folds of at least {min_fold} and a test block of at least {}",
            guard + 2
        )));
    }
    Ok(DataSplit {
        n_samples,
        test: train_len..n_samples,
        folds,
        guard,
    })
}

impl DataSplit {
    pub fn n_folds(&self) -> usize {
        self.folds.len()
    }

    pub fn training_span(&self) -> Range<usize> {
        0..self.test.start
    }

    /// Samples used to fit the model that is validated on `fold`.
    pub fn fit_intervals(&self, fold: usize) -> Vec<Range<usize>> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, r)| *i != fold && !r.is_empty())
            .map(|(_, r)| r.clone())
            .collect()
    }

    /// Validation samples of `fold` that count towards its score.
    pub fn scored_validation(&self, fold: usize) -> Range<usize> {
        let r = &self.folds[fold];
        let lo = if fold > 0 {
            r.start + self.guard
        } else {
            r.start
        };
        let hi = if fold + 1 < self.folds.len() {
            r.end - self.guard
        } else {
            r.end
        };
        lo..hi
    }

    /// Test samples that count towards the held-out score.
    pub fn scored_test(&self) -> Range<usize> {
        self.test.start + self.guard..self.test.end
    }

    pub fn partition_of_sample(&self, sample: usize) -> Partition {
        if sample >= self.test.start {
            return Partition::Test;
        }
        let fold = self
            .folds
            .iter()
            .position(|r| r.contains(&sample))
            .unwrap_or(0);
        Partition::Fold(fold)
    }

    /// Partition of an event by the sample containing its onset.
    pub fn partition_of_time(&self, onset_s: f64, fs: f64) -> Partition {
        self.partition_of_sample(time_to_sample(onset_s, fs).max(0) as usize)
    }

    /// Per word: may its value inform the model validated on `fold`?
    /// `None` selects the final model, trained on every fold.
    pub fn training_mask(&self, onsets_s: &[f64], fs: f64, fold: Option<usize>) -> Vec<bool> {
        onsets_s
            .iter()
            .map(|&t| match self.partition_of_time(t, fs) {
                Partition::Test => false,
                Partition::Fold(f) => Some(f) != fold,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousand_samples() {
        let s = split_data(1000, 0.25, 4, 0).unwrap();
        assert_eq!(s.test, 750..1000);
        let lens: Vec<usize> = s.folds.iter().map(|f| f.len()).collect();
        assert_eq!(lens, vec![187, 188, 187, 188]);
        assert_eq!(s.folds[0].start, 0);
        assert_eq!(s.folds[3].end, 750);
        assert_eq!(s.fit_intervals(1), vec![0..187, 375..562, 562..750]);
    }

    #[test]
    fn guard_bands_only_face_fitted_data() {
        let s = split_data(1000, 0.25, 4, 10).unwrap();
        assert_eq!(s.scored_validation(0), 0..177);
        assert_eq!(s.scored_validation(1), 197..365);
        assert_eq!(s.scored_validation(3), 572..750);
        assert_eq!(s.scored_test(), 760..1000);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(split_data(20, 0.25, 4, 3).is_err());
        assert!(split_data(1000, 0.0, 4, 0).is_err());
        assert!(split_data(1000, 0.25, 1, 0).is_err());
    }

    #[test]
    fn words_belong_to_the_partition_of_their_onset_sample() {
        let s = split_data(1000, 0.25, 4, 0).unwrap();
        let fs = 100.0;
        // Onset at sample 186 (fold 0) even if the word runs into fold 1;
        // 7.4951 s rounds to sample 750, the first test sample.
        let onsets = [1.86, 1.874, 7.494, 7.4951];
        let parts: Vec<Partition> = onsets.iter().map(|&t| s.partition_of_time(t, fs)).collect();
        assert_eq!(
            parts,
            vec![
                Partition::Fold(0),
                Partition::Fold(1),
                Partition::Fold(3),
                Partition::Test
            ]
        );
        assert_eq!(
            s.training_mask(&onsets, fs, Some(1)),
            vec![true, false, true, false]
        );
        assert_eq!(
            s.training_mask(&onsets, fs, None),
            vec![true, true, true, false]
        );
    }

    #[test]
    fn boundaries_depend_only_on_length() {
        let a = split_data(5000, 0.25, 4, 12).unwrap();
        let b = split_data(5000, 0.25, 4, 12).unwrap();
        assert_eq!(a, b);
    }
}
