//! Reconstruction-quality metrics.

use crate::domain::Spectrum;
use crate::error::{Error, Result};
use crate::format::Manifest;
use crate::stats::{mean, pearson, std_dev};

/// Correlations below this count as failed reconstructions.
pub const FAILURE_THRESHOLD: f64 = 0.5;

/// Pearson correlation of a reconstruction with its ground truth.
///
/// Two equal constant spectra correlate at 1; a constant against anything
/// else at 0.
pub fn cross_correlation(s: &Spectrum, t: &Spectrum) -> Result<f64> {
    if s.len() != t.len() {
        return Err(Error::DimensionMismatch {
            context: "cross_correlation spectra",
            expected: s.len(),
            actual: t.len(),
        });
    }
    if s.len() < 2 {
        return Err(Error::invalid(
            "cross_correlation needs spectra with at least two channels",
        ));
    }
    Ok(pearson(s.values(), t.values()))
}

/// Per-sample correlations of one method on one test set, with summary
/// statistics and the settings that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub correlations: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two samples.
    pub std: f64,
    pub failure_fraction: f64,
    pub settings: Manifest,
}

impl EvalReport {
    pub fn new(correlations: Vec<f64>, settings: Manifest) -> Result<Self> {
        if correlations.is_empty() {
            return Err(Error::invalid("an evaluation needs at least one sample"));
        }
        if let Some(c) = correlations.iter().find(|c| !(-1.0..=1.0).contains(*c)) {
            return Err(Error::NonFinite(format!("correlation {c} outside [-1, 1]")));
        }
        let failures = correlations
            .iter()
            .filter(|c| **c < FAILURE_THRESHOLD)
            .count();
        Ok(Self {
            mean: mean(&correlations),
            std: std_dev(&correlations),
            failure_fraction: failures as f64 / correlations.len() as f64,
            correlations,
            settings,
        })
    }

    pub fn count(&self) -> usize {
        self.correlations.len()
    }

    /// Counts of correlations in `bins` equal-width bins over [-1, 1]. The
    /// last bin is closed on the right.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut counts = vec![0; bins.max(1)];
        let n = counts.len();
        for &c in &self.correlations {
            let k = (((c + 1.0) / 2.0) * n as f64).floor() as usize;
            counts[k.min(n - 1)] += 1;
        }
        counts
    }
}

/// Standard deviation of two groups pooled, weighting each by its degrees
/// of freedom.
pub fn pooled_std(a: &EvalReport, b: &EvalReport) -> f64 {
    let (na, nb) = (a.count() as f64, b.count() as f64);
    let dof = na + nb - 2.0;
    if dof <= 0.0 {
        return 0.0;
    }
    (((na - 1.0) * a.std * a.std + (nb - 1.0) * b.std * b.std) / dof).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(v: &[f64]) -> Spectrum {
        Spectrum::new(v.to_vec()).unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let s = spec(&[0.1, 0.5, 0.2, 0.9]);
        assert!((cross_correlation(&s, &s).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alternating_pattern_is_minus_one() {
        let c = cross_correlation(&spec(&[1., 0., 1., 0.]), &spec(&[0., 1., 0., 1.])).unwrap();
        assert!((c + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_conventions() {
        let flat = spec(&[0.3; 5]);
        let other = spec(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert_eq!(cross_correlation(&flat, &flat).unwrap(), 1.0);
        assert_eq!(cross_correlation(&flat, &other).unwrap(), 0.0);
        assert_eq!(cross_correlation(&other, &flat).unwrap(), 0.0);
        assert_eq!(cross_correlation(&flat, &spec(&[0.7; 5])).unwrap(), 0.0);
    }

    #[test]
    fn length_errors() {
        assert!(matches!(
            cross_correlation(&spec(&[1.0, 2.0]), &spec(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(cross_correlation(&spec(&[1.0]), &spec(&[1.0])).is_err());
    }

    #[test]
    fn report_statistics() {
        let r = EvalReport::new(vec![1.0, 0.4, 0.6, 0.2], Manifest::new()).unwrap();
        assert!((r.mean - 0.55).abs() < 1e-15);
        // squared deviations 0.2025 + 0.0225 + 0.0025 + 0.1225 = 0.35, over 3
        assert!((r.std - (0.35f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.failure_fraction, 0.5);
        assert_eq!(r.histogram(4), vec![0, 0, 2, 2]);
        assert_eq!(r.histogram(2), vec![0, 4]);
    }

    #[test]
    fn report_rejects_bad_input() {
        assert!(EvalReport::new(vec![], Manifest::new()).is_err());
        assert!(EvalReport::new(vec![1.5], Manifest::new()).is_err());
    }

    #[test]
    fn pooled_std_of_equal_groups() {
        let a = EvalReport::new(vec![0.0, 1.0], Manifest::new()).unwrap();
        let b = EvalReport::new(vec![0.5, 0.5, 0.5], Manifest::new()).unwrap();
        // (1 * 0.5 + 2 * 0) / 3
        assert!((pooled_std(&a, &b) - (0.5f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn affine_invariance(v in proptest::collection::vec(0.0f64..1.0, 3..30), a in 0.1f64..10.0, b in 0.0f64..5.0) {
            let s = spec(&v);
            let t = spec(&v.iter().map(|x| a * x + b).collect::<Vec<_>>());
            let c = cross_correlation(&s, &t).unwrap();
            let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-6 {
                prop_assert!((c - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn report_bounds(c in proptest::collection::vec(-1.0f64..=1.0, 1..50)) {
            let r = EvalReport::new(c, Manifest::new()).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r.mean));
            prop_assert!((0.0..=1.0).contains(&r.failure_fraction));
            prop_assert_eq!(r.histogram(20).iter().sum::<usize>(), r.count());
        }
    }
}
