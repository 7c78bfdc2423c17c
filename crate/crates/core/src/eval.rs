//! Detection metrics: recall at a fixed false-alarm budget and DET sweeps.
//!
//! Thresholds are calibrated per keyword from negative-trial scores: the
//! operating point admitting at most `n_fa` false alarms uses the n-th
//! largest negative score as the threshold, and a detection requires a
//! score strictly above it.

use crate::error::{Error, Result};

/// Scored trials for one keyword.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
    /// Total negative audio in hours, when known; enables FA/hour reporting.
    pub negative_hours: Option<f64>,
}

impl EvalSet {
    pub fn validate(&self) -> Result<()> {
        if self.positives.is_empty() {
            return Err(Error::Data("no positive trials".into()));
        }
        if self.negatives.is_empty() {
            return Err(Error::Data("no negative trials".into()));
        }
        if self
            .positives
            .iter()
            .chain(&self.negatives)
            .any(|s| !s.is_finite())
        {
            return Err(Error::Numerical("non-finite trial score".into()));
        }
        Ok(())
    }
}

/// Threshold admitting at most `n_fa` false alarms: the n-th largest
/// negative score (detection is strictly greater). `n_fa = 0` means the
/// maximum negative score; `n_fa >= |negatives|` admits everything.
pub fn threshold_for_fa(negatives: &[f64], n_fa: usize) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Data("no negative trials".into()));
    }
    let mut sorted = negatives.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).ok_or(()).unwrap_or(std::cmp::Ordering::Equal));
    if n_fa >= sorted.len() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(sorted[n_fa])
}

/// Fraction of positives scoring strictly above the `n_fa` threshold.
pub fn recall_at_fa(set: &EvalSet, n_fa: usize) -> Result<f64> {
    set.validate()?;
    let theta = threshold_for_fa(&set.negatives, n_fa)?;
    let hits = set.positives.iter().filter(|&&s| s > theta).count();
    Ok(hits as f64 / set.positives.len() as f64)
}

/// Unweighted mean of per-keyword recalls at a shared FA budget.
pub fn macro_recall(sets: &[(String, EvalSet)], n_fa: usize) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Data("no keywords to evaluate".into()));
    }
    let mut total = 0.0;
    for (_, set) in sets {
        total += recall_at_fa(set, n_fa)?;
    }
    Ok(total / sets.len() as f64)
}

/// Recall at every FA budget from 0 to `max_fa` inclusive. Monotone
/// nondecreasing in the budget by construction.
pub fn det_sweep(set: &EvalSet, max_fa: usize) -> Result<Vec<(usize, f64)>> {
    set.validate()?;
    let mut points = Vec::with_capacity(max_fa + 1);
    for n_fa in 0..=max_fa {
        points.push((n_fa, recall_at_fa(set, n_fa)?));
    }
    Ok(points)
}

/// Tab-separated report: `keyword \t n_fa \t recall` per keyword, a macro
/// line last. FA/hour is appended per line when durations are known.
pub fn write_report(sets: &[(String, EvalSet)], n_fa: usize) -> Result<String> {
    let mut out = String::new();
    for (name, set) in sets {
        let recall = recall_at_fa(set, n_fa)?;
        match set.negative_hours {
            Some(hours) if hours > 0.0 => out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.4}\n",
                name,
                n_fa,
                recall,
                n_fa as f64 / hours
            )),
            _ => out.push_str(&format!("{}\t{}\t{:.6}\n", name, n_fa, recall)),
        }
    }
    out.push_str(&format!("macro\t{}\t{:.6}\n", n_fa, macro_recall(sets, n_fa)?));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(pos: &[f64], neg: &[f64]) -> EvalSet {
        EvalSet {
            positives: pos.to_vec(),
            negatives: neg.to_vec(),
            negative_hours: None,
        }
    }

    #[test]
    fn hand_example() {
        let s = set(&[0.95, 0.8], &[0.9, 0.5, 0.1]);
        // n_fa=0: θ = 0.9 (max negative), only 0.95 clears it
        assert_eq!(recall_at_fa(&s, 0).unwrap(), 0.5);
        // n_fa=1: θ = 0.9 is admitted, next is 0.5; 0.95 and 0.8 clear
        assert_eq!(recall_at_fa(&s, 1).unwrap(), 1.0);
        assert_eq!(threshold_for_fa(&s.negatives, 1).unwrap(), 0.5);
        // budget beyond |negatives| admits everything
        assert_eq!(threshold_for_fa(&s.negatives, 3).unwrap(), f64::NEG_INFINITY);
        assert_eq!(recall_at_fa(&s, 3).unwrap(), 1.0);
    }

    #[test]
    fn strict_inequality_at_threshold() {
        // a positive exactly at the threshold does not count
        let s = set(&[0.9, 0.91], &[0.9, 0.2]);
        assert_eq!(recall_at_fa(&s, 0).unwrap(), 0.5);
    }

    #[test]
    fn sweep_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let s = set(
                &(0..30).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(),
                &(0..50).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(),
            );
            let points = det_sweep(&s, 50).unwrap();
            for w in points.windows(2) {
                assert!(w[1].1 >= w[0].1);
            }
            assert_eq!(points.last().unwrap().1, 1.0, "full budget admits all");
        }
    }

    #[test]
    fn recall_depends_only_on_ranks() {
        // applying a strictly increasing map to all scores preserves recall
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pos: Vec<f64> = (0..20).map(|_| rng.gen::<f64>()).collect();
        let neg: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let s = set(&pos, &neg);
        let warp = |v: f64| (3.0 * v).exp() + v;
        let s2 = set(
            &pos.iter().map(|&v| warp(v)).collect::<Vec<_>>(),
            &neg.iter().map(|&v| warp(v)).collect::<Vec<_>>(),
        );
        for n_fa in 0..10 {
            assert_eq!(
                recall_at_fa(&s, n_fa).unwrap(),
                recall_at_fa(&s2, n_fa).unwrap()
            );
        }
    }

    #[test]
    fn macro_recall_averages() {
        let sets = vec![
            ("a".to_string(), set(&[1.0, 1.0], &[0.5])),
            ("b".to_string(), set(&[0.4, 0.6], &[0.5])),
        ];
        assert_eq!(macro_recall(&sets, 0).unwrap(), 0.75);
    }

    #[test]
    fn report_format() {
        let sets = vec![(
            "hey".to_string(),
            EvalSet {
                positives: vec![0.9],
                negatives: vec![0.1],
                negative_hours: Some(2.0),
            },
        )];
        let report = write_report(&sets, 4).unwrap();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("hey\t4\t1.000000\t2.0000"));
        assert!(lines[1].starts_with("macro\t4\t1.000000"));
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(recall_at_fa(&set(&[], &[0.1]), 0).is_err());
        assert!(recall_at_fa(&set(&[0.1], &[]), 0).is_err());
        assert!(macro_recall(&[], 0).is_err());
    }
}
