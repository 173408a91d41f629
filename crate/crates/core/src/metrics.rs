//! Calibration metrics: absolute error and k-sigma coverage of credible bands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Field;

/// Raw per-entry tallies, so several test cases can be pooled before the
/// percentages are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageCounts {
    pub entries: usize,
    pub abs_error_sum: f64,
    pub within_1: usize,
    pub within_2: usize,
}

impl CoverageCounts {
    pub fn merge(&mut self, other: &CoverageCounts) {
        self.entries += other.entries;
        self.abs_error_sum += other.abs_error_sum;
        self.within_1 += other.within_1;
        self.within_2 += other.within_2;
    }

    pub fn mae(&self) -> f64 {
        self.abs_error_sum / self.entries as f64
    }

    pub fn coverage_1(&self) -> f64 {
        100.0 * self.within_1 as f64 / self.entries as f64
    }

    pub fn coverage_2(&self) -> f64 {
        100.0 * self.within_2 as f64 / self.entries as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    /// Percent of entries with `|truth - mean| <= std`.
    pub coverage_1: f64,
    pub coverage_2: f64,
}

fn covered(err: f64, std: f64, k: f64) -> bool {
    if std == 0.0 {
        err == 0.0
    } else {
        err <= k * std
    }
}

/// Tallies over aligned value slices.
pub fn coverage_counts(truth: &[f64], mean: &[f64], std: &[f64]) -> Result<CoverageCounts> {
    if truth.len() != mean.len() || truth.len() != std.len() {
        return Err(Error::shape(
            "metrics",
            format!("truth {}, mean {}, std {} entries", truth.len(), mean.len(), std.len()),
        ));
    }
    if let Some(s) = std.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::invalid(format!("standard deviations must be >= 0, got {s}")));
    }
    let mut c = CoverageCounts {
        entries: truth.len(),
        ..CoverageCounts::default()
    };
    for ((t, m), s) in truth.iter().zip(mean).zip(std) {
        let err = (t - m).abs();
        c.abs_error_sum += err;
        c.within_1 += covered(err, *s, 1.0) as usize;
        c.within_2 += covered(err, *s, 2.0) as usize;
    }
    Ok(c)
}

fn check_fields(truth: &Field, other: &Field) -> Result<()> {
    if truth.n_nodes() != other.n_nodes() || truth.n_channels() != other.n_channels() {
        return Err(Error::shape(
            "metrics",
            format!(
                "{}x{} against {}x{}",
                truth.n_nodes(),
                truth.n_channels(),
                other.n_nodes(),
                other.n_channels()
            ),
        ));
    }
    Ok(())
}

pub fn field_coverage_counts(truth: &Field, mean: &Field, std: &Field) -> Result<CoverageCounts> {
    check_fields(truth, mean)?;
    check_fields(truth, std)?;
    coverage_counts(truth.values(), mean.values(), std.values())
}

pub fn compute_metrics(truth: &Field, mean: &Field, std: &Field) -> Result<Metrics> {
    let c = field_coverage_counts(truth, mean, std)?;
    Ok(Metrics {
        mae: c.mae(),
        coverage_1: c.coverage_1(),
        coverage_2: c.coverage_2(),
    })
}

/// Mean absolute error only, for point predictors.
pub fn mean_absolute_error(truth: &Field, prediction: &Field) -> Result<f64> {
    check_fields(truth, prediction)?;
    let n = truth.values().len() as f64;
    Ok(truth.values().iter().zip(prediction.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}
