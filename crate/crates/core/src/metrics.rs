//! APFD, detection-rate curves and distribution summaries.
//!
//! Percentiles use linear interpolation between closest ranks (the default
//! of numpy's `percentile`), so `[1, 2, 3, 4]` has median 2.5 and IQR 1.5.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no faults in run")]
    NoFaults,
    #[error("run has no tests")]
    EmptyRun,
    #[error("fault position {position} outside 1..={n}")]
    PositionOutOfRange { position: usize, n: usize },
    #[error("fault positions must be strictly increasing")]
    UnsortedPositions,
    #[error("ordering is not a permutation of the build's tests")]
    NotAPermutation,
    #[error("cannot summarize an empty list")]
    EmptySample,
}

/// A run of `n` tests whose fault-revealing tests sit at the given 1-based
/// ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct ApfdInput {
    n: usize,
    positions: Vec<usize>,
}

impl ApfdInput {
    pub fn new(n: usize, positions: Vec<usize>) -> Result<Self, MetricsError> {
        if n == 0 {
            return Err(MetricsError::EmptyRun);
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::UnsortedPositions);
        }
        if let Some(&position) = positions.iter().find(|&&p| p == 0 || p > n) {
            return Err(MetricsError::PositionOutOfRange { position, n });
        }
        Ok(Self { n, positions })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// `1 - sum(TC_i) / (n m) + 1 / (2n)`.
    pub fn apfd(&self) -> Result<f64, MetricsError> {
        if self.positions.is_empty() {
            return Err(MetricsError::NoFaults);
        }
        let n = self.n as f64;
        let m = self.positions.len() as f64;
        let sum: usize = self.positions.iter().sum();
        Ok(1.0 - sum as f64 / (n * m) + 1.0 / (2.0 * n))
    }
}

pub fn apfd(n: usize, positions: Vec<usize>) -> Result<f64, MetricsError> {
    ApfdInput::new(n, positions)?.apfd()
}

/// 1-based ranks of the failing tests in `ordering`.
pub fn fault_positions(ordering: &[usize], failed: impl Fn(usize) -> bool) -> Vec<usize> {
    ordering
        .iter()
        .enumerate()
        .filter(|(_, &t)| failed(t))
        .map(|(i, _)| i + 1)
        .collect()
}

/// APFD of `ordering` given `ground_truth` as `(test, failed)` pairs for
/// every test of the build.
pub fn apfd_from_ordering(ordering: &[usize], ground_truth: &[(usize, bool)]) -> Result<f64, MetricsError> {
    let mut tests: Vec<usize> = ground_truth.iter().map(|&(t, _)| t).collect();
    let mut seen = ordering.to_vec();
    tests.sort_unstable();
    seen.sort_unstable();
    if tests != seen {
        return Err(MetricsError::NotAPermutation);
    }
    let failing: std::collections::HashSet<usize> = ground_truth.iter().filter(|&&(_, f)| f).map(|&(t, _)| t).collect();
    ApfdInput::new(ordering.len(), fault_positions(ordering, |t| failing.contains(&t)))?.apfd()
}

/// Where the faults of one build landed under one ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub n: usize,
    /// Sorted 1-based ranks of failing tests.
    pub ranks: Vec<usize>,
}

impl FaultProfile {
    /// Fraction of faults found within the first `k` executions.
    pub fn recall_at(&self, k: usize) -> f64 {
        if self.ranks.is_empty() || k >= self.n {
            return 1.0;
        }
        let found = self.ranks.partition_point(|&r| r <= k);
        found as f64 / self.ranks.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub k: Vec<usize>,
    pub mean_recall: Vec<f64>,
}

impl DetectionCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean_recall\n");
        for (k, y) in self.k.iter().zip(&self.mean_recall) {
            out.push_str(&format!("{k},{y:.6}\n"));
        }
        out
    }
}

/// Pointwise mean over builds of the fraction of faults found within the
/// first `k` executions, `k = 1..=max build size`.
pub fn detection_curve(profiles: &[FaultProfile]) -> DetectionCurve {
    let max_n = profiles.iter().map(|p| p.n).max().unwrap_or(0);
    let k: Vec<usize> = (1..=max_n).collect();
    let mean_recall = k
        .iter()
        .map(|&k| profiles.iter().map(|p| p.recall_at(k)).sum::<f64>() / profiles.len() as f64)
        .collect();
    DetectionCurve { k, mean_recall }
}

/// One build's APFD under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApfdSample {
    pub algorithm: String,
    pub build_index: usize,
    pub apfd: f64,
    #[serde(skip)]
    pub elapsed: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub iqr: f64,
}

/// `q`-th percentile (`0..=100`) of sorted data with linear interpolation.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn percentile(values: &[f64], q: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&v, q))
}

pub fn summarize(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Summary {
        median: percentile_sorted(&v, 50.0),
        iqr: percentile_sorted(&v, 75.0) - percentile_sorted(&v, 25.0),
    })
}
