//! Scott-Knott ranking gated by Cliff's delta.
//!
//! Treatments are sorted by median and split recursively at the prefix that
//! maximizes `E = |l1|/|l| * abs(mean(l1) - mean(l))^2 + |l2|/|l| * abs(mean(l2) - mean(l))^2`,
//! where sizes and means are over the pooled observations of each side. A
//! split is kept only when Cliff's delta between the pooled sides reaches
//! the small-effect threshold. Final groups are ranked from 1 upwards,
//! starting at the lowest median.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{summarize, MetricsError};

pub const SMALL_EFFECT: f64 = 0.147;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least two treatments to split, got {0}")]
    TooFewTreatments(usize),
    #[error("treatment {0:?} has no observations")]
    EmptyTreatment(String),
    #[error("duplicate treatment {0:?}")]
    DuplicateTreatment(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// `(sum over x in a, y in b of sign(x - y)) / (|a| |b|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut sorted = b.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for &x in a {
        let below = sorted.partition_point(|&y| y < x);
        let not_above = sorted.partition_point(|&y| y <= x);
        let above = sorted.len() - not_above;
        dominance += below as i64 - above as i64;
    }
    dominance as f64 / (a.len() as f64 * b.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treatment {
    pub id: String,
    pub observations: Vec<f64>,
}

impl Treatment {
    pub fn new(id: impl Into<String>, observations: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            observations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkSplit {
    /// Number of treatments on the left side.
    pub at: usize,
    pub left: Vec<String>,
    pub right: Vec<String>,
    pub delta_gain: f64,
}

fn pooled<'a>(ts: &'a [&Treatment]) -> impl Iterator<Item = f64> + 'a {
    ts.iter().flat_map(|t| t.observations.iter().copied())
}

fn best_split_refs(sorted: &[&Treatment]) -> Result<SkSplit, StatsError> {
    if sorted.len() < 2 {
        return Err(StatsError::TooFewTreatments(sorted.len()));
    }
    let counts: Vec<usize> = sorted.iter().map(|t| t.observations.len()).collect();
    let sums: Vec<f64> = sorted.iter().map(|t| t.observations.iter().sum()).collect();
    let n: usize = counts.iter().sum();
    let total: f64 = sums.iter().sum();
    let mean = total / n as f64;

    let mut best: Option<(usize, f64)> = None;
    let (mut n1, mut s1) = (0usize, 0.0f64);
    for at in 1..sorted.len() {
        n1 += counts[at - 1];
        s1 += sums[at - 1];
        let n2 = n - n1;
        let (m1, m2) = (s1 / n1 as f64, (total - s1) / n2 as f64);
        let gain = n1 as f64 / n as f64 * (m1 - mean).abs().powi(2) + n2 as f64 / n as f64 * (m2 - mean).abs().powi(2);
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((at, gain));
        }
    }
    let (at, delta_gain) = best.expect("at least one candidate split");
    Ok(SkSplit {
        at,
        left: sorted[..at].iter().map(|t| t.id.clone()).collect(),
        right: sorted[at..].iter().map(|t| t.id.clone()).collect(),
        delta_gain,
    })
}

/// Best prefix/suffix split of treatments already sorted by median.
pub fn best_split(sorted: &[Treatment]) -> Result<SkSplit, StatsError> {
    let refs: Vec<&Treatment> = sorted.iter().collect();
    best_split_refs(&refs)
}

/// Sort by median, then by id.
fn sort_by_median(treatments: &[Treatment]) -> Result<Vec<(&Treatment, f64)>, StatsError> {
    let mut keyed = Vec::with_capacity(treatments.len());
    for t in treatments {
        if t.observations.is_empty() {
            return Err(StatsError::EmptyTreatment(t.id.clone()));
        }
        keyed.push((t, summarize(&t.observations)?.median));
    }
    keyed.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
    if let Some(w) = keyed.windows(2).find(|w| w[0].0.id == w[1].0.id) {
        return Err(StatsError::DuplicateTreatment(w[0].0.id.clone()));
    }
    Ok(keyed)
}

fn partition(sorted: &[&Treatment], threshold: f64, groups: &mut Vec<usize>) {
    if sorted.len() >= 2 {
        let split = best_split_refs(sorted).expect("two or more treatments");
        let (left, right) = sorted.split_at(split.at);
        let a: Vec<f64> = pooled(left).collect();
        let b: Vec<f64> = pooled(right).collect();
        if cliffs_delta(&a, &b).abs() >= threshold {
            partition(left, threshold, groups);
            partition(right, threshold, groups);
            return;
        }
    }
    groups.push(sorted.len());
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    /// `None` for treatments without results (skipped or timed out).
    pub rank: Option<usize>,
    pub what: String,
    pub median: Option<f64>,
    pub iqr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankReport {
    pub rows: Vec<RankRow>,
}

impl RankReport {
    pub fn row(&self, what: &str) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.what == what)
    }

    pub fn rank_of(&self, what: &str) -> Option<usize> {
        self.row(what).and_then(|r| r.rank)
    }

    /// Append an "n/a" row.
    pub fn push_unavailable(&mut self, what: impl Into<String>) {
        self.rows.push(RankRow {
            rank: None,
            what: what.into(),
            median: None,
            iqr: None,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,what,med,IQR\n");
        for r in &self.rows {
            match (r.rank, r.median, r.iqr) {
                (Some(rank), Some(med), Some(iqr)) => out.push_str(&format!("{rank},{},{med:.6},{iqr:.6}\n", r.what)),
                _ => out.push_str(&format!("n/a,{},n/a,n/a\n", r.what)),
            }
        }
        out
    }
}

impl fmt::Display for RankReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.what.len()).max().unwrap_or(0).max(4);
        writeln!(f, "{:>4}  {:<width$}  {:>6}  {:>6}", "rank", "what", "med", "IQR")?;
        for r in &self.rows {
            match (r.rank, r.median, r.iqr) {
                (Some(rank), Some(med), Some(iqr)) => {
                    writeln!(f, "{rank:>4}  {:<width$}  {med:>6.3}  {iqr:>6.3}", r.what)?
                }
                _ => writeln!(f, "{:>4}  {:<width$}  {:>6}  {:>6}", "n/a", r.what, "n/a", "n/a")?,
            }
        }
        Ok(())
    }
}

/// Rank treatments; rows come out in ascending median order.
pub fn scott_knott(treatments: &[Treatment], threshold: f64) -> Result<RankReport, StatsError> {
    let keyed = sort_by_median(treatments)?;
    let sorted: Vec<&Treatment> = keyed.iter().map(|(t, _)| *t).collect();
    let mut groups = Vec::new();
    if !sorted.is_empty() {
        partition(&sorted, threshold, &mut groups);
    }
    let mut rows = Vec::with_capacity(sorted.len());
    let mut it = sorted.iter();
    for (g, size) in groups.into_iter().enumerate() {
        for t in it.by_ref().take(size) {
            let s = summarize(&t.observations)?;
            rows.push(RankRow {
                rank: Some(g + 1),
                what: t.id.clone(),
                median: Some(s.median),
                iqr: Some(s.iqr),
            });
        }
    }
    Ok(RankReport { rows })
}
