//! Schemes that rank tests by a metric over their own failure history
//! (B1 to B4). Metrics take a test's prior failure indicators, oldest first,
//! with builds where the test was absent already removed.

use serde::{Deserialize, Serialize};

use super::{rank_by_key, ColumnCache, Ordering, PrioritizeError, Prioritizer, Round, SchemeId};

/// Consecutive passing builds since the most recent failure.
///
/// A test that never failed scores the full length of its history; a test
/// with no history at all has no score (`None`).
pub fn time_since_last_failure(bits: &[u8]) -> Option<usize> {
    if bits.is_empty() {
        return None;
    }
    Some(bits.iter().rev().take_while(|&&b| b == 0).count())
}

/// Failed builds over builds the test ran in.
pub fn failure_rate(bits: &[u8]) -> Option<f64> {
    if bits.is_empty() {
        return None;
    }
    let fails = bits.iter().filter(|&&b| b == 1).count();
    Some(fails as f64 / bits.len() as f64)
}

/// Smoothing factor of the exponential decay metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub alpha: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self { alpha: 0.9 }
    }
}

impl DecayParams {
    pub fn new(alpha: f64) -> Result<Self, PrioritizeError> {
        let p = Self { alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PrioritizeError> {
        if (0.0..=1.0).contains(&self.alpha) {
            Ok(())
        } else {
            Err(PrioritizeError::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )))
        }
    }
}

/// Exponential decay: seeded with the oldest record, then
/// `p = alpha * b + (1 - alpha) * p` for every later record.
pub fn exp_decay(bits: &[u8], params: DecayParams) -> Option<f64> {
    let (&first, rest) = bits.split_first()?;
    let a = params.alpha;
    Some(
        rest.iter()
            .fold(f64::from(first), |p, &b| a * f64::from(b) + (1.0 - a) * p),
    )
}

/// Recency weights for the ROCKET metric: the previous build, the one
/// before it, and everything older.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocketWeights {
    pub w1: f64,
    pub w2: f64,
    pub w_rest: f64,
}

impl Default for RocketWeights {
    fn default() -> Self {
        Self {
            w1: 0.7,
            w2: 0.2,
            w_rest: 0.1,
        }
    }
}

impl RocketWeights {
    pub fn validate(&self) -> Result<(), PrioritizeError> {
        if [self.w1, self.w2, self.w_rest]
            .iter()
            .all(|w| w.is_finite() && *w > 0.0)
        {
            Ok(())
        } else {
            Err(PrioritizeError::InvalidParameter(
                "rocket weights must be positive".into(),
            ))
        }
    }

    /// Weight of a failure `distance` builds back (1 = previous build).
    pub fn at(&self, distance: usize) -> f64 {
        match distance {
            1 => self.w1,
            2 => self.w2,
            _ => self.w_rest,
        }
    }
}

/// ROCKET metric: prior failures weighted by how recent they are.
pub fn rocket_score(bits: &[u8], weights: RocketWeights) -> f64 {
    let n = bits.len();
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .map(|(j, _)| weights.at(n - j))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HistoryMetric {
    TimeSinceLastFailure,
    FailureRate,
    ExpDecay(DecayParams),
    Rocket(RocketWeights),
}

impl HistoryMetric {
    pub fn scheme(&self) -> SchemeId {
        match self {
            HistoryMetric::TimeSinceLastFailure => SchemeId::B1,
            HistoryMetric::FailureRate => SchemeId::B2,
            HistoryMetric::ExpDecay(_) => SchemeId::B3,
            HistoryMetric::Rocket(_) => SchemeId::B4,
        }
    }

    /// Metric value with the cold-start convention applied: tests without
    /// history get +inf for B1 (ranked last) and 0 for the others.
    pub fn score(&self, bits: &[u8]) -> f64 {
        match *self {
            HistoryMetric::TimeSinceLastFailure => time_since_last_failure(bits).map_or(f64::INFINITY, |v| v as f64),
            HistoryMetric::FailureRate => failure_rate(bits).unwrap_or(0.0),
            HistoryMetric::ExpDecay(p) => exp_decay(bits, p).unwrap_or(0.0),
            HistoryMetric::Rocket(w) => rocket_score(bits, w),
        }
    }

    /// B1 ranks ascending, everything else descending.
    pub fn descending(&self) -> bool {
        !matches!(self, HistoryMetric::TimeSinceLastFailure)
    }
}

/// B1 to B4: sort the build's tests by a history metric.
#[derive(Debug, Clone)]
pub struct MetricPrioritizer {
    metric: HistoryMetric,
    cache: ColumnCache,
}

impl MetricPrioritizer {
    pub fn new(metric: HistoryMetric) -> Self {
        Self {
            metric,
            cache: ColumnCache::default(),
        }
    }

    pub fn metric(&self) -> HistoryMetric {
        self.metric
    }
}

impl Prioritizer for MetricPrioritizer {
    fn scheme(&self) -> SchemeId {
        self.metric.scheme()
    }

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError> {
        self.cache.sync(&round.prior);
        let metric = self.metric;
        let cache = &self.cache;
        Ok(Ordering::new(rank_by_key(
            round.tests,
            |t| metric.score(&cache.bits(t)),
            metric.descending(),
            round.rng,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::BuildHistory;
    use crate::prioritizers::fixtures;
    use crate::prioritizers::{ExecutionOracle, HistoryView};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vector(h: &BuildHistory, t: &str) -> Vec<u8> {
        h.outcome_vector(t, 4).unwrap()
    }

    fn order(h: &BuildHistory, metric: HistoryMetric, seed: u64) -> Vec<String> {
        let build = h.build(4);
        let tests = build.present_tests();
        let mut oracle = ExecutionOracle::from_build(build);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MetricPrioritizer::new(metric);
        let o = p
            .prioritize(Round {
                prior: HistoryView::new(h, 4),
                tests: &tests,
                oracle: &mut oracle,
                rng: &mut rng,
                deadline: None,
            })
            .unwrap();
        assert_eq!(oracle.reveal_count(), 0);
        o.names(h).into_iter().map(String::from).collect()
    }

    #[test]
    fn b1_example() {
        let h = fixtures::example_b1();
        let m: Vec<_> = ["T1", "T2", "T3", "T4"]
            .iter()
            .map(|t| time_since_last_failure(&vector(&h, t)).unwrap())
            .collect();
        assert_eq!(m, vec![2, 0, 1, 0]);
        let mut seen_first = std::collections::HashSet::new();
        for seed in 0..32 {
            let o = order(&h, HistoryMetric::TimeSinceLastFailure, seed);
            assert_eq!(&o[2..], &["T3", "T1"]);
            seen_first.insert(o[0].clone());
        }
        assert_eq!(seen_first.len(), 2, "T2/T4 tie should be broken both ways");
    }

    #[test]
    fn b1_edges() {
        assert_eq!(time_since_last_failure(&[0, 1]), Some(0));
        assert_eq!(time_since_last_failure(&[0, 0, 0]), Some(3));
        assert_eq!(time_since_last_failure(&[]), None);
    }

    #[test]
    fn b2_example() {
        let h = fixtures::example_b2();
        let m: Vec<_> = ["T1", "T2", "T3", "T4"]
            .iter()
            .map(|t| failure_rate(&vector(&h, t)).unwrap())
            .collect();
        assert_eq!(m, vec![0.25, 0.75, 0.5, 1.0]);
        assert_eq!(order(&h, HistoryMetric::FailureRate, 1), vec!["T4", "T2", "T3", "T1"]);
        assert_eq!(failure_rate(&[0, 0]), Some(0.0));
        assert_eq!(failure_rate(&[1, 1]), Some(1.0));
    }

    #[test]
    fn b3_example() {
        let h = fixtures::example_b3();
        let p = DecayParams::default();
        let t1 = exp_decay(&vector(&h, "T1"), p).unwrap();
        assert!((t1 - 0.901).abs() < 1e-12, "{t1}");
        // hand-unrolled: 0 -> 0.9*1 + 0.1*0 -> 0.9*1 + 0.1*0.9 -> 0.9*0 + 0.1*0.99
        let t3_by_hand = 0.1 * (0.9 + 0.1 * (0.9 + 0.1 * 0.0));
        let t3 = exp_decay(&vector(&h, "T3"), p).unwrap();
        assert!((t3 - t3_by_hand).abs() < 1e-12);
        assert!((t3 - 0.099).abs() < 1e-12);
        assert_eq!(order(&h, HistoryMetric::ExpDecay(p), 5), vec!["T1", "T2", "T4", "T3"]);
    }

    #[test]
    fn b4_example() {
        let h = fixtures::example_b4();
        let w = RocketWeights::default();
        let m: Vec<_> = ["T1", "T2", "T3", "T4"]
            .iter()
            .map(|t| rocket_score(&vector(&h, t), w))
            .collect();
        for (got, want) in m.iter().zip([0.1, 0.2, 0.9, 0.4]) {
            assert!((got - want).abs() < 1e-12, "{m:?}");
        }
        assert_eq!(order(&h, HistoryMetric::Rocket(w), 9), vec!["T3", "T4", "T2", "T1"]);
        assert_eq!(rocket_score(&[0, 0, 0], w), 0.0);
        assert_eq!(rocket_score(&[0, 0, 1], w), 0.7);
    }

    #[test]
    fn decay_alpha_is_validated() {
        assert!(DecayParams::new(1.2).is_err());
        assert!(DecayParams::new(-0.1).is_err());
        assert!(DecayParams::new(0.0).is_ok());
    }

    /// Reference for alpha = 1: failed in the most recent present build.
    fn failed_last(bits: &[u8]) -> f64 {
        bits.last().map_or(0.0, |&b| f64::from(b))
    }

    proptest! {
        #[test]
        fn decay_extremes(rows in proptest::collection::vec(proptest::collection::vec(0u8..2, 1..8), 5)) {
            let one = DecayParams { alpha: 1.0 };
            let zero = DecayParams { alpha: 0.0 };
            for r in &rows {
                prop_assert_eq!(exp_decay(r, one).unwrap(), failed_last(r));
                prop_assert_eq!(exp_decay(r, zero).unwrap(), f64::from(r[0]));
            }
        }

        #[test]
        fn metric_order_depends_only_on_argsort(
            rows in proptest::collection::vec(proptest::collection::vec(0u8..2, 0..8), 1..8),
            seed in 0u64..1000,
        ) {
            let w = RocketWeights::default();
            let tests: Vec<usize> = (0..rows.len()).collect();
            let raw = rank_by_key(&tests, |t| rocket_score(&rows[t], w), true,
                &mut ChaCha8Rng::seed_from_u64(seed));
            // strictly increasing transform of the metric
            let squashed = rank_by_key(&tests, |t| (3.0 * rocket_score(&rows[t], w)).exp() - 7.0, true,
                &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(raw, squashed);
        }
    }
}
