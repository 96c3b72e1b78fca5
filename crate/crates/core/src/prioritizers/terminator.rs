//! Active-learning prioritization (D1).
//!
//! Tests run in seeded random order until the first failure. From then on a
//! linear classifier over each test's recent outcome history is retrained
//! after every execution. While fewer than `n1` failures have been seen the
//! next test is the one whose predicted failure probability is closest to
//! 0.5 (uncertainty sampling); afterwards it is the most probable failure
//! (certainty sampling). Until a passing test has been observed, a random
//! sample of unexecuted tests stands in as negatives.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::svm::LinearSvm;
use super::{ColumnCache, Ordering, PrioritizeError, Prioritizer, Round, SchemeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminatorConfig {
    /// Failures to observe before switching from uncertainty to certainty
    /// sampling.
    pub n1: usize,
    /// Number of most recent outcomes used as features.
    pub feature_window: usize,
    /// Cap on presumed negatives drawn per retraining round.
    pub presumed_negatives: usize,
    /// SVM soft-margin constant.
    pub svm_c: f64,
}

impl Default for TerminatorConfig {
    fn default() -> Self {
        Self {
            n1: 2,
            feature_window: 10,
            presumed_negatives: 10,
            svm_c: 1.0,
        }
    }
}

impl TerminatorConfig {
    pub fn validate(&self) -> Result<(), PrioritizeError> {
        if self.n1 == 0 {
            return Err(PrioritizeError::InvalidParameter("n1 must be at least 1".into()));
        }
        if self.feature_window == 0 {
            return Err(PrioritizeError::InvalidParameter(
                "feature_window must be at least 1".into(),
            ));
        }
        if !(self.svm_c.is_finite() && self.svm_c > 0.0) {
            return Err(PrioritizeError::InvalidParameter("svm_c must be positive".into()));
        }
        Ok(())
    }
}

/// Model mapping a feature vector to a failure probability.
pub trait FaultScorer {
    fn fit(&mut self, features: &[&[f64]], failed: &[bool]);

    fn probability(&self, features: &[f64]) -> f64;
}

impl FaultScorer for LinearSvm {
    fn fit(&mut self, features: &[&[f64]], failed: &[bool]) {
        LinearSvm::fit(self, features, failed);
    }

    fn probability(&self, features: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.decision(features)).exp())
    }
}

/// The last `window` failure indicators, zero-padded on the left.
pub fn history_features(bits: &[u8], window: usize) -> Vec<f64> {
    let tail = &bits[bits.len().saturating_sub(window)..];
    let mut out = vec![0.0; window - tail.len()];
    out.extend(tail.iter().map(|&b| f64::from(b)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Bootstrap: no failure seen yet.
    Random,
    Uncertainty,
    Certainty,
    /// Training set had one class only; picked by largest feature norm.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminatorStep {
    pub test: usize,
    pub mode: SelectionMode,
    pub failed: bool,
    /// Failures revealed before this pick.
    pub faults_before: usize,
    /// Predicted probabilities of the candidates when this pick was made.
    pub probabilities: Vec<(usize, f64)>,
}

fn run<S: FaultScorer>(
    columns: &ColumnCache,
    round: Round<'_>,
    config: &TerminatorConfig,
    scorer: &mut S,
) -> Result<(Ordering, Vec<TerminatorStep>), PrioritizeError> {
    let features: Vec<Vec<f64>> = round
        .tests
        .iter()
        .map(|&t| history_features(&columns.bits(t), config.feature_window))
        .collect();
    let mut pending: Vec<usize> = (0..round.tests.len()).collect();
    pending.shuffle(round.rng);

    let mut revealed: Vec<(usize, bool)> = Vec::with_capacity(pending.len());
    let mut faults = 0usize;
    let mut steps = Vec::with_capacity(pending.len());
    while !pending.is_empty() {
        round.check_deadline()?;
        let mut probabilities = Vec::new();
        let (pos, mode) = if faults == 0 {
            (0, SelectionMode::Random)
        } else {
            let mut xs: Vec<&[f64]> = Vec::with_capacity(revealed.len());
            let mut ys: Vec<bool> = Vec::with_capacity(revealed.len());
            for &(slot, failed) in &revealed {
                xs.push(&features[slot]);
                ys.push(failed);
            }
            if faults == revealed.len() {
                let k = faults.min(config.presumed_negatives).min(pending.len());
                for &slot in pending.choose_multiple(round.rng, k) {
                    xs.push(&features[slot]);
                    ys.push(false);
                }
            }
            if ys.iter().any(|&y| !y) {
                scorer.fit(&xs, &ys);
                probabilities = pending
                    .iter()
                    .map(|&slot| (round.tests[slot], scorer.probability(&features[slot])))
                    .collect();
                if faults < config.n1 {
                    (
                        argmin_by(&probabilities, |p| (p - 0.5).abs()),
                        SelectionMode::Uncertainty,
                    )
                } else {
                    (argmin_by(&probabilities, |p| -p), SelectionMode::Certainty)
                }
            } else {
                let norms: Vec<(usize, f64)> = pending
                    .iter()
                    .map(|&slot| (slot, features[slot].iter().map(|v| v.abs()).sum::<f64>()))
                    .collect();
                (argmin_by(&norms, |n| -n), SelectionMode::Fallback)
            }
        };
        let slot = pending.remove(pos);
        let test = round.tests[slot];
        let failed = round.oracle.reveal(test)?;
        steps.push(TerminatorStep {
            test,
            mode,
            failed,
            faults_before: faults,
            probabilities,
        });
        revealed.push((slot, failed));
        if failed {
            faults += 1;
        }
    }
    let order = steps.iter().map(|s| s.test).collect();
    Ok((Ordering::new(order), steps))
}

/// Position of the first minimum of `key` over the second tuple field.
fn argmin_by(values: &[(usize, f64)], key: impl Fn(f64) -> f64) -> usize {
    let mut best = 0;
    let mut best_key = f64::INFINITY;
    for (i, &(_, v)) in values.iter().enumerate() {
        let k = key(v);
        if k < best_key {
            best = i;
            best_key = k;
        }
    }
    best
}

/// One D1 build with the default linear SVM.
pub fn terminator_prioritize(
    round: Round<'_>,
    config: &TerminatorConfig,
) -> Result<(Ordering, Vec<TerminatorStep>), PrioritizeError> {
    let mut scorer = LinearSvm::new(config.svm_c);
    terminator_with_scorer(round, config, &mut scorer)
}

/// One D1 build with a caller-supplied model.
pub fn terminator_with_scorer<S: FaultScorer>(
    round: Round<'_>,
    config: &TerminatorConfig,
    scorer: &mut S,
) -> Result<(Ordering, Vec<TerminatorStep>), PrioritizeError> {
    let mut columns = ColumnCache::default();
    columns.sync(&round.prior);
    run(&columns, round, config, scorer)
}

#[derive(Debug, Clone)]
pub struct Terminator {
    config: TerminatorConfig,
    columns: ColumnCache,
}

impl Terminator {
    pub fn new(config: TerminatorConfig) -> Self {
        Self {
            config,
            columns: ColumnCache::default(),
        }
    }
}

impl Prioritizer for Terminator {
    fn scheme(&self) -> SchemeId {
        SchemeId::D1
    }

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError> {
        self.columns.sync(&round.prior);
        let mut scorer = LinearSvm::new(self.config.svm_c);
        run(&self.columns, round, &self.config, &mut scorer).map(|(o, _)| o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::BuildHistory;
    use crate::prioritizers::{fixtures, ExecutionOracle, HistoryView};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Replays fixed probabilities keyed by feature vector.
    struct Stub(Vec<(Vec<f64>, Vec<f64>)>, usize);

    impl FaultScorer for Stub {
        fn fit(&mut self, _: &[&[f64]], _: &[bool]) {
            self.1 += 1;
        }

        fn probability(&self, features: &[f64]) -> f64 {
            let round = (self.1 - 1).min(self.0[0].1.len() - 1);
            self.0
                .iter()
                .find(|(f, _)| f.as_slice() == features)
                .map_or(0.0, |(_, p)| p[round])
        }
    }

    fn round_for<'a>(
        h: &'a BuildHistory,
        tests: &'a [usize],
        oracle: &'a mut ExecutionOracle,
        rng: &'a mut ChaCha8Rng,
    ) -> Round<'a> {
        Round {
            prior: HistoryView::new(h, h.len() - 1),
            tests,
            oracle,
            rng,
            deadline: None,
        }
    }

    #[test]
    fn features_are_left_padded() {
        assert_eq!(history_features(&[1, 0, 1], 5), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(history_features(&[1, 0, 1, 1], 2), vec![1.0, 1.0]);
        assert_eq!(history_features(&[], 3), vec![0.0; 3]);
    }

    #[test]
    fn no_failures_means_pure_random_order() {
        let h = fixtures::table(&[("a", "x."), ("b", ".."), ("c", "x."), ("d", "..")]);
        let build = h.build(1);
        let tests = build.present_tests();
        let mut oracle = ExecutionOracle::from_build(build);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (order, steps) = terminator_prioritize(
            round_for(&h, &tests, &mut oracle, &mut rng),
            &TerminatorConfig::default(),
        )
        .unwrap();
        assert!(steps.iter().all(|s| s.mode == SelectionMode::Random));
        let mut shuffled: Vec<usize> = (0..tests.len()).collect();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let expected: Vec<usize> = shuffled.into_iter().map(|s| tests[s]).collect();
        assert_eq!(order.as_slice(), expected.as_slice());
    }

    #[test]
    fn example_mode_switch_with_printed_scores() {
        let h = fixtures::example_d1();
        let w = 4;
        let feats = |t: &str| history_features(&h.outcome_vector(t, 4).unwrap(), w);
        // printed probabilities after the first and second retraining
        let stub_table = vec![
            (feats("T1"), vec![0.3, 0.2]),
            (feats("T2"), vec![0.6, 0.6]),
            (feats("T4"), vec![0.8, 0.9]),
            (feats("T3"), vec![1.0, 1.0]),
        ];
        let config = TerminatorConfig {
            feature_window: w,
            ..Default::default()
        };
        let build = h.build(4);
        let tests = build.present_tests();
        let seed = (0..)
            .find(|&s| {
                let mut order: Vec<usize> = (0..4).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
                order[0] == 2
            })
            .unwrap();
        let mut oracle = ExecutionOracle::from_build(build);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stub = Stub(stub_table, 0);
        let (order, steps) =
            terminator_with_scorer(round_for(&h, &tests, &mut oracle, &mut rng), &config, &mut stub).unwrap();
        assert_eq!(order.names(&h), vec!["T3", "T2", "T4", "T1"]);
        let modes: Vec<SelectionMode> = steps.iter().map(|s| s.mode).collect();
        assert_eq!(
            modes,
            vec![
                SelectionMode::Random,
                SelectionMode::Uncertainty,
                SelectionMode::Certainty,
                SelectionMode::Certainty
            ]
        );
    }

    #[test]
    fn mode_switches_after_n1_faults_with_real_model() {
        let h = fixtures::example_d1();
        let build = h.build(4);
        let tests = build.present_tests();
        for seed in 0..16 {
            let mut oracle = ExecutionOracle::from_build(build);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (order, steps) = terminator_prioritize(
                round_for(&h, &tests, &mut oracle, &mut rng),
                &TerminatorConfig::default(),
            )
            .unwrap();
            assert!(order.is_permutation_of(&tests));
            for s in &steps {
                let expected = match s.faults_before {
                    0 => SelectionMode::Random,
                    1 => SelectionMode::Uncertainty,
                    _ => SelectionMode::Certainty,
                };
                assert_eq!(s.mode, expected, "seed {seed}: {steps:?}");
                if s.mode == SelectionMode::Certainty {
                    let best = s.probabilities.iter().map(|p| p.1).fold(f64::MIN, f64::max);
                    let chosen = s.probabilities.iter().find(|p| p.0 == s.test).unwrap().1;
                    assert_eq!(chosen, best);
                }
            }
        }
    }

    #[test]
    fn certainty_picks_highest_probability() {
        let probs = vec![(0, 0.2), (3, 0.9)];
        assert_eq!(argmin_by(&probs, |p| -p), 1);
        assert_eq!(argmin_by(&[(0, 0.45), (1, 0.9), (2, 0.52)], |p| (p - 0.5).abs()), 2);
    }

    #[test]
    fn zero_presumed_negatives_falls_back_to_norm() {
        let h = fixtures::table(&[("a", "xx"), ("b", ".x"), ("c", "xx")]);
        let build = h.build(1);
        let tests = build.present_tests();
        let config = TerminatorConfig {
            presumed_negatives: 0,
            ..Default::default()
        };
        for seed in 0..8 {
            let mut oracle = ExecutionOracle::from_build(build);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, steps) = terminator_prioritize(round_for(&h, &tests, &mut oracle, &mut rng), &config).unwrap();
            assert_eq!(steps[0].mode, SelectionMode::Random);
            for s in &steps[1..] {
                assert_eq!(s.mode, SelectionMode::Fallback);
            }
            // with one fault seen, the remaining test with history goes first
            if steps[0].test == 1 {
                assert_ne!(steps[1].test, 1);
            }
        }
    }
}
