//! Co-failure prioritization (C1).
//!
//! Each test carries a score across builds. Within a build the highest
//! scoring unexecuted test runs next; whenever an executed test fails, every
//! unexecuted test `t` gains `P(t fails | executed test failed) - 0.5`, the
//! probability being the empirical co-failure frequency over prior builds.
//!
//! Probabilities are recomputed from the prior columns on every update, so
//! one build costs O(failures x tests x history length). This is the cost
//! profile the replay guard for large projects is sized against.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ColumnCache, HistoryView, Ordering, PrioritizeError, Prioritizer, Round, SchemeId};
use crate::history::TestOutcome;

/// Scores carried from one build to the next, keyed by test name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoFailureState {
    pub scores: BTreeMap<String, f64>,
}

impl CoFailureState {
    pub fn score(&self, test: &str) -> f64 {
        self.scores.get(test).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoFailureConfig {
    /// Also update scores after a passing test (off: only failures update).
    pub update_on_pass: bool,
}

/// Scores of the still-unexecuted tests right after one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct CoFailureStep {
    pub executed: usize,
    pub failed: bool,
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoFailureRun {
    pub ordering: Ordering,
    pub state: CoFailureState,
    pub steps: Vec<CoFailureStep>,
}

fn cofail_ratio(finished: &[TestOutcome], other: &[TestOutcome]) -> Option<f64> {
    let mut both = 0usize;
    let mut cofail = 0usize;
    for (f, o) in finished.iter().zip(other) {
        if *f == TestOutcome::Fail && o.is_present() {
            both += 1;
            if *o == TestOutcome::Fail {
                cofail += 1;
            }
        }
    }
    (both > 0).then(|| cofail as f64 / both as f64)
}

/// `P(test fails | finished failed)` over the builds of `prior` where both
/// tests ran and `finished` failed; `None` when there is no such build.
pub fn conditional_failure_probability(prior: &HistoryView<'_>, finished: usize, test: usize) -> Option<f64> {
    let f: Vec<TestOutcome> = prior.builds().iter().map(|b| b.outcome(finished)).collect();
    let t: Vec<TestOutcome> = prior.builds().iter().map(|b| b.outcome(test)).collect();
    cofail_ratio(&f, &t)
}

fn run(
    cache: &ColumnCache,
    round: Round<'_>,
    state: &mut CoFailureState,
    config: &CoFailureConfig,
) -> Result<(Ordering, Vec<CoFailureStep>), PrioritizeError> {
    let names: Vec<&str> = round.tests.iter().map(|&t| round.prior.test_name(t)).collect();
    let mut scores: Vec<f64> = names.iter().map(|n| state.score(n)).collect();
    // slots into round.tests, shuffled so the first maximum found is a
    // uniformly random choice among tied scores
    let mut pending: Vec<usize> = (0..round.tests.len()).collect();
    pending.shuffle(round.rng);

    let mut order = Vec::with_capacity(round.tests.len());
    let mut steps = Vec::with_capacity(round.tests.len());
    while !pending.is_empty() {
        round.check_deadline()?;
        let (pos, _) = pending
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &slot)| {
                if scores[slot] > best.1 {
                    (i, scores[slot])
                } else {
                    best
                }
            });
        let slot = pending.remove(pos);
        let finished = round.tests[slot];
        let failed = round.oracle.reveal(finished)?;
        order.push(finished);

        if failed || config.update_on_pass {
            let fin_col = cache.column(finished);
            for &other in &pending {
                let p = cofail_ratio(fin_col, cache.column(round.tests[other])).unwrap_or(0.5);
                scores[other] += p - 0.5;
            }
        }
        let mut snapshot: Vec<(usize, f64)> = pending.iter().map(|&s| (round.tests[s], scores[s])).collect();
        snapshot.sort_by_key(|&(t, _)| t);
        steps.push(CoFailureStep {
            executed: finished,
            failed,
            scores: snapshot,
        });
    }

    for (name, score) in names.into_iter().zip(scores) {
        state.scores.insert(name.to_string(), score);
    }
    Ok((Ordering::new(order), steps))
}

/// One C1 build: returns the ordering, the updated carried state and the
/// per-execution score trace.
pub fn cofailure_prioritize(
    round: Round<'_>,
    state: CoFailureState,
    config: &CoFailureConfig,
) -> Result<CoFailureRun, PrioritizeError> {
    let mut cache = ColumnCache::default();
    cache.sync(&round.prior);
    let mut state = state;
    let (ordering, steps) = run(&cache, round, &mut state, config)?;
    Ok(CoFailureRun { ordering, state, steps })
}

/// C1 with its score state carried across successive builds.
#[derive(Debug, Clone, Default)]
pub struct CoFailure {
    config: CoFailureConfig,
    state: CoFailureState,
    cache: ColumnCache,
}

impl CoFailure {
    pub fn new(config: CoFailureConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn with_state(config: CoFailureConfig, state: CoFailureState) -> Self {
        Self {
            config,
            state,
            cache: ColumnCache::default(),
        }
    }

    pub fn state(&self) -> &CoFailureState {
        &self.state
    }
}

impl Prioritizer for CoFailure {
    fn scheme(&self) -> SchemeId {
        SchemeId::C1
    }

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError> {
        self.cache.sync(&round.prior);
        // a timed-out build leaves the carried state untouched
        let mut next = self.state.clone();
        let (ordering, _) = run(&self.cache, round, &mut next, &self.config)?;
        self.state = next;
        Ok(ordering)
    }
}
