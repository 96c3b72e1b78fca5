//! Test prioritization schemes.
//!
//! Every scheme implements [`Prioritizer`]: given the builds before the
//! current one, the tests present in the current build and a seeded RNG, it
//! returns an [`Ordering`] of exactly those tests. Adaptive schemes (C1, C2,
//! D1) additionally execute tests one at a time through an
//! [`ExecutionOracle`] and react to what they observe; A2 is the only scheme
//! allowed to look at the whole current build up front.

mod baseline;
mod cofailure;
mod flip;
mod history_based;
pub mod svm;
mod terminator;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{BuildHistory, BuildRecord, TestOutcome};

pub use baseline::{prioritize_optimal, prioritize_random, Omniscient, RandomOrder};
pub use cofailure::{
    cofailure_prioritize, conditional_failure_probability, CoFailure, CoFailureConfig, CoFailureRun, CoFailureState,
    CoFailureStep,
};
pub use flip::{flip_correlation_prioritize, simultaneous_flips, FlipCorrelation, FlipMatrix, FlipTrace};
pub use history_based::{
    exp_decay, failure_rate, rocket_score, time_since_last_failure, DecayParams, HistoryMetric, MetricPrioritizer,
    RocketWeights,
};
pub use terminator::{
    history_features, terminator_prioritize, terminator_with_scorer, FaultScorer, SelectionMode, Terminator,
    TerminatorConfig, TerminatorStep,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrioritizeError {
    #[error("deadline exceeded")]
    TimedOut,
    #[error("test {0} was already executed")]
    AlreadyRevealed(usize),
    #[error("test {0} is not part of the current build")]
    NotInBuild(usize),
    #[error("build has no tests")]
    EmptyBuild,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state error: {0}")]
    State(String),
}

/// Identifier of one of the nine schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    A1,
    A2,
    B1,
    B2,
    B3,
    B4,
    C1,
    C2,
    D1,
}

impl SchemeId {
    pub const ALL: [SchemeId; 9] = [
        SchemeId::A1,
        SchemeId::A2,
        SchemeId::B1,
        SchemeId::B2,
        SchemeId::B3,
        SchemeId::B4,
        SchemeId::C1,
        SchemeId::C2,
        SchemeId::D1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::A1 => "A1",
            SchemeId::A2 => "A2",
            SchemeId::B1 => "B1",
            SchemeId::B2 => "B2",
            SchemeId::B3 => "B3",
            SchemeId::B4 => "B4",
            SchemeId::C1 => "C1",
            SchemeId::C2 => "C2",
            SchemeId::D1 => "D1",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SchemeId::A1 => "random order",
            SchemeId::A2 => "omniscient order (failing tests first)",
            SchemeId::B1 => "time since last failure",
            SchemeId::B2 => "failure rate",
            SchemeId::B3 => "exponential decay",
            SchemeId::B4 => "ROCKET recency weights",
            SchemeId::C1 => "co-failure conditional probabilities",
            SchemeId::C2 => "flip correlation",
            SchemeId::D1 => "active learning (uncertainty then certainty sampling)",
        }
    }

    /// Schemes that execute tests through the oracle while ordering.
    pub fn is_adaptive(self) -> bool {
        matches!(self, SchemeId::C1 | SchemeId::C2 | SchemeId::D1)
    }

    /// Schemes whose output depends on state carried from earlier builds.
    pub fn is_stateful(self) -> bool {
        matches!(self, SchemeId::C1)
    }

    /// Schemes that read the current build's ground truth before ordering.
    pub fn is_omniscient(self) -> bool {
        self == SchemeId::A2
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = PrioritizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PrioritizeError::InvalidParameter(format!("unknown scheme {s:?}")))
    }
}

/// Execution order for one build, as registry indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering(Vec<usize>);

impl Ordering {
    pub fn new(order: Vec<usize>) -> Self {
        Self(order)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names<'h>(&self, history: &'h BuildHistory) -> Vec<&'h str> {
        self.0.iter().map(|&t| history.test_name(t)).collect()
    }

    /// True when this is a permutation of exactly `tests`.
    pub fn is_permutation_of(&self, tests: &[usize]) -> bool {
        if self.0.len() != tests.len() {
            return false;
        }
        let mut a = self.0.clone();
        let mut b = tests.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }
}

/// Read-only window onto the builds preceding the build being prioritized.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    history: &'a BuildHistory,
    upto: usize,
}

impl<'a> HistoryView<'a> {
    /// Builds `0..upto` of `history`.
    pub fn new(history: &'a BuildHistory, upto: usize) -> Self {
        assert!(upto <= history.len(), "view beyond end of history");
        Self { history, upto }
    }

    pub fn len(&self) -> usize {
        self.upto
    }

    pub fn is_empty(&self) -> bool {
        self.upto == 0
    }

    pub fn num_tests(&self) -> usize {
        self.history.num_tests()
    }

    pub fn builds(&self) -> &'a [BuildRecord] {
        &self.history.builds()[..self.upto]
    }

    pub fn test_name(&self, test: usize) -> &'a str {
        self.history.test_name(test)
    }

    /// Prior failure indicators of `test`, absent builds skipped.
    pub fn outcome_bits(&self, test: usize) -> Vec<u8> {
        self.history.outcome_bits(test, self.upto)
    }
}

/// Hidden outcomes of the current build, revealed one test at a time.
#[derive(Debug, Clone)]
pub struct ExecutionOracle {
    hidden: Vec<Option<bool>>,
    revealed: Vec<bool>,
    log: Vec<usize>,
    omniscient_reads: usize,
}

impl ExecutionOracle {
    /// `outcomes` lists `(test, failed)` for every test in the build.
    pub fn new(outcomes: impl IntoIterator<Item = (usize, bool)>) -> Self {
        let mut hidden: Vec<Option<bool>> = Vec::new();
        for (t, failed) in outcomes {
            if hidden.len() <= t {
                hidden.resize(t + 1, None);
            }
            hidden[t] = Some(failed);
        }
        let revealed = vec![false; hidden.len()];
        Self {
            hidden,
            revealed,
            log: Vec::new(),
            omniscient_reads: 0,
        }
    }

    pub fn from_build(build: &BuildRecord) -> Self {
        Self::new(
            build
                .outcomes()
                .iter()
                .enumerate()
                .filter(|(_, o)| o.is_present())
                .map(|(t, o)| (t, *o == TestOutcome::Fail)),
        )
    }

    /// Execute `test`, returning whether it failed. Each test runs once.
    pub fn reveal(&mut self, test: usize) -> Result<bool, PrioritizeError> {
        let failed = self
            .hidden
            .get(test)
            .copied()
            .flatten()
            .ok_or(PrioritizeError::NotInBuild(test))?;
        if self.revealed[test] {
            return Err(PrioritizeError::AlreadyRevealed(test));
        }
        self.revealed[test] = true;
        self.log.push(test);
        Ok(failed)
    }

    pub fn is_revealed(&self, test: usize) -> bool {
        self.revealed.get(test).copied().unwrap_or(false)
    }

    pub fn reveal_count(&self) -> usize {
        self.log.len()
    }

    pub fn reveal_log(&self) -> &[usize] {
        &self.log
    }

    /// Full ground truth of the build. Only the omniscient baseline may call
    /// this; reads are counted so replay can verify nothing else did.
    pub fn ground_truth(&mut self) -> Vec<(usize, bool)> {
        self.omniscient_reads += 1;
        self.hidden
            .iter()
            .enumerate()
            .filter_map(|(t, o)| o.map(|f| (t, f)))
            .collect()
    }

    pub fn omniscient_reads(&self) -> usize {
        self.omniscient_reads
    }
}

/// Everything a scheme may consult while ordering one build.
pub struct Round<'a> {
    pub prior: HistoryView<'a>,
    /// Tests present in the current build.
    pub tests: &'a [usize],
    pub oracle: &'a mut ExecutionOracle,
    pub rng: &'a mut ChaCha8Rng,
    pub deadline: Option<Instant>,
}

impl Round<'_> {
    pub fn check_deadline(&self) -> Result<(), PrioritizeError> {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(PrioritizeError::TimedOut),
            _ => Ok(()),
        }
    }
}

/// Uniform contract over the nine schemes.
pub trait Prioritizer: Send {
    fn scheme(&self) -> SchemeId;

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError>;
}

/// Parameters for every scheme; each scheme reads only its own part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SchemeParams {
    pub decay: DecayParams,
    pub rocket: RocketWeights,
    pub cofailure: CoFailureConfig,
    pub terminator: TerminatorConfig,
}

impl SchemeParams {
    pub fn validate(&self) -> Result<(), PrioritizeError> {
        self.decay.validate()?;
        self.rocket.validate()?;
        self.terminator.validate()
    }
}

pub fn make_prioritizer(id: SchemeId, params: &SchemeParams) -> Box<dyn Prioritizer> {
    match id {
        SchemeId::A1 => Box::new(RandomOrder),
        SchemeId::A2 => Box::new(Omniscient),
        SchemeId::B1 => Box::new(MetricPrioritizer::new(HistoryMetric::TimeSinceLastFailure)),
        SchemeId::B2 => Box::new(MetricPrioritizer::new(HistoryMetric::FailureRate)),
        SchemeId::B3 => Box::new(MetricPrioritizer::new(HistoryMetric::ExpDecay(params.decay))),
        SchemeId::B4 => Box::new(MetricPrioritizer::new(HistoryMetric::Rocket(params.rocket))),
        SchemeId::C1 => Box::new(CoFailure::new(params.cofailure.clone())),
        SchemeId::C2 => Box::new(FlipCorrelation::new(params.rocket)),
        SchemeId::D1 => Box::new(Terminator::new(params.terminator.clone())),
    }
}

/// Order `tests` by `key`, breaking ties uniformly at random.
///
/// The tests are shuffled first and then stably sorted, so every ordering
/// of a tied group is equally likely under the seed.
pub(crate) fn rank_by_key(
    tests: &[usize],
    mut key: impl FnMut(usize) -> f64,
    descending: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut order = tests.to_vec();
    order.shuffle(rng);
    let mut keyed: Vec<(f64, usize)> = order.into_iter().map(|t| (key(t), t)).collect();
    if descending {
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    } else {
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Per-test outcome columns over the prior builds, grown incrementally as
/// the view advances. Rebuilt if the view shrinks or the registry changes.
#[derive(Debug, Default, Clone)]
pub(crate) struct ColumnCache {
    cols: Vec<Vec<TestOutcome>>,
    absorbed: usize,
}

impl ColumnCache {
    pub(crate) fn sync(&mut self, view: &HistoryView<'_>) {
        if self.cols.len() != view.num_tests() || self.absorbed > view.len() {
            self.cols = vec![Vec::new(); view.num_tests()];
            self.absorbed = 0;
        }
        for build in &view.builds()[self.absorbed..] {
            for (t, col) in self.cols.iter_mut().enumerate() {
                col.push(build.outcome(t));
            }
        }
        self.absorbed = view.len();
    }

    pub(crate) fn column(&self, test: usize) -> &[TestOutcome] {
        &self.cols[test]
    }

    /// Failure indicators of `test`, absent builds skipped.
    pub(crate) fn bits(&self, test: usize) -> Vec<u8> {
        self.cols[test]
            .iter()
            .filter_map(|o| match o {
                TestOutcome::Fail => Some(1),
                TestOutcome::Pass => Some(0),
                TestOutcome::Absent => None,
            })
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::history::{parse_matrix, BuildHistory, MatrixFormat};

    /// Rows are tests, columns B1..B5; `x` = fail, `.` = pass.
    pub fn table(rows: &[(&str, &str)]) -> BuildHistory {
        let builds = rows[0].1.len();
        let mut csv = String::from("build_id");
        for (name, _) in rows {
            csv.push(',');
            csv.push_str(name);
        }
        csv.push('\n');
        for b in 0..builds {
            csv.push_str(&format!("B{}", b + 1));
            for (_, cells) in rows {
                let c = cells.as_bytes()[b];
                csv.push_str(if c == b'x' { ",fail" } else { ",pass" });
            }
            csv.push('\n');
        }
        parse_matrix(csv.as_bytes(), MatrixFormat::Csv).unwrap()
    }

    pub fn example_a2() -> BuildHistory {
        table(&[("T1", "x..xx"), ("T2", "...x."), ("T3", ".x..x"), ("T4", "xxxx.")])
    }

    pub fn example_b1() -> BuildHistory {
        table(&[("T1", "xx..."), ("T2", "...xx"), ("T3", "..x.."), ("T4", "x..xx")])
    }

    pub fn example_b2() -> BuildHistory {
        table(&[("T1", "x...."), ("T2", ".xxxx"), ("T3", "x.x.."), ("T4", "xxxxx")])
    }

    pub fn example_b3() -> BuildHistory {
        table(&[("T1", "x..xx"), ("T2", "...x."), ("T3", ".xx.."), ("T4", "xxx.x")])
    }

    pub fn example_b4() -> BuildHistory {
        table(&[("T1", ".x..."), ("T2", "xx..."), ("T3", "..xxx"), ("T4", "xxx..")])
    }

    pub fn example_c1() -> BuildHistory {
        table(&[("T1", ".xx.x"), ("T2", "xxx.x"), ("T3", ".x..."), ("T4", "x..x.")])
    }

    pub fn example_c2() -> BuildHistory {
        table(&[("T1", "x..xx"), ("T2", "...x."), ("T3", ".xx.x"), ("T4", "xxx.x")])
    }

    pub fn example_d1() -> BuildHistory {
        table(&[("T1", "...x."), ("T2", ".xx.x"), ("T3", "xxx.x"), ("T4", "xx.xx")])
    }
}
