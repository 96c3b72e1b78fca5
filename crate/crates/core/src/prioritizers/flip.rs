//! Flip-correlation prioritization (C2).
//!
//! A test "flips" at a transition between two consecutive builds when it ran
//! in both and its outcome changed. Two tests are correlated by the number of
//! transitions at which both flipped. The first test is the ROCKET maximum;
//! every later pick is the unexecuted test with the most simultaneous flips
//! with the test executed just before it.

use rand::seq::SliceRandom;

use super::history_based::rocket_score;
use super::{
    rank_by_key, ColumnCache, HistoryView, Ordering, PrioritizeError, Prioritizer, RocketWeights, Round, SchemeId,
};

/// Per pick after the first: `(candidate, flips with previous test)`,
/// sorted by candidate.
pub type FlipTrace = Vec<Vec<(usize, u32)>>;

/// Simultaneous flips of `a` and `b` over `prior`, computed directly.
pub fn simultaneous_flips(prior: &HistoryView<'_>, a: usize, b: usize) -> u32 {
    let builds = prior.builds();
    let flipped = |t: usize, j: usize| {
        let (before, after) = (builds[j - 1].outcome(t), builds[j].outcome(t));
        before.is_present() && after.is_present() && before != after
    };
    (1..builds.len()).filter(|&j| flipped(a, j) && flipped(b, j)).count() as u32
}

/// Symmetric pairwise flip counts, extended one build at a time.
#[derive(Debug, Clone, Default)]
pub struct FlipMatrix {
    n: usize,
    counts: Vec<u32>,
    absorbed: usize,
}

impl FlipMatrix {
    pub fn sync(&mut self, prior: &HistoryView<'_>) {
        let n = prior.num_tests();
        if n != self.n || self.absorbed > prior.len() {
            self.n = n;
            self.counts = vec![0; n * n];
            self.absorbed = 0;
        }
        let builds = prior.builds();
        let mut flipped = Vec::new();
        for j in self.absorbed.max(1)..builds.len() {
            flipped.clear();
            let (prev, cur) = (builds[j - 1].outcomes(), builds[j].outcomes());
            flipped.extend(
                prev.iter()
                    .zip(cur)
                    .enumerate()
                    .filter(|(_, (p, c))| p.is_present() && c.is_present() && p != c)
                    .map(|(t, _)| t),
            );
            for &a in &flipped {
                for &b in &flipped {
                    if a != b {
                        self.counts[a * n + b] += 1;
                    }
                }
            }
        }
        self.absorbed = prior.len();
    }

    pub fn get(&self, a: usize, b: usize) -> u32 {
        self.counts[a * self.n + b]
    }
}

fn run(
    columns: &ColumnCache,
    flips: &FlipMatrix,
    weights: RocketWeights,
    round: Round<'_>,
) -> Result<(Ordering, FlipTrace), PrioritizeError> {
    if round.tests.is_empty() {
        return Ok((Ordering::new(Vec::new()), Vec::new()));
    }
    let by_rocket = rank_by_key(
        round.tests,
        |t| rocket_score(&columns.bits(t), weights),
        true,
        round.rng,
    );
    let first = by_rocket[0];
    let mut pending: Vec<usize> = round.tests.iter().copied().filter(|&t| t != first).collect();
    pending.shuffle(round.rng);

    round.oracle.reveal(first)?;
    let mut order = vec![first];
    let mut trace = Vec::new();
    let mut last = first;
    while !pending.is_empty() {
        round.check_deadline()?;
        let mut counts: Vec<(usize, u32)> = pending.iter().map(|&t| (t, flips.get(last, t))).collect();
        let pos = counts
            .iter()
            .enumerate()
            .fold((0, 0u32, false), |best, (i, &(_, c))| {
                if !best.2 || c > best.1 {
                    (i, c, true)
                } else {
                    best
                }
            })
            .0;
        counts.sort_by_key(|&(t, _)| t);
        trace.push(counts);
        last = pending.remove(pos);
        round.oracle.reveal(last)?;
        order.push(last);
    }
    Ok((Ordering::new(order), trace))
}

/// One C2 build. Also returns, for each pick after the first, the flip
/// counts of every candidate against the previously executed test.
pub fn flip_correlation_prioritize(
    round: Round<'_>,
    weights: RocketWeights,
) -> Result<(Ordering, FlipTrace), PrioritizeError> {
    let mut columns = ColumnCache::default();
    columns.sync(&round.prior);
    let mut flips = FlipMatrix::default();
    flips.sync(&round.prior);
    run(&columns, &flips, weights, round)
}

#[derive(Debug, Clone, Default)]
pub struct FlipCorrelation {
    weights: RocketWeights,
    columns: ColumnCache,
    flips: FlipMatrix,
}

impl FlipCorrelation {
    pub fn new(weights: RocketWeights) -> Self {
        Self {
            weights,
            ..Default::default()
        }
    }
}

impl Prioritizer for FlipCorrelation {
    fn scheme(&self) -> SchemeId {
        SchemeId::C2
    }

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError> {
        self.columns.sync(&round.prior);
        self.flips.sync(&round.prior);
        run(&self.columns, &self.flips, self.weights, round).map(|(o, _)| o)
    }
}
