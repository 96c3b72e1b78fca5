//! Reference orderings: uniformly random (A1) and omniscient (A2).

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{Ordering, PrioritizeError, Prioritizer, Round, SchemeId};

pub fn prioritize_random(tests: &[usize], rng: &mut ChaCha8Rng) -> Ordering {
    let mut order = tests.to_vec();
    order.shuffle(rng);
    Ordering::new(order)
}

/// Failing tests first, passing tests after; each group in random order.
/// `ground_truth` holds `(test, failed)` for every test in the build.
pub fn prioritize_optimal(ground_truth: &[(usize, bool)], rng: &mut ChaCha8Rng) -> Ordering {
    let mut cells = ground_truth.to_vec();
    cells.shuffle(rng);
    cells.sort_by_key(|&(_, failed)| !failed);
    Ordering::new(cells.into_iter().map(|(t, _)| t).collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomOrder;

impl Prioritizer for RandomOrder {
    fn scheme(&self) -> SchemeId {
        SchemeId::A1
    }

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError> {
        Ok(prioritize_random(round.tests, round.rng))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Omniscient;

impl Prioritizer for Omniscient {
    fn scheme(&self) -> SchemeId {
        SchemeId::A2
    }

    fn prioritize(&mut self, round: Round<'_>) -> Result<Ordering, PrioritizeError> {
        let mut truth: Vec<Option<bool>> = Vec::new();
        for (t, failed) in round.oracle.ground_truth() {
            if truth.len() <= t {
                truth.resize(t + 1, None);
            }
            truth[t] = Some(failed);
        }
        let in_build: Vec<(usize, bool)> = round
            .tests
            .iter()
            .map(|&t| {
                truth
                    .get(t)
                    .copied()
                    .flatten()
                    .map(|f| (t, f))
                    .ok_or(PrioritizeError::NotInBuild(t))
            })
            .collect::<Result<_, _>>()?;
        Ok(prioritize_optimal(&in_build, round.rng))
    }
}
