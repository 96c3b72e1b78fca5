use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tcpbench_core::history::{parse_matrix, BuildHistory, MatrixFormat, TestOutcome};
use tcpbench_core::metrics::{apfd, apfd_from_ordering};
use tcpbench_core::prioritizers::{make_prioritizer, ExecutionOracle, HistoryView, Round, SchemeId, SchemeParams};
use tcpbench_core::runner::{replay, run_schemes, RunConfig, RunStatus};

fn matrix(rows: &[Vec<u8>]) -> BuildHistory {
    let tests = (0..rows[0].len()).map(|i| format!("t{i}")).collect();
    let mut h = BuildHistory::new("prop", tests).unwrap();
    for (b, row) in rows.iter().enumerate() {
        let cells = row
            .iter()
            .map(|c| match c {
                0 => TestOutcome::Pass,
                1 => TestOutcome::Fail,
                _ => TestOutcome::Absent,
            })
            .collect();
        h.push_build(format!("b{b}"), cells).unwrap();
    }
    h
}

fn outcomes() -> impl Strategy<Value = Vec<Vec<u8>>> {
    (2usize..7, 1usize..8)
        .prop_flat_map(|(tests, builds)| proptest::collection::vec(proptest::collection::vec(0u8..3, tests), builds))
}

fn order(h: &BuildHistory, k: usize, scheme: SchemeId, seed: u64) -> (Vec<usize>, Vec<usize>, ExecutionOracle) {
    let build = h.build(k);
    let tests = build.present_tests();
    let mut oracle = ExecutionOracle::from_build(build);
    let o = make_prioritizer(scheme, &SchemeParams::default())
        .prioritize(Round {
            prior: HistoryView::new(h, k),
            tests: &tests,
            oracle: &mut oracle,
            rng: &mut ChaCha8Rng::seed_from_u64(seed),
            deadline: None,
        })
        .unwrap();
    (o.into_inner(), tests, oracle)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_scheme_emits_a_permutation(rows in outcomes(), seed in any::<u64>()) {
        let h = matrix(&rows);
        for k in 0..h.len() {
            for scheme in SchemeId::ALL {
                let (o, tests, oracle) = order(&h, k, scheme, seed);
                let mut sorted = o.clone();
                sorted.sort_unstable();
                prop_assert_eq!(&sorted, &tests, "{} on build {}", scheme, k);
                if scheme.is_adaptive() {
                    prop_assert_eq!(oracle.reveal_log(), o.as_slice());
                }
                if !scheme.is_omniscient() {
                    prop_assert_eq!(oracle.omniscient_reads(), 0);
                }
            }
        }
    }

    #[test]
    fn stateless_schemes_are_pure(rows in outcomes(), seed in any::<u64>()) {
        let h = matrix(&rows);
        let k = h.len() - 1;
        for scheme in [SchemeId::A1, SchemeId::B1, SchemeId::B2, SchemeId::B3, SchemeId::B4] {
            prop_assert_eq!(order(&h, k, scheme, seed).0, order(&h, k, scheme, seed).0);
        }
    }

    #[test]
    fn moving_a_fault_earlier_raises_apfd(
        n in 2usize..30,
        picks in proptest::collection::btree_set(1usize..30, 1..6),
        which in any::<prop::sample::Index>(),
    ) {
        let ranks: Vec<usize> = picks.into_iter().filter(|&r| r <= n).collect();
        prop_assume!(!ranks.is_empty());
        let i = which.index(ranks.len());
        let free = if i == 0 { ranks[0] > 1 } else { ranks[i] - 1 > ranks[i - 1] };
        prop_assume!(free);
        let mut earlier = ranks.clone();
        earlier[i] -= 1;
        prop_assert!(apfd(n, earlier).unwrap() > apfd(n, ranks).unwrap());
    }

    #[test]
    fn csv_and_jsonl_round_trip(rows in outcomes()) {
        let h = matrix(&rows);
        let csv = h.to_csv_string();
        let back = parse_matrix(csv.as_bytes(), MatrixFormat::Csv).unwrap();
        prop_assert_eq!(back.to_csv_string(), csv);
        let mut jsonl = Vec::new();
        h.write_jsonl(&mut jsonl).unwrap();
        let back = parse_matrix(jsonl.as_slice(), MatrixFormat::Jsonl).unwrap();
        // tests absent everywhere vanish from a JSONL registry
        for (k, b) in back.builds().iter().enumerate() {
            for (t, name) in back.tests().iter().enumerate() {
                let orig = h.test_id(name).unwrap();
                prop_assert_eq!(b.outcome(t), h.build(k).outcome(orig));
            }
        }
    }

    #[test]
    fn useful_filter_is_idempotent(rows in outcomes()) {
        let h = matrix(&rows);
        let once = h.filter_useful_builds();
        prop_assert!(once.builds().iter().all(|b| b.has_failure()));
        prop_assert!(once.builds().iter().enumerate().all(|(i, b)| b.index == i));
        prop_assert_eq!(once.filter_useful_builds().to_csv_string(), once.to_csv_string());
    }
}

#[test]
fn omniscient_dominates_on_small_builds() {
    let h = matrix(&[
        vec![1, 0, 1, 0, 0, 1],
        vec![0, 1, 1, 0, 1, 0],
        vec![1, 1, 0, 0, 0, 1],
        vec![0, 0, 1, 1, 2, 1],
        vec![1, 0, 0, 1, 0, 0],
    ]);
    for k in 0..h.len() {
        let truth: Vec<(usize, bool)> = h
            .build(k)
            .present_tests()
            .into_iter()
            .map(|t| (t, h.build(k).outcome(t).is_fail()))
            .collect();
        let best = apfd_from_ordering(&order(&h, k, SchemeId::A2, 0).0, &truth).unwrap();
        for scheme in SchemeId::ALL {
            for seed in 0..5 {
                let got = apfd_from_ordering(&order(&h, k, scheme, seed).0, &truth).unwrap();
                assert!(got <= best + 1e-12, "{scheme} beat A2 on build {k}");
            }
        }
    }
}

#[test]
fn first_build_replays_from_empty_history() {
    let h = matrix(&[vec![1, 0, 2], vec![0, 1, 1]]);
    for scheme in SchemeId::ALL {
        let run = replay(
            &h,
            scheme,
            &SchemeParams::default(),
            5,
            std::time::Duration::from_secs(30),
        )
        .unwrap();
        assert_eq!(run.status, RunStatus::Completed);
        assert_eq!(run.samples[0].build_index, 0);
    }
}

#[test]
fn a1_mean_matches_uniform_ranks() {
    let h = matrix(&[vec![0, 1, 0, 0, 1, 0, 0, 0, 0, 1]]);
    let truth: Vec<(usize, bool)> = (0..10).map(|t| (t, h.build(0).outcome(t).is_fail())).collect();
    let mean = (0..1000u64)
        .map(|s| apfd_from_ordering(&order(&h, 0, SchemeId::A1, s).0, &truth).unwrap())
        .sum::<f64>()
        / 1000.0;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
}

#[test]
fn scheme_outputs_do_not_depend_on_which_others_run() {
    let h = matrix(&[
        vec![1, 0, 1, 0],
        vec![0, 1, 1, 0],
        vec![1, 1, 0, 1],
        vec![0, 0, 1, 1],
        vec![1, 0, 0, 1],
    ]);
    let all = run_schemes(&h, &RunConfig::default()).unwrap();
    let some = run_schemes(
        &h,
        &RunConfig {
            schemes: vec![SchemeId::D1, SchemeId::B2],
            ..Default::default()
        },
    )
    .unwrap();
    for r in &some {
        let same = all.iter().find(|a| a.scheme == r.scheme).unwrap();
        assert_eq!(r.apfd_values(), same.apfd_values());
    }
}
