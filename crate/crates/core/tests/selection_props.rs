mod common;

use catfed::selection::{
    select_cost, select_performance, select_random, trace_cost, trace_performance, SelectionConfig,
};
use catfed::CategoryMask;
use common::{brute_force_min_cover, oracle_cost, oracle_performance, to_masks};
use proptest::prelude::*;

fn instance(max_clients: usize, max_categories: usize) -> impl Strategy<Value = (Vec<u128>, usize)> {
    (1..=max_categories).prop_flat_map(move |c| {
        let full = if c == 128 { u128::MAX } else { (1u128 << c) - 1 };
        (prop::collection::vec(1..=full, 1..=max_clients), Just(c))
    })
}

fn union(bits: &[u128], selected: &[usize]) -> u128 {
    selected.iter().fold(0, |a, &i| a | bits[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn result_invariants((bits, c) in instance(50, 50), n in 1usize..60) {
        let masks = to_masks(&bits, c);
        let cfg = SelectionConfig::with_limit(c, n);
        for res in [select_performance(&masks, &cfg).unwrap(), select_cost(&masks, &cfg).unwrap()] {
            prop_assert_eq!(res.coverage.bits(), union(&bits, &res.selected));
            let mut ids = res.selected.clone();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), res.count());
            prop_assert!(res.count() <= n.min(c).min(bits.len()));
            let coverable = bits.iter().fold(0, |a, &b| a | b).count_ones() as usize;
            if n >= c && coverable == c {
                prop_assert!(res.coverage.is_full());
            }
        }
    }

    #[test]
    fn cost_picks_always_gain((bits, c) in instance(50, 50), n in 1usize..60) {
        let res = select_cost(&to_masks(&bits, c), &SelectionConfig::with_limit(c, n)).unwrap();
        let mut psi = 0u128;
        for &j in &res.selected {
            prop_assert!(bits[j] & !psi != 0);
            psi |= bits[j];
        }
    }

    #[test]
    fn cost_coverage_monotone_in_n((bits, c) in instance(40, 40)) {
        let masks = to_masks(&bits, c);
        let mut last = 0;
        for n in 1..=c + 2 {
            let covered = select_cost(&masks, &SelectionConfig::with_limit(c, n)).unwrap().coverage.popcount();
            prop_assert!(covered >= last);
            last = covered;
        }
    }

    #[test]
    fn agrees_with_pseudocode((bits, c) in instance(50, 50), n in 1usize..60) {
        let masks = to_masks(&bits, c);
        let cfg = SelectionConfig::with_limit(c, n);
        prop_assert_eq!(select_performance(&masks, &cfg).unwrap().selected, oracle_performance(&bits, c, n));
        prop_assert_eq!(select_cost(&masks, &cfg).unwrap().selected, oracle_cost(&bits, c, n));
    }

    #[test]
    fn cost_never_beats_minimal_cover((bits, c) in instance(12, 10)) {
        let res = select_cost(&to_masks(&bits, c), &SelectionConfig::with_limit(c, c)).unwrap();
        prop_assert!(res.count() >= brute_force_min_cover(&bits));
    }

    #[test]
    fn traces_replay_results((bits, c) in instance(30, 30), n in 1usize..40) {
        let masks = to_masks(&bits, c);
        let cfg = SelectionConfig::with_limit(c, n);
        for (res, trace) in [trace_performance(&masks, &cfg).unwrap(), trace_cost(&masks, &cfg).unwrap()] {
            let steps: Vec<usize> = trace.steps.iter().map(|s| s.client).collect();
            prop_assert_eq!(&steps, &res.selected);
            let mut psi = 0u128;
            for s in &trace.steps {
                psi |= bits[s.client];
                prop_assert_eq!(s.coverage_after.bits(), psi);
            }
        }
    }
}

#[test]
fn random_selection_over_many_seeds() {
    for seed in 0..1000u64 {
        let mut a = common::rng(seed);
        let mut b = common::rng(seed);
        let picked = select_random(100, 10, &mut a).unwrap();
        assert_eq!(picked, select_random(100, 10, &mut b).unwrap());
        let mut ids = picked.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        assert!(ids.iter().all(|&i| i < 100));
    }
}

#[test]
fn popcount_one_masks_need_one_client_each() {
    let masks: Vec<CategoryMask> = (0..30)
        .map(|i| CategoryMask::from_categories([i % 10], 10).unwrap())
        .collect();
    let res = select_cost(&masks, &SelectionConfig::with_limit(10, 10)).unwrap();
    assert_eq!(res.count(), 10);
    assert!(res.coverage.is_full());
    assert_eq!(res.selected, (0..10).collect::<Vec<_>>());
}
